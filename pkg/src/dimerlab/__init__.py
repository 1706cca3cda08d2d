"""dimerlab: desk-scale numerics for the long-range two-atom interaction energy.

A single shared 1D soft-Coulomb grid hosts both model atoms; the package
reduces the ground-state problem through a rank-one Feshbach map, extracts
the r^-6 dispersion tail and its first two derivative laws, and verifies the
3D Newton cancellation by radial quadrature.
"""

from .errors import ConfigError, DimerlabError, SolverError, ValidityError
from .model import (AtomSpec, DimerSpec, Grid, LinearOperator, QuantumState,
                    antisymmetrizer, atom_hamiltonian, build_grid,
                    dimer_hamiltonian, dipole_operator, interaction_operator,
                    ion_hamiltonian, translate_state)
from .solve import (EigenResult, ResolventRequest, SolverOptions, apply_resolvent,
                    dense_oracle, ground_state, lowest_k)
from .perturb import (MultipoleSeries, RadialDensity, SigmaResult, c6_resolvent,
                      c6_sum_over_states, first_order, multipole_expand,
                      newton_check, second_order)
from .feshbach import (CutoffConfig, FeshbachReport, bump, cutoff_ground_state,
                       feshbach_value, monotonicity_witness, solve_fixed_point,
                       stability_gap, trial_state)
from .curves import (DecayFit, FitResult, ScanRow, ScanTable, decay_rate,
                     derivatives, dissociation_check, fit_power_law,
                     hellmann_feynman, lj_fit, scan)

__version__ = "0.1.0"
