"""r-sweeps of the interaction energy, derivative laws, fits and checks."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import model
from .errors import ConfigError, SolverError, ValidityError
from .feshbach import CutoffConfig, solve_fixed_point
from .model import AtomSpec, DimerSpec, Grid, QuantumState
from .perturb import atomic_ground
from .solve import DEFAULT_OPTIONS, SolverOptions, ground_state


@dataclass
class ScanRow:
    r: float
    E: float = math.nan
    W: float = math.nan
    W1: float = math.nan
    W2: float = math.nan
    A: float = math.nan
    gap: float = math.nan
    valid: bool = False
    error: str = ""
    E_direct: float = math.nan
    psi_overlap: float = math.nan
    dW: float | None = None
    d2W: float | None = None
    dW_err: float | None = None
    d2W_err: float | None = None


@dataclass
class ScanTable:
    rows: list[ScanRow]
    e_inf: float
    provenance: str = ""
    units: str = "hbar = 1, electron mass 1/2 (kinetic term -Laplacian)"

    def rs(self) -> np.ndarray:
        return np.array([row.r for row in self.rows])

    def column(self, name: str) -> np.ndarray:
        vals = [getattr(row, name) for row in self.rows]
        return np.array([math.nan if v is None else v for v in vals], dtype=float)

    def valid_mask(self) -> np.ndarray:
        return np.array([row.valid for row in self.rows])

    def check(self, tol: float = 1e-12):
        """Checksum: W must equal E - E(inf) on every valid row."""
        for row in self.rows:
            if row.valid and abs(row.W - (row.E - self.e_inf)) > tol * max(1.0, abs(row.E)):
                raise ValidityError(f"row r={row.r}: W != E - E_inf")
        # strictly increasing r, no duplicates
        rs = self.rs()
        if np.any(np.diff(rs) <= 0):
            raise ValidityError("scan rows must be strictly increasing in r")


def snap_r_list(r_values, grid: Grid) -> list[float]:
    """Snap separations to grid multiples, de-duplicate, sort."""
    snapped = sorted({round(grid.snap(r), 12) for r in r_values})
    return [float(r) for r in snapped]


def scan(spec: DimerSpec, r_values, grid: Grid, *,
         inner_frac: float = 1.0 / 7.0, outer_frac: float = 1.0 / 6.0,
         options: SolverOptions | None = None, want_direct: bool = False,
         threads: int = 1, provenance: str = "") -> ScanTable:
    """One Feshbach fixed-point solve per separation; failures mark rows invalid."""
    opts = options or DEFAULT_OPTIONS
    e1, _ = atomic_ground(spec.atom1, grid, options=opts)
    e2, _ = atomic_ground(spec.atom2, grid, options=opts)
    e_inf = e1 + e2
    r_list = snap_r_list(r_values, grid)

    def run_row(r: float) -> ScanRow:
        row = ScanRow(r=r)
        try:
            cfg = CutoffConfig.from_separation(r, grid, inner_frac, outer_frac)
            rep = solve_fixed_point(spec.at_separation(r), grid, cfg,
                                    options=opts, want_direct=want_direct)
            row.E = rep.E
            row.W = rep.E - e_inf
            row.W1 = rep.meta["W1"]
            row.W2 = rep.meta["W2"]
            row.A = rep.A
            row.gap = rep.gap
            row.E_direct = rep.E_direct
            row.psi_overlap = rep.psi_overlap
            row.valid = True
        except (ValidityError, SolverError, ConfigError) as exc:
            row.error = str(exc)
        return row

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run_row, r_list))
    else:
        rows = [run_row(r) for r in r_list]
    table = ScanTable(rows, e_inf, provenance)
    table.check()
    return table


def derivatives(table: ScanTable) -> ScanTable:
    """5-point central W' and W'' with step-doubling error estimates.

    Rows whose stencil reaches an invalid or missing neighbor keep None; the
    error columns compare the h and 2h stencils (both 4th order, so the
    difference is 15x the h-stencil truncation error).
    """
    rows = [ScanRow(**vars(r)) for r in table.rows]
    rs = table.rs()
    if len(rows) >= 2:
        steps = np.diff(rs)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
            raise ConfigError("derivatives need a uniformly spaced scan")
    if len(rows) < 5:
        raise ConfigError("derivatives need at least 5 rows")
    step = rs[1] - rs[0]
    W = table.column("W")
    ok = table.valid_mask()

    def stencil_ok(i, half):
        lo, hi = i - half, i + half
        return lo >= 0 and hi < len(rows) and ok[lo:hi + 1].all()

    for i in range(len(rows)):
        if stencil_ok(i, 2):
            rows[i].dW = float((-W[i + 2] + 8 * W[i + 1] - 8 * W[i - 1] + W[i - 2])
                               / (12 * step))
            rows[i].d2W = float((-W[i + 2] + 16 * W[i + 1] - 30 * W[i]
                                 + 16 * W[i - 1] - W[i - 2]) / (12 * step ** 2))
        if stencil_ok(i, 4):
            d1_2h = (-W[i + 4] + 8 * W[i + 2] - 8 * W[i - 2] + W[i - 4]) / (24 * step)
            d2_2h = (-W[i + 4] + 16 * W[i + 2] - 30 * W[i]
                     + 16 * W[i - 2] - W[i - 4]) / (48 * step ** 2)
            rows[i].dW_err = abs(rows[i].dW - d1_2h) / 15.0
            rows[i].d2W_err = abs(rows[i].d2W - d2_2h) / 15.0
    return ScanTable(rows, table.e_inf, table.provenance, table.units)


def hellmann_feynman(spec: DimerSpec, state: QuantumState, grid: Grid, *,
                     residual_tol: float = 1e-6) -> float:
    """W'(r) = <psi, (dH/dr) psi> for an (exact) ground state at separation r."""
    H = model.dimer_hamiltonian(spec, grid)
    v = state.coefficients
    w = state.weight
    nrm2 = w * float(v @ v)
    hv = H.matvec(v)
    energy = w * float(v @ hv) / nrm2
    resid = math.sqrt(w) * float(np.linalg.norm(hv - energy * v)) / math.sqrt(nrm2)
    if resid > residual_tol * max(1.0, abs(energy)):
        raise ValidityError(
            f"state is not an eigenstate: residual {resid:.3e} too large for a "
            "Hellmann-Feynman derivative")
    dh = model.hamiltonian_r_derivative(spec, grid)
    return w * float(v @ dh.matvec(v)) / nrm2


@dataclass
class FitResult:
    exponent: float
    coefficient: float
    window: tuple[float, float]
    rms_residual: float
    n_points: int


def fit_power_law(table: ScanTable, column: str, window: tuple[float, float]) -> FitResult:
    """Least-squares line on (log r, log |column|) over the window."""
    lo, hi = window
    rs, vals = [], []
    for row in table.rows:
        v = getattr(row, column)
        if not row.valid or v is None or math.isnan(v):
            continue
        if lo <= row.r <= hi:
            rs.append(row.r)
            vals.append(v)
    if len(rs) < 5:
        raise ConfigError(f"fit window [{lo}, {hi}] holds {len(rs)} points, need >= 5")
    vals = np.array(vals)
    if not (np.all(vals > 0) or np.all(vals < 0)):
        raise ConfigError(f"column {column} changes sign inside the fit window")
    x = np.log(np.array(rs))
    y = np.log(np.abs(vals))
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    return FitResult(float(slope), float(np.exp(intercept)), (lo, hi),
                     float(np.sqrt(np.mean(resid ** 2))), len(rs))


class LJFit(NamedTuple):
    c12: float
    c6: float
    rms_residual: float


def lj_fit(table: ScanTable, window: tuple[float, float] | None = None) -> LJFit:
    """Least squares of W against (r^-12, r^-6): W ~ c12 r^-12 - c6 r^-6."""
    rs, Ws = [], []
    for row in table.rows:
        if not row.valid or math.isnan(row.W):
            continue
        if window is not None and not (window[0] <= row.r <= window[1]):
            continue
        rs.append(row.r)
        Ws.append(row.W)
    if len(rs) < 2:
        raise ConfigError("lj_fit needs at least two valid rows")
    rs = np.array(rs)
    design = np.column_stack([rs ** -12.0, rs ** -6.0])
    cond = np.linalg.cond(design)
    if cond > 1e14:
        raise SolverError(f"Lennard-Jones design matrix is ill-conditioned (cond {cond:.2e})")
    coef, res, *_ = np.linalg.lstsq(design, np.array(Ws), rcond=None)
    fitted = design @ coef
    rms = float(np.sqrt(np.mean((fitted - np.array(Ws)) ** 2)))
    return LJFit(float(coef[0]), float(-coef[1]), rms)


@dataclass
class IonRow:
    m: int
    e1: float = math.nan
    e2: float = math.nan
    total: float = math.nan
    valid: bool = False
    error: str = ""


@dataclass
class DissociationTable:
    rows: list[IonRow]
    strict_minimum_at_zero: bool


def _ion_ground(atom: AtomSpec, charge: int, grid: Grid, opts: SolverOptions) -> float:
    op = model.ion_hamiltonian(atom, charge, grid)
    electrons = atom.electrons - charge
    if electrons == 0:
        return 0.0
    projector = model.antisymmetrizer(electrons, grid) if electrons >= 2 else None
    res = ground_state(op, projector=projector, tol=opts.lanczos_tol,
                       seed=opts.seed, options=opts)
    return res.values[0]


def dissociation_check(atom1: AtomSpec, atom2: AtomSpec, grid: Grid, *,
                       options: SolverOptions | None = None) -> DissociationTable:
    """Tabulate E_{1,m} + E_{2,-m} over charge splittings; flag the neutral split.

    The strict-minimum flag certifies that the dissociation limit is attained
    solely at m = 0 (fermionic statistics applied within each ion).
    """
    opts = options or DEFAULT_OPTIONS
    rows = []
    for m in range(-atom2.electrons, atom1.electrons + 1):
        row = IonRow(m=m)
        try:
            row.e1 = _ion_ground(atom1, m, grid, opts)
            row.e2 = _ion_ground(atom2, -m, grid, opts)
            row.total = row.e1 + row.e2
            row.valid = True
        except (ValidityError, SolverError, ConfigError) as exc:
            row.error = str(exc)
        rows.append(row)
    neutral = next((r for r in rows if r.m == 0), None)
    strict = bool(neutral is not None and neutral.valid and all(
        r.total > neutral.total + 1e-9 for r in rows if r.valid and r.m != 0))
    return DissociationTable(rows, strict)


class DecayFit(NamedTuple):
    rate: float
    r_squared: float
    n_points: int


def decay_rate(state: QuantumState, *, window: tuple[float, float] = (0.5, 0.9),
               floor: float = 1e-13) -> DecayFit:
    """Slope of log|phi| vs |z| on the tail region above the noise floor.

    Radial states store u = rho * psi; the physical amplitude psi = u/rho is
    what decays exponentially, so the rho prefactor is divided out first.
    """
    if state.n_electrons != 1:
        raise ConfigError("decay_rate expects a one-electron state")
    grid = state.grid
    if state.sector == "radial":
        x = grid.radial_coordinates()
        amp = np.abs(state.coefficients) / x
    else:
        x = grid.zs()
        amp = np.abs(state.coefficients)
    L = grid.extent
    mask = (np.abs(x) >= window[0] * L) & (np.abs(x) <= window[1] * L) & (amp > floor)
    if mask.sum() < 5:
        raise ValidityError(
            f"tail region holds {int(mask.sum())} usable points (floor {floor:g})")
    xa = np.abs(x[mask])
    ya = np.log(amp[mask])
    slope, intercept = np.polyfit(xa, ya, 1)
    fitted = slope * xa + intercept
    ss_res = float(np.sum((ya - fitted) ** 2))
    ss_tot = float(np.sum((ya - ya.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return DecayFit(float(slope), r2, int(mask.sum()))
