"""Cutoff constructions, rank-one projection, Feshbach map and fixed point.

The ground-state problem reduces to the scalar equation
E = <psi, H psi> - A(E) on the range of the rank-one projection onto the
antisymmetrized trial vector; the fixed point is an exact identity for the
discrete operator whenever the projected complement stays gapped above E.
Smooth radial cutoffs anchored at r0 keep the trial state and its exchange
images on disjoint supports, so exchange terms vanish exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import model
from .errors import ConfigError, SolverError, ValidityError
from .model import (COUPLING_DECOUPLED, COUPLING_FULL, DimerSpec, Grid,
                    LinearOperator, ProjectedOperator, QuantumState, tensor_state,
                    translate_state)
from .perturb import atomic_ground
from .solve import (DEFAULT_OPTIONS, ResolventRequest, SolverOptions,
                    apply_resolvent, dense_oracle, ground_state, _lanczos_extreme)

_MASS_LOSS_LIMIT = 1e-3


# ---------------------------------------------------------------------------
# cutoffs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CutoffConfig:
    """Radii of the smooth cutoffs anchored at the reference separation r0.

    The single-atom bump is 1 inside inner_frac*r0 and supported in
    outer_frac*r0. The wide cutoff chi repeats the construction dilated by
    inner_frac/outer_frac, so chi is identically 1 on the support of the
    cutoff pair state.
    """

    r0: float
    inner_frac: float = 1.0 / 7.0
    outer_frac: float = 1.0 / 6.0

    def __post_init__(self):
        if not 0 < self.inner_frac < self.outer_frac:
            raise ConfigError(
                f"need 0 < inner_frac < outer_frac, got {self.inner_frac}, {self.outer_frac}")
        if self.r0 <= 0:
            raise ConfigError("r0 must be positive")

    @property
    def dilation(self) -> float:
        return self.inner_frac / self.outer_frac

    @property
    def phi_inner(self) -> float:
        return self.inner_frac * self.r0

    @property
    def phi_outer(self) -> float:
        return self.outer_frac * self.r0

    @property
    def chi_inner(self) -> float:
        return self.phi_outer

    @property
    def chi_outer(self) -> float:
        return self.phi_outer / self.dilation

    @classmethod
    def from_separation(cls, r: float, grid: Grid, inner_frac=1.0 / 7.0,
                        outer_frac=1.0 / 6.0) -> "CutoffConfig":
        """Anchor r0 = floor-to-grid of r - 0.5 (window convention)."""
        h = grid.spacing
        r0 = math.floor((r - 0.5) / h) * h
        if r0 <= 0:
            raise ValidityError(f"separation {r} leaves no room for a cutoff anchor")
        return cls(r0, inner_frac, outer_frac)


def _smoothstep(t):
    # exp(-1/t) glue: 0 for t<=0, 1 for t>=1, C-infinity in between
    t = np.clip(t, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        g1 = np.where(t > 0, np.exp(-1.0 / np.maximum(t, 1e-300)), 0.0)
        g2 = np.where(t < 1, np.exp(-1.0 / np.maximum(1.0 - t, 1e-300)), 0.0)
    return g1 / (g1 + g2)


def bump(config: CutoffConfig):
    """Radial profile: 1 inside phi_inner, 0 outside phi_outer, smooth between."""
    s_in, s_out = config.phi_inner, config.phi_outer

    def profile(s):
        s = np.abs(np.asarray(s, dtype=float))
        return _smoothstep((s_out - s) / (s_out - s_in))

    return profile


def _radial_profile(s, s_in, s_out):
    return _smoothstep((s_out - np.abs(s)) / (s_out - s_in))


def cutoff_ground_state(atom_state: QuantumState, config: CutoffConfig) -> QuantumState:
    """phi_j = c_j prod_i chi1(x_i / r0) zeta_j, renormalized.

    Errors when the cutoff removes more than 1e-3 of the squared norm: the
    anchor r0 is then too small for the atomic decay length.
    """
    grid = atom_state.grid
    z = grid.zs()
    mask1d = _radial_profile(z, config.phi_inner, config.phi_outer)
    N = atom_state.n_electrons
    V = atom_state.coefficients.reshape((grid.points,) * N).copy()
    for axis in range(N):
        V = V * mask1d.reshape([-1 if k == axis else 1 for k in range(N)])
    cut = QuantumState(V.reshape(-1), grid, N, atom_state.sector)
    kept = cut.norm ** 2 / atom_state.norm ** 2
    loss = 1.0 - kept
    if loss > _MASS_LOSS_LIMIT:
        raise ValidityError(
            f"cutoff at r0={config.r0} removes {loss:.3e} of the state's mass "
            f"(> {_MASS_LOSS_LIMIT}); r0 is too small for the decay length")
    out = cut.normalized()
    out.meta["mass_loss"] = loss
    out.meta["support_radius"] = config.phi_outer
    return out


def _roll_axis(vec: np.ndarray, steps: int) -> np.ndarray:
    """Zero-fill shift of a one-particle vector (no mass-loss guard; seeds only)."""
    out = np.zeros_like(vec)
    if steps == 0:
        out[:] = vec
    elif steps > 0:
        out[steps:] = vec[:-steps]
    else:
        out[:steps] = vec[-steps:]
    return out


def _excited_product_seed(spec: DimerSpec, grid: Grid):
    """One-atom-excited product, the approximate bottom of the projected complement.

    Cheap warm start for the gap-floor Lanczos runs; None when either atom has
    more than one electron (random start then).
    """
    if spec.atom1.electrons != 1 or spec.atom2.electrons != 1:
        return None
    from .perturb import atomic_spectrum
    sp1 = atomic_spectrum(spec.atom1, grid)
    sp2 = atomic_spectrum(spec.atom2, grid)
    steps = int(round(spec.separation / grid.spacing))
    g1 = sp1.vectors[0].coefficients
    e1 = sp1.vectors[1].coefficients
    g2 = _roll_axis(sp2.vectors[0].coefficients, steps)
    e2 = _roll_axis(sp2.vectors[1].coefficients, steps)
    return (np.outer(g1, e2) + np.outer(e1, g2)).reshape(-1)


def chi_diagonal(spec: DimerSpec, grid: Grid, config: CutoffConfig) -> np.ndarray:
    """Wide cutoff chi on the tensor grid: dilated bumps around both nuclei."""
    n1, N = spec.atom1.electrons, spec.total_electrons
    z = grid.zs()
    r = spec.separation
    m1 = _radial_profile(z, config.chi_inner, config.chi_outer)
    m2 = _radial_profile(z - r, config.chi_inner, config.chi_outer)
    diag = np.ones((grid.points,) * N)
    for i in range(n1):
        diag = diag * m1.reshape([-1 if k == i else 1 for k in range(N)])
    for j in range(n1, N):
        diag = diag * m2.reshape([-1 if k == j else 1 for k in range(N)])
    return diag.reshape(-1)


# ---------------------------------------------------------------------------
# assembled pipeline state
# ---------------------------------------------------------------------------

@dataclass
class FeshbachReport:
    r: float
    E: float
    E_direct: float
    A: float
    gap: float
    iterations: int
    psi_overlap: float
    meta: dict = field(default_factory=dict)


class _Setup:
    """Everything solve_fixed_point and friends need at one separation."""

    def __init__(self, spec: DimerSpec, grid: Grid, config: CutoffConfig | None,
                 options: SolverOptions | None):
        self.opts = options or DEFAULT_OPTIONS
        self.spec = spec
        self.grid = grid
        r = spec.separation
        if not grid.is_commensurate(r):
            raise ConfigError(
                f"separation {r} is not a multiple of the grid spacing "
                f"{grid.spacing}; nucleus placement snaps to the grid")
        self.config = config or CutoffConfig.from_separation(r, grid)
        self.w = grid.spacing ** spec.total_electrons

        e1, zeta1 = atomic_ground(spec.atom1, grid, options=self.opts)
        e2, zeta2 = atomic_ground(spec.atom2, grid, options=self.opts)
        self.e_inf = e1 + e2
        self.e1, self.e2 = e1, e2
        self.phi1 = cutoff_ground_state(zeta1, self.config)
        phi2 = cutoff_ground_state(zeta2, self.config)
        self.phi2r = translate_state(phi2, r)
        self.pair = tensor_state(self.phi1, self.phi2r)

        self.H = model.dimer_hamiltonian(spec, grid)
        self.H0 = model.dimer_h0(spec, grid)
        self.i_diag = model.interaction_diagonal(spec, grid)
        self.Q = model.sector_projector(spec, grid)
        self.chi = chi_diagonal(spec, grid, self.config)
        self._check_geometry()

        self._build_trial()
        self._dress()

    # -- geometry guards ----------------------------------------------------
    def _check_geometry(self):
        r = self.spec.separation
        cfg = self.config
        h = self.grid.spacing
        L = self.grid.extent
        if r + cfg.phi_outer > L:
            raise ValidityError(
                f"pair-state support r + {cfg.phi_outer:.3f} exceeds the grid extent {L}")
        if self.Q is not None:
            # outermost grid site the chi-support actually occupies; one empty
            # site between the two supports kills exchange terms exactly (the
            # kinetic stencil hops a single site)
            occupied = math.floor((cfg.chi_outer - 1e-12) / h) * h
            gap = r - 2.0 * occupied
            if gap < 2.0 * h - 1e-9:
                raise ValidityError(
                    f"chi supports of the two atoms are not exchange-disjoint: "
                    f"site gap {gap:.3f} < 2h; shrink the cutoff fractions or increase r")

    def _excitation_seed(self):
        return _excited_product_seed(self.spec, self.grid)

    # -- trial state ---------------------------------------------------------
    def _build_trial(self):
        w = self.w
        phi_v = self.pair.coefficients

        def p0perp(x):
            return x - phi_v * (w * float(phi_v @ x))

        self.p0perp = p0perp
        projected_h0 = ProjectedOperator(self.H0, p0perp, description="P0' H0 P0'")
        theta0, _, res0, _, _ = _lanczos_extreme(
            projected_h0, p0perp, self.opts.floor_tol, self.opts.seed,
            self._excitation_seed(), self.opts.max_lanczos_basis, self.opts.max_restarts)
        self.h0_floor = theta0 - res0
        i_phi = self.i_diag * phi_v
        rhs = p0perp(i_phi)
        if np.linalg.norm(rhs) == 0.0:
            corr = np.zeros_like(phi_v)
            self.W2 = 0.0
        else:
            corr = apply_resolvent(ResolventRequest(
                projected_h0, self.e_inf, rhs, self.opts.cg_tol,
                floor=self.h0_floor, gap_min=self.opts.gap_min))
            self.W2 = -w * float(rhs @ corr)
        self.W1 = w * float(phi_v @ i_phi)
        u = self.chi * corr
        psi0 = phi_v - u
        self.norm0_sq = w * float(psi0 @ psi0)
        self.correction_norm = math.sqrt(w) * float(np.linalg.norm(u))
        self.psi = psi0 / math.sqrt(self.norm0_sq)

    # -- antisymmetrization and the projected complement ---------------------
    def _dress(self):
        w = self.w
        if self.Q is not None:
            qpsi = self.Q.matvec(self.psi)
            qn2 = w * float(qpsi @ qpsi)
            if qn2 < 1e-12:
                raise ValidityError("antisymmetrized trial state vanishes")
            self.qhat = qpsi / math.sqrt(qn2)
            self.q_norm_sq = qn2
        else:
            self.qhat = self.psi
            self.q_norm_sq = 1.0
        qhat = self.qhat

        def pperp(x):
            return x - qhat * (w * float(qhat @ x))

        def full_perp(x):
            y = self.Q.matvec(x) if self.Q is not None else x
            return pperp(y)

        self.pperp = pperp
        self.full_perp = full_perp
        self.h_perp = ProjectedOperator(self.H, full_perp, description="P' H^a P'")
        h_qhat = self.H.matvec(qhat)
        self.psi_h_psi = w * float(qhat @ h_qhat)
        self.b = full_perp(h_qhat)
        theta, _, res, _, _ = _lanczos_extreme(
            self.h_perp, full_perp, self.opts.floor_tol, self.opts.seed,
            self._excitation_seed(), self.opts.max_lanczos_basis, self.opts.max_restarts)
        self.perp_lowest = theta
        self.perp_floor = theta - res

    # -- the scalar Feshbach pieces ------------------------------------------
    def nonlinear_term(self, energy: float) -> float:
        if np.linalg.norm(self.b) == 0.0:
            return 0.0
        v = apply_resolvent(ResolventRequest(
            self.h_perp, energy, self.b, self.opts.cg_tol,
            floor=self.perp_floor, gap_min=self.opts.gap_min))
        return self.w * float(self.b @ v)

    def solve(self) -> tuple[float, float, int]:
        """Fixed point of E = <psi,H psi> - A(E), bisection-safeguarded."""
        tol = self.opts.fixed_point_tol
        E = self.psi_h_psi
        hi = self.psi_h_psi  # Imp(hi) = A(hi) >= 0
        lo = None
        A = 0.0
        for it in range(1, 60):
            A = self.nonlinear_term(E)
            imp = E - self.psi_h_psi + A
            if abs(imp) <= tol * max(1.0, abs(E)):
                return E, A, it
            if imp > 0:
                hi = min(hi, E)
            else:
                lo = E if lo is None else max(lo, E)
            E_next = self.psi_h_psi - A
            if lo is not None and not (lo < E_next < hi):
                E_next = 0.5 * (lo + hi)
            E = E_next
        raise SolverError(f"fixed point did not converge: |Imp| = {abs(imp):.3e}")

    # -- direct reference ----------------------------------------------------
    def direct_ground(self) -> tuple[float, np.ndarray]:
        opts = self.opts
        H = self.H
        if self.Q is None:
            if H.dim <= opts.dense_cap:
                res = dense_oracle(H, cap=opts.dense_cap)
                return res.values[0], res.vectors[0].coefficients
            res = ground_state(H, tol=opts.lanczos_tol, seed=opts.seed,
                               initial=self.pair.coefficients, options=opts)
            return res.values[0], res.vectors[0].coefficients
        if H.dim <= opts.dense_cap and self.spec.total_electrons == 2:
            return _dense_antisym_ground(H, self.grid)
        res = ground_state(H, projector=self.Q.matvec, tol=opts.lanczos_tol,
                           seed=opts.seed, initial=self.Q.matvec(self.pair.coefficients),
                           options=opts)
        return res.values[0], res.vectors[0].coefficients


def _dense_antisym_ground(H: LinearOperator, grid: Grid) -> tuple[float, np.ndarray]:
    """Dense lowest eigenpair of the two-electron antisymmetric sector."""
    n = grid.points
    D = H.to_dense()
    ii, jj = np.triu_indices(n, k=1)
    rows = ii * n + jj
    cols_direct = rows
    cols_swapped = jj * n + ii
    reduced = D[np.ix_(rows, cols_direct)] - D[np.ix_(rows, cols_swapped)]
    vals, vecs = np.linalg.eigh(reduced)
    v = vecs[:, 0]
    full = np.zeros(n * n)
    full[rows] = v / math.sqrt(2.0)
    full[cols_swapped] = -v / math.sqrt(2.0)
    # weight-normalize to match QuantumState convention
    w = grid.spacing ** 2
    full /= math.sqrt(w * float(full @ full))
    return float(vals[0]), full


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def trial_state(phi1: QuantumState, phi2: QuantumState, spec: DimerSpec,
                grid: Grid, config: CutoffConfig, *,
                options: SolverOptions | None = None) -> QuantumState:
    """Normalized trial vector psi = (pair - chi R I pair)/norm at separation r.

    The resolvent correction is deflated against the pair state, so the two
    summands are exactly orthogonal; in decoupled mode psi is the pair itself.
    """
    opts = options or DEFAULT_OPTIONS
    r = spec.separation
    phi2r = translate_state(phi2, r)
    pair = tensor_state(phi1, phi2r)
    w = pair.weight
    phi_v = pair.coefficients

    def p0perp(x):
        return x - phi_v * (w * float(phi_v @ x))

    h0 = model.dimer_h0(spec, grid)
    i_diag = model.interaction_diagonal(spec, grid)
    rhs = p0perp(i_diag * phi_v)
    if np.linalg.norm(rhs) == 0.0:
        out = pair.copy()
        out.meta.update({"norm0_sq": 1.0, "correction_norm": 0.0})
        return out
    projected = ProjectedOperator(h0, p0perp)
    e1, _ = atomic_ground(spec.atom1, grid, options=opts)
    e2, _ = atomic_ground(spec.atom2, grid, options=opts)
    corr = apply_resolvent(ResolventRequest(projected, e1 + e2, rhs, opts.cg_tol,
                                            gap_min=opts.gap_min))
    u = chi_diagonal(spec, grid, config) * corr
    psi0 = phi_v - u
    norm0_sq = w * float(psi0 @ psi0)
    out = QuantumState(psi0 / math.sqrt(norm0_sq), grid, pair.n_electrons, pair.sector)
    out.meta.update({"norm0_sq": norm0_sq,
                     "correction_norm": math.sqrt(w) * float(np.linalg.norm(u))})
    return out


def feshbach_value(P: LinearOperator, H: LinearOperator, H_perp: LinearOperator,
                   lam: float, *, options: SolverOptions | None = None) -> float:
    """F_P(lam) on a rank-one range: <psi,H psi> - <P'H psi,(H_perp-lam)^-1 P'H psi>."""
    opts = options or DEFAULT_OPTIONS
    rng = np.random.default_rng(opts.seed)
    grid = getattr(H, "grid", None)
    n_el = getattr(H, "n_electrons", None) or 1
    w = grid.spacing ** n_el if grid is not None else 1.0
    psi = None
    for _ in range(8):
        cand = P.matvec(rng.standard_normal(P.dim))
        nrm = math.sqrt(w * float(cand @ cand))
        if nrm > 1e-10:
            psi = cand / nrm
            break
    if psi is None:
        raise ValidityError("projection P has (numerically) empty range")
    h_psi = H.matvec(psi)
    value = w * float(psi @ h_psi)
    b = h_psi - P.matvec(h_psi)
    projector = getattr(H_perp, "projector", None)
    if projector is not None:
        b = projector(b)
    if np.linalg.norm(b) == 0.0:
        return value
    v = apply_resolvent(ResolventRequest(H_perp, lam, b, opts.cg_tol,
                                         gap_min=opts.gap_min))
    return value - w * float(b @ v)


def solve_fixed_point(spec: DimerSpec, grid: Grid, config: CutoffConfig | None = None,
                      *, options: SolverOptions | None = None,
                      want_direct: bool = True) -> FeshbachReport:
    """Solve Imp(r, E) = E - <psi,H psi> + A(r, E) = 0 and report diagnostics."""
    setup = _Setup(spec, grid, config, options)
    E, A, iterations = setup.solve()
    gap = setup.perp_lowest - E
    if want_direct:
        e_direct, v_direct = setup.direct_ground()
        overlap = (setup.w * float(setup.qhat @ v_direct)) ** 2
    else:
        e_direct, overlap = float("nan"), float("nan")
    report = FeshbachReport(
        r=spec.separation, E=E, E_direct=e_direct, A=A, gap=gap,
        iterations=iterations, psi_overlap=overlap,
        meta={
            "W1": setup.W1, "W2": setup.W2,
            "psi_h_psi": setup.psi_h_psi,
            "e_inf": setup.e_inf, "e1": setup.e1, "e2": setup.e2,
            "norm0_sq": setup.norm0_sq,
            "correction_norm": setup.correction_norm,
            "q_norm_sq": setup.q_norm_sq,
            "r0": setup.config.r0,
            "mass_loss": setup.phi1.meta.get("mass_loss"),
        })
    return report


def stability_gap(spec: DimerSpec, grid: Grid, config: CutoffConfig | None = None,
                  *, options: SolverOptions | None = None) -> float:
    """C = lambda_min(P' H^a P' on the sector) - E(r), from the direct energy.

    A non-positive value is returned (not raised): it flags that r sits below
    the validity region of the Feshbach construction.
    """
    setup = _Setup(spec, grid, config, options)
    e_direct, _ = setup.direct_ground()
    return setup.perp_lowest - e_direct


@dataclass
class WitnessRow:
    r: float
    D: float
    E: float
    margin: float  # D - E


def monotonicity_witness(spec: DimerSpec, s: float, r_list, grid: Grid, *,
                         inner_frac: float = 1.0 / 7.0, outer_frac: float = 1.0 / 6.0,
                         options: SolverOptions | None = None) -> list[WitnessRow]:
    """D(r) = <Psi_r, H_r Psi_r> - N(r) with the resolvent frozen at E(s).

    Psi_r is the translate of the s-anchored trial state; for r >= s the
    frozen-resolvent energy dominates the true fixed point rowwise, and its
    strict increase witnesses the strict increase of E(r).
    """
    opts = options or DEFAULT_OPTIONS
    spec_s = spec.at_separation(s)
    config_s = CutoffConfig.from_separation(s, grid, inner_frac, outer_frac)
    setup_s = _Setup(spec_s, grid, config_s, opts)
    E_s, _, _ = setup_s.solve()
    psi_s = QuantumState(setup_s.psi, grid, spec.total_electrons)
    n1 = spec.atom1.electrons
    atom2_axes = list(range(n1, spec.total_electrons))
    w = setup_s.w

    rows = []
    for r in sorted(r_list):
        if not grid.is_commensurate(r - s):
            raise ConfigError(f"r - s = {r - s} is not a multiple of the grid spacing")
        shifted = translate_state(psi_s, r - s, atom2_axes)
        spec_r = spec.at_separation(r)
        H_r = model.dimer_hamiltonian(spec_r, grid)
        Q_r = model.sector_projector(spec_r, grid)
        vec = Q_r.matvec(shifted.coefficients) if Q_r is not None else shifted.coefficients
        nrm = math.sqrt(w * float(vec @ vec))
        if nrm < 1e-8:
            raise ValidityError(f"translated witness state vanishes at r={r}")
        qhat = vec / nrm

        def pperp(x, _q=qhat):
            return x - _q * (w * float(_q @ x))

        def full_perp(x, _Q=Q_r, _pp=pperp):
            y = _Q.matvec(x) if _Q is not None else x
            return _pp(y)

        h_perp = ProjectedOperator(H_r, full_perp)
        h_qhat = H_r.matvec(qhat)
        quad = w * float(qhat @ h_qhat)
        b = full_perp(h_qhat)
        theta, _, res, _, _ = _lanczos_extreme(
            h_perp, full_perp, opts.floor_tol, opts.seed,
            _excited_product_seed(spec_r, grid),
            opts.max_lanczos_basis, opts.max_restarts)
        v = apply_resolvent(ResolventRequest(h_perp, E_s, b, opts.cg_tol,
                                             floor=theta - res, gap_min=opts.gap_min))
        D = quad - w * float(b @ v)
        config_r = CutoffConfig.from_separation(r, grid, inner_frac, outer_frac)
        report_r = solve_fixed_point(spec_r, grid, config_r, options=opts,
                                     want_direct=False)
        rows.append(WitnessRow(r=r, D=D, E=report_r.E, margin=D - report_r.E))
    return rows
