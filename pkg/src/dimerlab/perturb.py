"""Multipole expansion with remainder control, perturbation energies, and sigma.

The soft-Coulomb two-center coupling expands in powers of 1/r through the
classic Legendre generating function: 1/sqrt((r+s)^2 + a^2) =
sum_m rho^m P_m(-s/rho) / r^(m+1) with rho = sqrt(s^2 + a^2), valid for
rho < r. Charge and dipole-monopole orders cancel identically for neutral
atoms; the surviving leading kernel is -2 z_i z_j / r^3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import eval_legendre

from . import model
from .errors import ConfigError, SolverError, ValidityError
from .model import (AtomSpec, DimerSpec, DiagonalOperator, Grid, GridHamiltonian,
                    LinearOperator, ProjectedOperator, QuantumState, soft_distance,
                    tensor_state)
from .solve import (DEFAULT_OPTIONS, EigenResult, ResolventRequest, SolverOptions,
                    apply_resolvent, assert_nondegenerate, certify_floor,
                    dense_oracle, ground_state)


# ---------------------------------------------------------------------------
# cached atomic structure
# ---------------------------------------------------------------------------

@lru_cache(maxsize=32)
def _one_electron_spectrum(atom: AtomSpec, grid: Grid):
    op = model.atom_hamiltonian(atom, grid)
    res = dense_oracle(op, cap=op.dim)
    return res


def atomic_spectrum(atom: AtomSpec, grid: Grid) -> EigenResult:
    """Full dense spectrum of a one-electron atom (cached per atom and grid)."""
    if atom.electrons != 1:
        raise ConfigError("atomic_spectrum serves one-electron atoms; use ground_state")
    return _one_electron_spectrum(atom, grid)


def atomic_ground(atom: AtomSpec, grid: Grid, *,
                  options: SolverOptions | None = None) -> tuple[float, QuantumState]:
    """Ground energy and state of one model atom; nondegeneracy is enforced."""
    opts = options or DEFAULT_OPTIONS
    if atom.electrons == 0:
        return 0.0, QuantumState(np.ones(1), None, 0, "empty")
    if atom.electrons == 1:
        res = atomic_spectrum(atom, grid)
        assert_nondegenerate(res.values[:2])
        state = res.vectors[0]
        if state.coefficients[np.argmax(np.abs(state.coefficients))] < 0:
            state = QuantumState(-state.coefficients, state.grid, 1, state.sector)
        return res.values[0], state
    op = model.atom_hamiltonian(atom, grid)
    proj = model.antisymmetrizer(atom.electrons, grid)
    res = ground_state(op, projector=proj, tol=opts.lanczos_tol, seed=opts.seed,
                       options=opts)
    return res.values[0], res.vectors[0]


# ---------------------------------------------------------------------------
# multipole expansion
# ---------------------------------------------------------------------------

@dataclass
class MultipoleSeries:
    """Truncated 1/r expansion of the coupling with a sampled remainder bound."""

    order: int
    terms: dict[int, DiagonalOperator]
    remainder_bound: float
    support_radius: float
    separation: float

    def truncation_diagonal(self) -> np.ndarray:
        """Diagonal of sum_k terms[k]/r^k on the tensor grid."""
        total = None
        for k, op in self.terms.items():
            contrib = op.diag / self.separation ** k
            total = contrib if total is None else total + contrib
        return total


def _legendre_coefficient(m: int, s: np.ndarray, a: float) -> np.ndarray:
    rho = np.sqrt(s * s + a * a)
    with np.errstate(invalid="ignore", divide="ignore"):
        x = np.where(rho > 0, -s / np.where(rho > 0, rho, 1.0), 0.0)
    return rho ** m * eval_legendre(m, x)


def _pair_combination(m: int, z1: np.ndarray, z2: np.ndarray, a: float) -> np.ndarray:
    # I = F(0) - F(-z1) - F(z2) + F(z2 - z1) with F(s) = 1/d(r+s)
    c0 = _legendre_coefficient(m, np.zeros(1), a)[0]
    return (c0
            - _legendre_coefficient(m, -z1, a)
            - _legendre_coefficient(m, z2, a)
            + _legendre_coefficient(m, z2 - z1, a))


def multipole_expand(spec: DimerSpec, grid: Grid, order: int, *,
                     support_radius: float | None = None) -> MultipoleSeries:
    """Taylor/Legendre expansion of the full coupling in powers of 1/r.

    Orders 1 and 2 vanish identically (neutrality); order 3 is exactly the
    dipole kernel -2 z_i z_j. The remainder bound is 1.5x the sampled maximum
    of |I - truncation| on a 41x41 lattice over the support box.
    """
    if not 3 <= order <= 6:
        raise ConfigError(f"expansion order must lie in 3..6, got {order}")
    r = spec.separation
    R = support_radius if support_radius is not None else r / 4.0
    if r <= 2.0 * R:
        raise ValidityError(
            f"separation {r} must exceed twice the support radius {R} "
            "for the expansion to converge on the box")
    a = spec.coupling_softening()
    n1, n2, N = spec.atom1.electrons, spec.atom2.electrons, spec.total_electrons
    z = grid.zs()
    shape = (grid.points,) * N

    terms = {}
    for k in range(1, order + 1):
        m = k - 1
        diag = np.zeros(shape)
        for i in range(n1):
            for j in range(n1, N):
                zi = z.reshape([-1 if t == i else 1 for t in range(N)])
                zj = (z - r).reshape([-1 if t == j else 1 for t in range(N)])
                diag = diag + _pair_combination(m, zi, zj, a)
        terms[k] = DiagonalOperator(diag.reshape(-1), description=f"multipole r^-{k}",
                                    grid=grid, n_electrons=N)

    # sampled remainder on the support box (relative coordinates)
    zs = np.linspace(-R, R, 41)
    Z1, Z2 = np.meshgrid(zs, zs, indexing="ij")
    exact = (1.0 / soft_distance(r, a)
             - 1.0 / soft_distance(r - Z1, a)
             - 1.0 / soft_distance(r + Z2, a)
             + 1.0 / soft_distance(r + Z2 - Z1, a))
    approx = np.zeros_like(exact)
    for k in range(1, order + 1):
        approx += _pair_combination(k - 1, Z1, Z2, a) / r ** k
    bound = 1.5 * float(np.max(np.abs(exact - approx)))
    return MultipoleSeries(order, terms, bound, R, r)


# ---------------------------------------------------------------------------
# perturbation energies and sigma
# ---------------------------------------------------------------------------

def first_order(phi_pair: QuantumState, i_op: LinearOperator) -> float:
    """W1 = <phi x phi_r, I phi x phi_r> for the normalized cutoff pair."""
    c = phi_pair.coefficients
    return phi_pair.weight * float(c @ i_op.matvec(c))


def second_order(phi_pair: QuantumState, i_op: LinearOperator,
                 h0: LinearOperator, e_inf: float, *,
                 options: SolverOptions | None = None,
                 floor: float | None = None) -> float:
    """W2 = -<I phi, R_perp I phi> with the pair projection deflated from H0."""
    opts = options or DEFAULT_OPTIONS
    w = phi_pair.weight
    phi = phi_pair.coefficients

    def p0perp(x):
        return x - phi * (w * float(phi @ x))

    projected = ProjectedOperator(h0, p0perp, description="P0' H0 P0'")
    rhs = p0perp(i_op.matvec(phi))
    v = apply_resolvent(ResolventRequest(projected, e_inf, rhs, opts.cg_tol,
                                         floor=floor, gap_min=opts.gap_min))
    return -w * float(rhs @ v)


@dataclass
class SigmaResult:
    sigma: float
    method: str
    diagnostics: dict = field(default_factory=dict)


def c6_resolvent(spec: DimerSpec, grid: Grid, *,
                 options: SolverOptions | None = None) -> SigmaResult:
    """sigma = <f Psi, (H12_perp - E1 - E2)^-1 f Psi> on the centered pair.

    The pair Hamiltonian is r-independent (both atoms at the origin) and the
    ground product is deflated before the resolvent solve.
    """
    opts = options or DEFAULT_OPTIONS
    e1, g1 = atomic_ground(spec.atom1, grid, options=opts)
    e2, g2 = atomic_ground(spec.atom2, grid, options=opts)
    pair = model.dimer_h0(spec, grid, center2=0.0)
    f = model.dipole_operator(spec, grid, center2=0.0)
    psi = tensor_state(g1, g2)
    w = psi.weight
    coeff = psi.coefficients

    def p0perp(x):
        return x - coeff * (w * float(coeff @ x))

    projected = ProjectedOperator(pair, p0perp, description="P0' H12 P0'")
    floor = certify_floor(projected, seed=opts.seed, options=opts)
    rhs = p0perp(f.matvec(coeff))
    v = apply_resolvent(ResolventRequest(projected, e1 + e2, rhs, opts.cg_tol,
                                         floor=floor, gap_min=opts.gap_min))
    sigma = w * float(rhs @ v)
    if sigma <= 0:
        raise ValidityError(f"sigma must be positive, got {sigma}")
    return SigmaResult(sigma, "resolvent",
                       {"gap_floor": floor - (e1 + e2), "rhs_norm": math.sqrt(w) * float(np.linalg.norm(rhs))})


def c6_sum_over_states(eig1: EigenResult, eig2: EigenResult, nmax: int) -> SigmaResult:
    """London-style spectral sum over excited product states.

    Uses the tensor structure f = -2 z (x) z so matrix elements factorize into
    one-atom dipole elements; even-parity states drop out exactly and are
    skipped.
    """
    if nmax < 1:
        raise ConfigError("nmax must be >= 1")
    if nmax > len(eig1.values) or nmax > len(eig2.values):
        raise ConfigError(f"nmax={nmax} exceeds available eigendata "
                          f"({len(eig1.values)}, {len(eig2.values)})")

    def dipole_elements(eig):
        g = eig.vectors[0]
        z = g.grid.zs()
        zg = z * g.coefficients
        w = g.weight
        return np.array([w * float(eig.vectors[m].coefficients @ zg)
                         for m in range(nmax)])

    d1 = dipole_elements(eig1)
    d2 = dipole_elements(eig2)
    de1 = np.array(eig1.values[:nmax]) - eig1.values[0]
    de2 = np.array(eig2.values[:nmax]) - eig2.values[0]
    sigma = 0.0
    skip = 0
    for m in range(1, nmax):
        if abs(d1[m]) < 1e-14:
            skip += 1
            continue
        for n in range(1, nmax):
            if abs(d2[n]) < 1e-14:
                continue
            sigma += 4.0 * (d1[m] * d2[n]) ** 2 / (de1[m] + de2[n])
    z1 = eig1.vectors[0]
    total1 = z1.weight * float((z1.grid.zs() * z1.coefficients) @ (z1.grid.zs() * z1.coefficients))
    coverage = float(np.sum(d1[1:] ** 2) / total1) if total1 > 0 else 1.0
    return SigmaResult(sigma, "sum_over_states",
                       {"nmax": nmax, "skipped_even": skip, "coverage": coverage})


# ---------------------------------------------------------------------------
# 3D Newton's-theorem check
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RadialDensity:
    """Spherically symmetric density profile truncated at rmax (unit charge)."""

    profile: object  # callable rho(s) before normalization
    rmax: float

    @classmethod
    def hydrogenic(cls, Z: float = 1.0, rmax: float = 8.0) -> "RadialDensity":
        # |psi_1s|^2 with kinetic -Laplacian: psi ~ exp(-Z rho / 2)
        return cls(lambda s: np.exp(-Z * s), rmax)

    @classmethod
    def point_charge(cls) -> "RadialDensity":
        return cls(None, 0.0)


def _adaptive_simpson(f, a, b, tol, depth=48):
    """Recursive adaptive Simpson quadrature with Richardson correction."""
    def simpson(fa, fm, fb, h):
        return h / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, m - a)
        right = simpson(fm, frm, fb, b - m)
        delta = left + right - whole
        if depth <= 0 or abs(delta) <= 15.0 * tol:
            return left + right + delta / 15.0
        return (recurse(a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + recurse(m, b, fm, frm, fb, right, tol / 2.0, depth - 1))

    if a == b:
        return 0.0
    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    whole = simpson(fa, fm, fb, b - a)
    return recurse(a, b, fa, fm, fb, whole, tol, depth)


class _ShellPotential:
    """Potential of a normalized spherical density via the shell formula."""

    def __init__(self, density: RadialDensity, tol: float):
        self.density = density
        self.tol = tol
        if density.rmax == 0.0:
            self.norm = 1.0
            self.total = 1.0
            return
        raw = _adaptive_simpson(lambda s: density.profile(s) * s * s,
                                0.0, density.rmax, tol)
        self.norm = 1.0 / (4.0 * math.pi * raw)
        self.total = 4.0 * math.pi * _adaptive_simpson(
            lambda t: self.rho(t) * t * t, 0.0, density.rmax, tol)

    def rho(self, s):
        return self.norm * self.density.profile(s)

    def charge_inside(self, s):
        if s >= self.density.rmax:
            return self.total
        return 4.0 * math.pi * _adaptive_simpson(
            lambda t: self.rho(t) * t * t, 0.0, s, self.tol)

    def __call__(self, s):
        # V(s) = Q(<s)/s + int_s^rmax rho(t)/t * 4 pi t^2 dt
        if self.density.rmax == 0.0:
            return 1.0 / s
        if s >= self.density.rmax:
            return self.total / s
        inner = self.charge_inside(s) / s
        outer = 4.0 * math.pi * _adaptive_simpson(
            lambda t: self.rho(t) * t, s, self.density.rmax, self.tol)
        return inner + outer


def newton_check(density1: RadialDensity, density2: RadialDensity, r: float, *,
                 tol: float = 1e-10) -> float:
    """|int int rho1(x) rho2(y) I(x, y) dx dy| for disjoint spherical densities.

    Newton's theorem forces the four Coulomb terms to cancel; the returned
    residual is pure quadrature error and must sit at the quadrature tolerance.
    """
    if density1.rmax + density2.rmax >= r:
        raise ValidityError(
            f"densities overlap: rmax1 + rmax2 = {density1.rmax + density2.rmax} >= r = {r}")
    v1 = _ShellPotential(density1, tol)
    v2 = _ShellPotential(density2, tol)
    # nucleus-nucleus analogue between two unit charges
    term_nn = 1.0 / r
    # charge 1 seen from the second center and vice versa
    term_1 = v1(r)
    term_2 = v2(r)
    # electron-electron: angular average reduces to int V2(u) u du / (2 r s)
    if density1.rmax == 0.0:
        term_ee = v2(r)
    elif density2.rmax == 0.0:
        term_ee = v1(r)
    else:
        def outer_integrand(s):
            if s == 0.0:
                return 0.0
            angular = _adaptive_simpson(lambda u: v2(u) * u, r - s, r + s, tol)
            return v1.rho(s) * s * s * angular / (2.0 * r * s)

        term_ee = 4.0 * math.pi * _adaptive_simpson(
            outer_integrand, 0.0, density1.rmax, tol)
    return abs(term_nn - term_1 - term_2 + term_ee)
