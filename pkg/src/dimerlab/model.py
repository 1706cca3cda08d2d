"""Grids, model Hamiltonians, interaction/dipole operators and symmetry projectors.

Units: hbar = 1, electron mass 1/2 (kinetic term is -Laplacian), charge -1.
The one-dimensional dimer uses soft-Coulomb kernels 1/sqrt(u^2 + a^2) on a
single shared grid [-L, L]; atom 1 sits at 0 and atom 2 at the separation r.
A 3D radial one-electron mode (-d^2/drho^2 - Z/rho on the l=0 sector) is kept
for literal point-charge/shell checks.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, ValidityError

MODE_1D = "1d-soft-coulomb"
MODE_3D_RADIAL = "3d-radial-one-electron"

COUPLING_FULL = "full"
COUPLING_DIPOLE = "dipole_truncated"
COUPLING_DECOUPLED = "decoupled"

#: refuse tensor spaces larger than this unless the caller raises the cap
DEFAULT_DIMENSION_CAP = 8_000_000

_MIN_POINTS = 8
_MAX_ANTISYM_ELECTRONS = 4


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Grid:
    """Uniform symmetric grid for one particle coordinate on [-extent, extent]."""

    extent: float
    points: int

    @property
    def spacing(self) -> float:
        return 2.0 * self.extent / (self.points - 1)

    def zs(self) -> np.ndarray:
        """Grid coordinates, symmetric about 0 and containing both endpoints."""
        return np.linspace(-self.extent, self.extent, self.points)

    def radial_coordinates(self) -> np.ndarray:
        """Positive half grid rho = h, 2h, ..., used by the 3D radial mode."""
        m = (self.points - 1) // 2
        return self.spacing * np.arange(1, m + 1)

    def snap(self, x: float) -> float:
        """Nearest grid-commensurate value (integer multiple of the spacing)."""
        return round(x / self.spacing) * self.spacing

    def is_commensurate(self, x: float, tol: float = 1e-9) -> bool:
        return abs(x - self.snap(x)) <= tol * max(1.0, abs(x))


def build_grid(extent: float, points: int) -> Grid:
    """Validated grid constructor; spacing is 2*extent/(points-1)."""
    if extent <= 0:
        raise ConfigError(f"grid extent must be positive, got {extent}")
    if points < _MIN_POINTS:
        raise ConfigError(f"grid needs at least {_MIN_POINTS} points, got {points}")
    return Grid(float(extent), int(points))


@dataclass(frozen=True)
class AtomSpec:
    """Physical parameters of one model atom (nuclear charge Z, N electrons)."""

    Z: float
    electrons: int = 1
    softening: float = 1.0
    dimension_mode: str = MODE_1D

    def __post_init__(self):
        if self.electrons < 0:
            raise ConfigError("electron count must be >= 0")
        if self.softening <= 0:
            raise ConfigError("softening length must be positive")
        if self.dimension_mode not in (MODE_1D, MODE_3D_RADIAL):
            raise ConfigError(f"unknown dimension_mode {self.dimension_mode!r}")
        if self.dimension_mode == MODE_3D_RADIAL and self.electrons != 1:
            raise ConfigError("3D radial mode supports exactly one electron")


@dataclass(frozen=True)
class DimerSpec:
    """Two-center system: atoms, coupling mode, and internuclear distance r."""

    atom1: AtomSpec
    atom2: AtomSpec
    coupling_mode: str = COUPLING_FULL
    separation: float = 20.0

    def __post_init__(self):
        if self.coupling_mode not in (COUPLING_FULL, COUPLING_DIPOLE, COUPLING_DECOUPLED):
            raise ConfigError(f"unknown coupling_mode {self.coupling_mode!r}")
        if self.separation <= 0:
            raise ConfigError("separation must be positive")
        for atom in (self.atom1, self.atom2):
            if atom.dimension_mode != MODE_1D:
                raise ConfigError("dimer construction requires 1D soft-Coulomb atoms")

    @property
    def total_electrons(self) -> int:
        return self.atom1.electrons + self.atom2.electrons

    def at_separation(self, r: float) -> "DimerSpec":
        return DimerSpec(self.atom1, self.atom2, self.coupling_mode, r)

    def coupling_softening(self) -> float:
        # single regularization length: both atoms must share it
        a1, a2 = self.atom1.softening, self.atom2.softening
        if abs(a1 - a2) > 1e-12:
            raise ConfigError("coupling requires a common softening length")
        return a1


class LinearOperator:
    """Matrix-free self-adjoint operator with a matvec contract.

    Closed under sum, real scaling, projection conjugation and tensor
    placement. Subclasses implement ``matvec``; ``grid``/``n_electrons`` are
    optional metadata used to wrap eigenvectors back into QuantumStates.
    """

    def __init__(self, dim, self_adjoint=True, description="", grid=None, n_electrons=None):
        self.dim = int(dim)
        self.self_adjoint = bool(self_adjoint)
        self.description = description
        self.grid = grid
        self.n_electrons = n_electrons

    def matvec(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __add__(self, other):
        if not isinstance(other, LinearOperator):
            return NotImplemented
        if other.dim != self.dim:
            raise ConfigError(f"dimension mismatch: {self.dim} vs {other.dim}")
        return SumOperator(self, other)

    def __rmul__(self, scalar):
        return ScaledOperator(float(scalar), self)

    __mul__ = None  # scalars multiply from the left only

    def to_dense(self) -> np.ndarray:
        """Materialize by column matvecs; subclasses override with cheaper paths."""
        out = np.empty((self.dim, self.dim))
        e = np.zeros(self.dim)
        for j in range(self.dim):
            e[j] = 1.0
            out[:, j] = self.matvec(e)
            e[j] = 0.0
        return out


class MatrixOperator(LinearOperator):
    def __init__(self, matrix, description="", grid=None, n_electrons=None, self_adjoint=True):
        self.matrix = matrix
        super().__init__(matrix.shape[0], self_adjoint, description, grid, n_electrons)

    def matvec(self, v):
        return self.matrix @ v

    def to_dense(self):
        if sp.issparse(self.matrix):
            return self.matrix.toarray()
        return np.asarray(self.matrix)


class DiagonalOperator(LinearOperator):
    def __init__(self, diag, description="", grid=None, n_electrons=None):
        self.diag = np.asarray(diag, dtype=float)
        super().__init__(self.diag.size, True, description, grid, n_electrons)

    def matvec(self, v):
        return self.diag * v

    def to_dense(self):
        return np.diag(self.diag)


class ZeroOperator(LinearOperator):
    def __init__(self, dim, description="zero", grid=None, n_electrons=None):
        super().__init__(dim, True, description, grid, n_electrons)

    def matvec(self, v):
        return np.zeros_like(v)

    def to_dense(self):
        return np.zeros((self.dim, self.dim))


class GridHamiltonian(LinearOperator):
    """N-electron operator: shared 1D kinetic stencil per axis plus a diagonal."""

    def __init__(self, grid, n_electrons, diag, description=""):
        n = grid.points
        super().__init__(n ** n_electrons, True, description, grid, n_electrons)
        self.kin1d = _kinetic_1d(grid)
        self.diag = np.asarray(diag, dtype=float)
        self._shape = (n,) * n_electrons

    def matvec(self, v):
        out = self.diag * v
        V = v.reshape(self._shape)
        for axis in range(self.n_electrons):
            M = np.moveaxis(V, axis, 0).reshape(self._shape[axis], -1)
            K = self.kin1d @ M
            # all axes share the grid size, so the symmetric shape is safe here
            out += np.moveaxis(K.reshape(self._shape), 0, axis).reshape(-1)
        return out

    def to_dense(self):
        return self.to_sparse().toarray()

    def to_sparse(self):
        n = self.grid.points
        eye = sp.identity(n, format="csr")
        total = sp.diags(self.diag)
        for axis in range(self.n_electrons):
            factors = [eye] * self.n_electrons
            factors[axis] = self.kin1d
            term = factors[0]
            for f in factors[1:]:
                term = sp.kron(term, f, format="csr")
            total = total + term
        return total.tocsr()


class SumOperator(LinearOperator):
    def __init__(self, a, b):
        super().__init__(a.dim, a.self_adjoint and b.self_adjoint,
                         f"({a.description} + {b.description})",
                         a.grid or b.grid, a.n_electrons or b.n_electrons)
        self.terms = (a, b)

    def matvec(self, v):
        return self.terms[0].matvec(v) + self.terms[1].matvec(v)

    def to_dense(self):
        return self.terms[0].to_dense() + self.terms[1].to_dense()


class ScaledOperator(LinearOperator):
    def __init__(self, scalar, op):
        super().__init__(op.dim, op.self_adjoint, f"{scalar}*{op.description}",
                         op.grid, op.n_electrons)
        self.scalar = scalar
        self.op = op

    def matvec(self, v):
        return self.scalar * self.op.matvec(v)

    def to_dense(self):
        return self.scalar * self.op.to_dense()


class ProjectedOperator(LinearOperator):
    """P A P for an orthogonal projection P; exposes the projector for solvers."""

    def __init__(self, op, projector, description=""):
        super().__init__(op.dim, op.self_adjoint, description or f"P({op.description})P",
                         op.grid, op.n_electrons)
        self.op = op
        self.projector = projector

    def matvec(self, v):
        return self.projector(self.op.matvec(self.projector(v)))


class Antisymmetrizer(LinearOperator):
    """Q = (1/N!) sum_pi sign(pi) T_pi on the N-fold tensor grid.

    With ``groups`` the sum runs over the product of the per-group symmetric
    groups (intra-atom statistics only); the default is the full group.
    """

    def __init__(self, grid, n_electrons, groups=None):
        n = grid.points
        super().__init__(n ** n_electrons, True, f"antisymmetrizer(N={n_electrons})",
                         grid, n_electrons)
        self._shape = (n,) * n_electrons
        if groups is None:
            perms = itertools.permutations(range(n_electrons))
            self._perms = [(p, _permutation_sign(p)) for p in perms]
        else:
            self._perms = []
            group_perms = [list(itertools.permutations(g)) for g in groups]
            for combo in itertools.product(*group_perms):
                perm = list(range(n_electrons))
                for g, gp in zip(groups, combo):
                    for slot, src in zip(g, gp):
                        perm[slot] = src
                perm = tuple(perm)
                self._perms.append((perm, _permutation_sign(perm)))

    def matvec(self, v):
        V = v.reshape(self._shape)
        out = np.zeros_like(V)
        for perm, sign in self._perms:
            out += sign * np.transpose(V, perm)
        return (out / len(self._perms)).reshape(-1)


def _permutation_sign(perm):
    sign = 1
    seen = [False] * len(perm)
    for i in range(len(perm)):
        if seen[i]:
            continue
        j, length = i, 0
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


@dataclass
class QuantumState:
    """Normalized vector on the tensor-product grid with symmetry metadata.

    Coefficients are stored as real arrays (all model operators are real
    symmetric, so eigenvectors can be chosen real); inner products carry the
    quadrature weight h^N.
    """

    coefficients: np.ndarray
    grid: Grid | None
    n_electrons: int = 1
    sector: str = "product"
    meta: dict = field(default_factory=dict)

    @property
    def weight(self) -> float:
        if self.grid is None:
            return 1.0
        return self.grid.spacing ** self.n_electrons

    @property
    def norm(self) -> float:
        return math.sqrt(self.weight * float(self.coefficients @ self.coefficients))

    def normalized(self) -> "QuantumState":
        nrm = self.norm
        if nrm == 0:
            raise ValidityError("cannot normalize the zero state")
        return QuantumState(self.coefficients / nrm, self.grid, self.n_electrons,
                            self.sector, dict(self.meta))

    def inner(self, other: "QuantumState") -> float:
        return self.weight * float(self.coefficients @ other.coefficients)

    def copy(self) -> "QuantumState":
        return QuantumState(self.coefficients.copy(), self.grid, self.n_electrons,
                            self.sector, dict(self.meta))


def tensor_state(a: QuantumState, b: QuantumState, sector="product") -> QuantumState:
    """Tensor product a (first axes) x b (last axes) on the shared grid."""
    if a.grid != b.grid:
        raise ConfigError("tensor product requires a shared grid")
    coeff = np.outer(a.coefficients, b.coefficients).reshape(-1)
    return QuantumState(coeff, a.grid, a.n_electrons + b.n_electrons, sector)


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

def soft_distance(u, a):
    """Regularized distance sqrt(u^2 + a^2)."""
    return np.sqrt(u * u + a * a)


@lru_cache(maxsize=64)
def _kinetic_cached(extent, points):
    h = 2.0 * extent / (points - 1)
    main = np.full(points, 2.0 / h ** 2)
    off = np.full(points - 1, -1.0 / h ** 2)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr")


def _kinetic_1d(grid: Grid):
    # -d^2/dz^2 by 2nd-order central differences, Dirichlet walls at +-L
    return _kinetic_cached(grid.extent, grid.points)


def _check_dimension(grid, n_electrons, cap):
    dim = grid.points ** n_electrons
    if dim > cap:
        raise ConfigError(
            f"tensor dimension {dim} exceeds the cap {cap}; shrink the grid "
            f"(n={grid.points}, N={n_electrons}) or raise max_dimension")
    return dim


# ---------------------------------------------------------------------------
# operator builders
# ---------------------------------------------------------------------------

def atom_hamiltonian(spec: AtomSpec, grid: Grid, *, center: float = 0.0,
                     max_dimension: int = DEFAULT_DIMENSION_CAP) -> LinearOperator:
    """Model atom: sum_i(-Lap_i - Z/d(z_i - center)) + sum_{k<l} 1/d(z_k - z_l).

    In 3D radial mode returns the exact l=0 operator -d^2/drho^2 - Z/rho on
    the positive half grid (Dirichlet at 0 and at the outer wall).
    """
    if spec.dimension_mode == MODE_3D_RADIAL:
        rho = grid.radial_coordinates()
        m = rho.size
        h = grid.spacing
        main = np.full(m, 2.0 / h ** 2) - spec.Z / rho
        off = np.full(m - 1, -1.0 / h ** 2)
        H = sp.diags([off, main, off], [-1, 0, 1], format="csr")
        op = MatrixOperator(H, description=f"radial atom Z={spec.Z}", grid=grid, n_electrons=1)
        op.state_sector = "radial"
        return op

    N = spec.electrons
    if N == 0:
        return ZeroOperator(1, description="empty atom", grid=None, n_electrons=0)
    _check_dimension(grid, N, max_dimension)
    z = grid.zs()
    v1 = -spec.Z / soft_distance(z - center, spec.softening)
    shape = (grid.points,) * N
    diag = np.zeros(shape)
    for i in range(N):
        diag += v1.reshape([-1 if k == i else 1 for k in range(N)])
    for k, l in itertools.combinations(range(N), 2):
        zk = z.reshape([-1 if t == k else 1 for t in range(N)])
        zl = z.reshape([-1 if t == l else 1 for t in range(N)])
        diag = diag + 1.0 / soft_distance(zk - zl, spec.softening)
    return GridHamiltonian(grid, N, diag.reshape(-1),
                           description=f"atom Z={spec.Z} N={N} a={spec.softening}")


def ion_hamiltonian(spec: AtomSpec, charge: int, grid: Grid, *,
                    max_dimension: int = DEFAULT_DIMENSION_CAP) -> LinearOperator:
    """Ion with total charge m: same nuclear charge, N - m electrons."""
    remaining = spec.electrons - charge
    if remaining < 0:
        raise ConfigError(f"charge m={charge} exceeds electron count {spec.electrons}")
    if remaining == 0:
        # bare nucleus: trivial one-dimensional space with energy 0
        return ZeroOperator(1, description="bare nucleus", grid=None, n_electrons=0)
    ion = AtomSpec(spec.Z, remaining, spec.softening, spec.dimension_mode)
    return atom_hamiltonian(ion, grid, max_dimension=max_dimension)


def _electron_split(spec: DimerSpec):
    n1, n2 = spec.atom1.electrons, spec.atom2.electrons
    return n1, n2, n1 + n2


def _axis_view(z, axis, N):
    return z.reshape([-1 if k == axis else 1 for k in range(N)])


def interaction_diagonal(spec: DimerSpec, grid: Grid) -> np.ndarray:
    """Diagonal of the coupling I on the (N1+N2)-electron tensor grid."""
    n1, n2, N = _electron_split(spec)
    z = grid.zs()
    r = spec.separation
    a = spec.coupling_softening()
    shape = (grid.points,) * N
    if spec.coupling_mode == COUPLING_DECOUPLED:
        return np.zeros(shape).reshape(-1)
    if spec.coupling_mode == COUPLING_DIPOLE:
        diag = np.zeros(shape)
        for i in range(n1):
            for j in range(n1, N):
                zi = _axis_view(z, i, N)
                zj = _axis_view(z - r, j, N)
                diag = diag + (-2.0) * zi * zj / r ** 3
        return diag.reshape(-1)
    # full soft-Coulomb coupling, lab coordinates
    diag = np.zeros(shape)
    const = 1.0 / soft_distance(r, a)
    for i in range(n1):
        for j in range(n1, N):
            xi = _axis_view(z, i, N)
            xj = _axis_view(z, j, N)
            diag = diag + (const
                           - 1.0 / soft_distance(xi - r, a)
                           - 1.0 / soft_distance(xj, a)
                           + 1.0 / soft_distance(xi - xj, a))
    return diag.reshape(-1)


def interaction_operator(spec: DimerSpec, grid: Grid, *,
                         max_dimension: int = DEFAULT_DIMENSION_CAP) -> LinearOperator:
    """Multiplication operator I (full 4-term, dipole-truncated f/r^3, or 0)."""
    _, _, N = _electron_split(spec)
    _check_dimension(grid, N, max_dimension)
    diag = interaction_diagonal(spec, grid)
    return DiagonalOperator(diag, description=f"I[{spec.coupling_mode}] r={spec.separation}",
                            grid=grid, n_electrons=N)


def dipole_operator(spec: DimerSpec, grid: Grid, *, center2: float | None = None) -> LinearOperator:
    """Axis-aligned dipole-dipole kernel f = sum_ij -2 (x_i)(x_j - c2).

    The second center defaults to the separation r; pass center2=0.0 for the
    r-independent decoupled pair used in the sigma definition.
    """
    n1, n2, N = _electron_split(spec)
    z = grid.zs()
    c2 = spec.separation if center2 is None else center2
    shape = (grid.points,) * N
    diag = np.zeros(shape)
    for i in range(n1):
        for j in range(n1, N):
            diag = diag + (-2.0) * _axis_view(z, i, N) * _axis_view(z - c2, j, N)
    return DiagonalOperator(diag.reshape(-1), description=f"f c2={c2}",
                            grid=grid, n_electrons=N)


def dimer_hamiltonian(spec: DimerSpec, grid: Grid, *,
                      max_dimension: int = DEFAULT_DIMENSION_CAP) -> LinearOperator:
    """H(r) = H1 + H2,r + I on the shared tensor grid.

    Atom 1 is centered at 0 (first N1 axes), atom 2 at r (remaining axes,
    shifted nuclear potential). The full coupling mode restores exchange
    symmetry of the total operator; dipole/decoupled modes assign electrons
    to atoms and are exchange-asymmetric by construction.
    """
    h0 = dimer_h0(spec, grid, max_dimension=max_dimension)
    if spec.coupling_mode == COUPLING_DECOUPLED:
        return h0
    inter = interaction_diagonal(spec, grid)
    return GridHamiltonian(grid, h0.n_electrons, h0.diag + inter,
                           description=f"H[{spec.coupling_mode}] r={spec.separation}")


def dimer_h0(spec: DimerSpec, grid: Grid, *, center2: float | None = None,
             max_dimension: int = DEFAULT_DIMENSION_CAP) -> GridHamiltonian:
    """Decoupled part H0 = H1 + H2 (no cross coupling).

    Atom 2 sits at the separation r by default; center2=0.0 yields the
    r-independent pair whose resolvent defines sigma.
    """
    n1, n2, N = _electron_split(spec)
    _check_dimension(grid, N, max_dimension)
    z = grid.zs()
    r = spec.separation if center2 is None else center2
    shape = (grid.points,) * N
    diag = np.zeros(shape)
    v1 = -spec.atom1.Z / soft_distance(z, spec.atom1.softening)
    v2 = -spec.atom2.Z / soft_distance(z - r, spec.atom2.softening)
    for i in range(n1):
        diag += _axis_view(v1, i, N)
    for j in range(n1, N):
        diag += _axis_view(v2, j, N)
    for k, l in itertools.combinations(range(n1), 2):
        diag = diag + 1.0 / soft_distance(_axis_view(z, k, N) - _axis_view(z, l, N),
                                          spec.atom1.softening)
    for k, l in itertools.combinations(range(n1, N), 2):
        diag = diag + 1.0 / soft_distance(_axis_view(z, k, N) - _axis_view(z, l, N),
                                          spec.atom2.softening)
    return GridHamiltonian(grid, N, diag.reshape(-1),
                           description=f"H0 r={spec.separation}")


def antisymmetrizer(total_electrons: int, grid: Grid) -> LinearOperator:
    """Orthogonal projection onto sign-alternating tensors (position exchange)."""
    if total_electrons > _MAX_ANTISYM_ELECTRONS:
        raise ConfigError(
            f"antisymmetrizer capped at {_MAX_ANTISYM_ELECTRONS} electrons, "
            f"got {total_electrons}")
    if total_electrons < 1:
        raise ConfigError("need at least one electron")
    return Antisymmetrizer(grid, total_electrons)


def sector_projector(spec: DimerSpec, grid: Grid) -> LinearOperator | None:
    """Exchange projector matching the coupling mode.

    Full coupling restores total exchange symmetry, so the full
    antisymmetrizer applies. Dipole/decoupled modes assign electrons to atoms
    (the operators are not exchange symmetric between atoms); only intra-atom
    statistics remain. Returns None when that projector is the identity.
    """
    N = spec.total_electrons
    if spec.coupling_mode == COUPLING_FULL:
        return antisymmetrizer(N, grid)
    n1 = spec.atom1.electrons
    groups = [g for g in (tuple(range(n1)), tuple(range(n1, N))) if len(g) > 1]
    if not groups:
        return None
    if N > _MAX_ANTISYM_ELECTRONS:
        raise ConfigError(f"antisymmetrizer capped at {_MAX_ANTISYM_ELECTRONS} electrons")
    return Antisymmetrizer(grid, N, groups=groups)


def translate_state(state: QuantumState, shift: float,
                    which_electrons=None) -> QuantumState:
    """Shift the selected electron coordinates by +shift along the axis.

    The shift must be an integer multiple of the grid spacing; support pushed
    off the grid is a hard error (mass-loss check at 1e-10).
    """
    grid = state.grid
    if grid is None:
        raise ConfigError("translate_state needs a grid-backed state")
    h = grid.spacing
    steps = shift / h
    if abs(steps - round(steps)) > 1e-9:
        raise ConfigError(f"shift {shift} is not a multiple of the grid spacing {h}")
    steps = int(round(steps))
    if which_electrons is None:
        which_electrons = range(state.n_electrons)
    shape = (grid.points,) * state.n_electrons
    V = state.coefficients.reshape(shape)
    if steps != 0:
        for axis in which_electrons:
            W = np.zeros_like(V)
            src = [slice(None)] * state.n_electrons
            dst = [slice(None)] * state.n_electrons
            if steps > 0:
                src[axis] = slice(0, shape[axis] - steps)
                dst[axis] = slice(steps, None)
            else:
                src[axis] = slice(-steps, None)
                dst[axis] = slice(0, shape[axis] + steps)
            W[tuple(dst)] = V[tuple(src)]
            V = W
    new = QuantumState(V.reshape(-1).copy(), grid, state.n_electrons, state.sector,
                       dict(state.meta))
    loss = state.norm ** 2 - new.norm ** 2
    if loss > 1e-10 * max(state.norm ** 2, 1e-300):
        raise ValidityError(
            f"translation by {shift} pushes {loss:.3e} of the squared norm off the grid")
    return new


def hamiltonian_r_derivative(spec: DimerSpec, grid: Grid) -> LinearOperator:
    """Analytic dH/dr as a multiplication operator (all r-dependent terms)."""
    n1, n2, N = _electron_split(spec)
    z = grid.zs()
    r = spec.separation
    shape = (grid.points,) * N
    diag = np.zeros(shape)
    # atom-2 nuclear well moves with r in every coupling mode
    a2 = spec.atom2.softening
    dv2 = -spec.atom2.Z * (z - r) / soft_distance(z - r, a2) ** 3
    for j in range(n1, N):
        diag += _axis_view(dv2, j, N)
    if spec.coupling_mode == COUPLING_FULL:
        a = spec.coupling_softening()
        dconst = -r / soft_distance(r, a) ** 3
        for i in range(n1):
            for j in range(n1, N):
                xi = _axis_view(z, i, N)
                diag = diag + dconst - (xi - r) / soft_distance(xi - r, a) ** 3
    elif spec.coupling_mode == COUPLING_DIPOLE:
        for i in range(n1):
            for j in range(n1, N):
                xi = _axis_view(z, i, N)
                xj = _axis_view(z, j, N)
                diag = diag + 2.0 * xi / r ** 3 + 6.0 * xi * (xj - r) / r ** 4
    return DiagonalOperator(diag.reshape(-1), description=f"dH/dr r={r}",
                            grid=grid, n_electrons=N)
