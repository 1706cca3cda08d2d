"""Spectral kernels: Lanczos lowest eigenpairs, projected CG resolvents, dense oracle.

Lanczos runs with full reorthogonalization, deterministic seeded starts and
thick restarts on the best Ritz vector. The resolvent solver is plain CG on
the positive-definite projected operator with the projection re-applied every
iteration to suppress drift out of the subspace.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SolverError, ValidityError
from .model import LinearOperator, QuantumState

DENSE_CAP = 4096
GAP_MIN = 1e-8
DEGENERACY_GAP = 1e-6


@dataclass(frozen=True)
class SolverOptions:
    """Shared solver knobs; every pipeline entry point accepts one."""

    lanczos_tol: float = 1e-10
    cg_tol: float = 1e-10
    fixed_point_tol: float = 1e-13
    floor_tol: float = 3e-5
    gap_min: float = GAP_MIN
    dense_cap: int = DENSE_CAP
    seed: int = 7
    max_lanczos_basis: int = 180
    max_restarts: int = 60
    max_cg_iter: int = 50_000


DEFAULT_OPTIONS = SolverOptions()


@dataclass
class EigenResult:
    values: list[float]
    vectors: list[QuantumState]
    residuals: list[float]
    iterations: int


@dataclass
class ResolventRequest:
    """Solve (operator - shift) v = rhs on the projected subspace.

    ``operator`` must already be projected (e.g. a ProjectedOperator); when it
    exposes a ``projector`` attribute the projection is re-applied on every CG
    iteration. ``floor`` may carry a precomputed lowest eigenvalue of the
    projected operator so repeated solves skip the certificate Lanczos.
    """

    operator: LinearOperator
    shift: float
    rhs: np.ndarray
    tolerance: float = 1e-10
    floor: float | None = None
    gap_min: float = GAP_MIN


def _wrap_state(op, vec, scale_to_weight=True):
    grid = getattr(op, "grid", None)
    n_el = getattr(op, "n_electrons", None) or 1
    sector = getattr(op, "state_sector", "product")
    state = QuantumState(vec, grid, n_el, sector)
    if scale_to_weight and grid is not None:
        w = state.weight
        state = QuantumState(vec / np.sqrt(w), grid, n_el, sector)
    return state


def _start_vector(op, projector, seed, initial):
    rng = np.random.default_rng(seed)
    if initial is not None:
        v = np.array(initial, dtype=float, copy=True)
    else:
        v = rng.standard_normal(op.dim)
    if projector is not None:
        v = projector(v)
    nrm = np.linalg.norm(v)
    if nrm < 1e-14:
        v = rng.standard_normal(op.dim)
        if projector is not None:
            v = projector(v)
        nrm = np.linalg.norm(v)
        if nrm < 1e-14:
            raise SolverError("start vector vanishes inside the projected subspace")
    return v / nrm


def _lanczos_extreme(op, projector, tol, seed, initial, max_basis, max_restarts):
    """Lowest Ritz pair by restarted Lanczos with full reorthogonalization.

    Returns (value, vector, residual, iterations, ritz_gap). ritz_gap is the
    distance to the next Ritz value inside the final Krylov space (None if the
    space stayed one-dimensional).
    """
    apply_op = op.matvec if projector is None else (
        lambda x: projector(op.matvec(projector(x))))
    v = _start_vector(op, projector, seed, initial)
    iterations = 0
    theta = None
    ritz_gap = None
    for _ in range(max_restarts):
        V = [v]
        alphas, betas = [], []
        w = apply_op(v)
        a = float(w @ v)
        alphas.append(a)
        w = w - a * v
        while len(alphas) < max_basis:
            # full reorthogonalization, twice for safety
            for _ in range(2):
                for u in V:
                    w -= (w @ u) * u
            b = np.linalg.norm(w)
            iterations += 1
            T = np.diag(alphas) + np.diag(betas, 1) + np.diag(betas, -1)
            evals, evecs = np.linalg.eigh(T)
            theta = evals[0]
            resid = abs(b * evecs[-1, 0])
            ritz_gap = evals[1] - evals[0] if len(evals) > 1 else None
            scale = max(abs(theta), 1.0)
            if resid <= tol * scale or b <= 1e-14 * scale:
                y = np.zeros(op.dim)
                for c, u in zip(evecs[:, 0], V):
                    y += c * u
                nrm = np.linalg.norm(y)
                if nrm > 0:
                    y /= nrm
                true_res = np.linalg.norm(apply_op(y) - theta * y)
                if true_res <= 10 * tol * scale or b <= 1e-14 * scale:
                    return theta, y, true_res, iterations, ritz_gap
            if b <= 1e-14 * scale:
                break
            v_next = w / b
            V.append(v_next)
            betas.append(b)
            w = apply_op(v_next)
            a = float(w @ v_next)
            alphas.append(a)
            w = w - a * v_next - b * V[-2]
        # restart from the best Ritz vector
        T = np.diag(alphas) + np.diag(betas, 1) + np.diag(betas, -1)
        evals, evecs = np.linalg.eigh(T)
        theta = evals[0]
        ritz_gap = evals[1] - evals[0] if len(evals) > 1 else ritz_gap
        y = np.zeros(op.dim)
        for c, u in zip(evecs[:, 0], V):
            y += c * u
        nrm = np.linalg.norm(y)
        if nrm < 1e-14:
            raise SolverError("Lanczos restart produced a vanishing Ritz vector")
        v = y / nrm
        resid = np.linalg.norm(apply_op(v) - theta * v)
        if resid <= tol * max(abs(theta), 1.0):
            return theta, v, resid, iterations, ritz_gap
    raise SolverError(
        f"Lanczos did not converge: residual {resid:.3e} after {iterations} iterations",
        history=[resid])


def _as_projection_fn(projector):
    if projector is None:
        return None
    if isinstance(projector, LinearOperator):
        return projector.matvec
    return projector


def ground_state(op: LinearOperator, projector=None, tol: float = 1e-10, *,
                 seed: int = 7, initial=None,
                 options: SolverOptions | None = None) -> EigenResult:
    """Lowest eigenpair of a self-adjoint operator, optionally inside range(P).

    Raises SolverError when the Krylov spectrum shows a (near-)degenerate
    lowest eigenvalue; true multiplicities need lowest_k with deflation.
    """
    if not op.self_adjoint:
        raise ConfigError("ground_state requires a self-adjoint operator")
    opts = options or DEFAULT_OPTIONS
    if op.dim == 1:
        val = float(op.matvec(np.ones(1))[0])
        return EigenResult([val], [_wrap_state(op, np.ones(1))], [0.0], 0)
    theta, y, resid, iters, ritz_gap = _lanczos_extreme(
        op, _as_projection_fn(projector), tol, seed, initial,
        opts.max_lanczos_basis, opts.max_restarts)
    if ritz_gap is not None and ritz_gap <= DEGENERACY_GAP and resid < ritz_gap:
        raise SolverError(
            f"ground state looks degenerate: Ritz gap {ritz_gap:.3e} <= {DEGENERACY_GAP}")
    return EigenResult([theta], [_wrap_state(op, y)], [resid], iters)


def lowest_k(op: LinearOperator, k: int, tol: float = 1e-10, *, projector=None,
             seed: int = 7, options: SolverOptions | None = None) -> EigenResult:
    """k lowest eigenpairs by Lanczos with deflation of converged vectors."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    if k > op.dim:
        raise ConfigError(f"requested {k} pairs from a dim-{op.dim} operator")
    opts = options or DEFAULT_OPTIONS
    proj_fn = _as_projection_fn(projector)
    found_vals, found_vecs, found_res = [], [], []
    iterations = 0
    for j in range(k):
        def deflating(x, _found=tuple(found_vecs)):
            y = x if proj_fn is None else proj_fn(x)
            for u in _found:
                y = y - (u @ y) * u
            return y
        theta, y, resid, iters, _ = _lanczos_extreme(
            op, deflating, tol, seed + j, None, opts.max_lanczos_basis, opts.max_restarts)
        iterations += iters
        found_vals.append(theta)
        found_vecs.append(y)
        found_res.append(resid)
    order = np.argsort(found_vals)
    vals = [found_vals[i] for i in order]
    vecs = [_wrap_state(op, found_vecs[i]) for i in order]
    res = [found_res[i] for i in order]
    return EigenResult(vals, vecs, res, iterations)


def certify_floor(op: LinearOperator, *, tol: float = 1e-8, seed: int = 7,
                  options: SolverOptions | None = None) -> float:
    """Rigorous-ish lower estimate of the lowest eigenvalue: theta - residual."""
    opts = options or DEFAULT_OPTIONS
    projector = getattr(op, "projector", None)
    theta, _, resid, _, _ = _lanczos_extreme(
        op, projector, tol, seed, None, opts.max_lanczos_basis, opts.max_restarts)
    return theta - resid


def apply_resolvent(req: ResolventRequest):
    """v with (op - shift) v = rhs on the projected subspace, by projected CG.

    Certifies positive definiteness first: the lowest projected eigenvalue
    minus the shift must exceed gap_min, otherwise a ValidityError names the
    violated gap. Accepts the right-hand side as a raw array or QuantumState
    and returns the matching type.
    """
    op = req.operator
    projector = getattr(op, "projector", None)
    rhs_state = req.rhs if isinstance(req.rhs, QuantumState) else None
    rhs = rhs_state.coefficients if rhs_state is not None else np.asarray(req.rhs, dtype=float)
    rhs = rhs.astype(float, copy=True)
    if projector is not None:
        rhs = projector(rhs)
    def pack(vec):
        if rhs_state is not None:
            return QuantumState(vec, rhs_state.grid, rhs_state.n_electrons, rhs_state.sector)
        return vec

    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm == 0.0:
        return pack(np.zeros_like(rhs))
    floor = req.floor
    if floor is None:
        floor = certify_floor(op)
    gap = floor - req.shift
    if gap < req.gap_min:
        raise ValidityError(
            f"resolvent undefined: lowest projected eigenvalue {floor:.10g} minus "
            f"shift {req.shift:.10g} leaves gap {gap:.3e} < gap_min {req.gap_min:.1e}")

    def apply_shifted(x):
        y = op.matvec(x) - req.shift * x
        return projector(y) if projector is not None else y

    x = np.zeros_like(rhs)
    r = rhs.copy()
    p = r.copy()
    rr = float(r @ r)
    history = []
    for it in range(req.operator.dim if req.operator.dim < 50_000 else 50_000):
        Ap = apply_shifted(p)
        alpha = rr / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        if projector is not None:
            r = projector(r)
        rr_new = float(r @ r)
        history.append(np.sqrt(rr_new))
        if np.sqrt(rr_new) <= req.tolerance * rhs_norm:
            if projector is not None:
                x = projector(x)
            return pack(x)
        p = r + (rr_new / rr) * p
        if projector is not None:
            p = projector(p)
        rr = rr_new
    raise SolverError(
        f"CG stalled at residual {history[-1]:.3e} (target {req.tolerance * rhs_norm:.3e})",
        history=history)


def dense_oracle(op: LinearOperator, *, cap: int = DENSE_CAP) -> EigenResult:
    """Full dense eigendecomposition (independent verification oracle)."""
    if op.dim > cap:
        raise ConfigError(f"dense oracle capped at dim {cap}, operator has {op.dim}")
    A = op.to_dense()
    vals, vecs = np.linalg.eigh(A)
    states = [_wrap_state(op, vecs[:, j].copy()) for j in range(op.dim)]
    return EigenResult([float(v) for v in vals], states, [0.0] * op.dim, 1)


def assert_nondegenerate(values, gap: float = DEGENERACY_GAP):
    """Guard for the nondegeneracy hypothesis on sorted eigenvalues."""
    if len(values) >= 2 and values[1] - values[0] <= gap:
        raise ValidityError(
            f"lowest eigenvalue is (near-)degenerate: gap {values[1] - values[0]:.3e}")
