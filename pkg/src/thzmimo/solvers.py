"""In-house sparse solvers: FISTA LASSO (optionally box-constrained),
orthogonal matching pursuit, thresholding and one-hot block projection.

All solvers accept either a dense matrix or any operator exposing
``matvec``/``rmatvec`` (and ``column`` for OMP), so Kronecker-structured
designs never need to be materialized.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LassoProblem",
    "SolverReport",
    "DenseOperator",
    "lasso",
    "threshold",
    "project_onehot",
    "omp",
    "export_solver_trace",
]


class DenseOperator:
    """Adapter giving ndarray designs the operator interface."""

    def __init__(self, A: np.ndarray):
        self.A = np.asarray(A)
        self.shape = self.A.shape

    def matvec(self, x):
        return self.A @ x

    def rmatvec(self, y):
        return self.A.conj().T @ y

    def column(self, j):
        return self.A[:, j]

    def column_norms(self):
        return np.linalg.norm(self.A, axis=0)


def _as_operator(A):
    return DenseOperator(A) if isinstance(A, np.ndarray) else A


@dataclass
class LassoProblem:
    """min lam*||x||_1 + 0.5*||A x - b||^2, optionally s.t. 0 <= x <= 1.

    ``lam=None`` selects the path heuristic 0.1*||A^H b||_inf.  With
    ``box=True`` the variable is real and clipped to [0, 1]; otherwise it
    is complex with magnitude soft-thresholding.
    """

    A: object
    b: np.ndarray
    lam: float | None = None
    box: bool = False
    max_iter: int = 500
    tol: float = 1e-6
    x0: np.ndarray | None = None


@dataclass
class SolverReport:
    x: np.ndarray
    objective_trace: np.ndarray
    iters: int
    converged: bool


def _power_iteration(op, n, real_vars: bool, iters: int = 20, seed: int = 0) -> float:
    """Largest eigenvalue estimate of A^H A (Re-projected in real mode)."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    if not real_vars:
        x = x + 1j * rng.standard_normal(n)
    lam = 1.0
    for _ in range(iters):
        y = op.rmatvec(op.matvec(x))
        if real_vars:
            y = y.real
        nrm = np.linalg.norm(y)
        if nrm == 0:
            return 1.0
        lam = nrm / max(np.linalg.norm(x), 1e-300)
        x = y / nrm
    return float(lam)


def _soft_threshold(v: np.ndarray, t: float) -> np.ndarray:
    mag = np.abs(v)
    scale = np.maximum(mag - t, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(mag > 0, v * (scale / np.where(mag > 0, mag, 1.0)), 0.0)
    return out


def lasso(prob: LassoProblem) -> SolverReport:
    """FISTA with adaptive restart, monotone safeguard and backtracking.

    The trace of accepted objective values is non-increasing after the
    first entry.  Convergence is declared on the relative fixed-point
    residual of the proximal-gradient map; the final iterate then satisfies
    that residual within 10x the tolerance by construction.
    """
    op = _as_operator(prob.A)
    b = np.asarray(prob.b)
    n = op.shape[1]

    Ahb = op.rmatvec(b)
    lam = prob.lam
    if lam is None:
        lam = 0.1 * float(np.max(np.abs(Ahb))) if Ahb.size else 0.0

    if prob.box:
        def prox(v, step):
            return np.clip(v.real - step * lam, 0.0, 1.0)

        def grad(x):
            return op.rmatvec(op.matvec(x) - b).real
    else:
        def prox(v, step):
            return _soft_threshold(v, step * lam)

        def grad(x):
            return op.rmatvec(op.matvec(x) - b)

    def objective(x):
        r = op.matvec(x) - b
        return 0.5 * float(np.vdot(r, r).real) + lam * float(np.sum(np.abs(x)))

    L = max(_power_iteration(op, n, real_vars=prob.box), 1e-12)

    if prob.x0 is not None:
        x = np.asarray(prob.x0, dtype=float if prob.box else complex).copy()
        if prob.box:
            x = np.clip(x, 0.0, 1.0)
    else:
        x = np.zeros(n, dtype=float if prob.box else complex)

    y = x.copy()
    t_k = 1.0
    f_x = objective(x)
    trace = [f_x]
    converged = False
    iters = 0

    for it in range(1, prob.max_iter + 1):
        iters = it
        x_new = prox(y - grad(y) / L, 1.0 / L)
        f_new = objective(x_new)
        if f_new > f_x + 1e-12:
            # momentum overshoot: restart from the last accepted iterate
            t_k = 1.0
            x_new = prox(x - grad(x) / L, 1.0 / L)
            f_new = objective(x_new)
            while f_new > f_x + 1e-12 and L < 1e18:
                L *= 2.0
                x_new = prox(x - grad(x) / L, 1.0 / L)
                f_new = objective(x_new)
            if f_new > f_x:
                x_new, f_new = x, f_x
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_k * t_k))
        y = x_new + ((t_k - 1.0) / t_next) * (x_new - x)
        x, f_x, t_k = x_new, f_new, t_next
        trace.append(f_x)

        fp = np.linalg.norm(x - prox(x - grad(x) / L, 1.0 / L))
        if fp <= prob.tol * max(1.0, np.linalg.norm(x)):
            converged = True
            break

    return SolverReport(
        x=x, objective_trace=np.asarray(trace), iters=iters, converged=converged
    )


def threshold(x: np.ndarray, thr: float) -> np.ndarray:
    """Entry-wise binarization: 1 where x >= thr, else 0."""
    if not 0.0 < thr < 1.0:
        raise ValueError(f"threshold {thr} must lie in (0, 1)")
    return (np.asarray(x) >= thr).astype(float)


def project_onehot(x: np.ndarray, block_len: int, n_blocks: int) -> np.ndarray:
    """Argmax projection onto one-hot blocks; ties pick the lowest index.

    Blocks with no positive mass still get a unity at index 0 and are
    reported in a warning, since the delay structure mandates exactly one
    active tap per block.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (block_len * n_blocks,):
        raise ValueError(
            f"expected length {block_len * n_blocks}, got {x.shape}"
        )
    blocks = x.reshape(n_blocks, block_len)
    idx = np.argmax(blocks, axis=1)
    empty = np.flatnonzero(blocks.max(axis=1) <= 0.0)
    if empty.size:
        head = ", ".join(map(str, empty[:8]))
        warnings.warn(
            f"{empty.size} all-zero blocks (first: {head}); defaulted to tap 0",
            UserWarning,
            stacklevel=2,
        )
    out = np.zeros_like(blocks)
    out[np.arange(n_blocks), idx] = 1.0
    return out.reshape(-1)


def _box_lstsq(A_s: np.ndarray, b: np.ndarray, x0: np.ndarray) -> np.ndarray:
    """min ||A_s x - b||^2 over real x in [0, 1], accelerated projected
    gradient with warm start.  A_s is complex, the fit is over both parts."""
    G = (A_s.conj().T @ A_s).real
    c = (A_s.conj().T @ b).real
    L = max(np.linalg.norm(G, 2), 1e-300)
    x = np.clip(x0, 0.0, 1.0)
    y = x.copy()
    t_k = 1.0
    for _ in range(500):
        x_new = np.clip(y - (G @ y - c) / L, 0.0, 1.0)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_k * t_k))
        y = x_new + ((t_k - 1.0) / t_next) * (x_new - x)
        step = np.linalg.norm(x_new - x)
        x, t_k = x_new, t_next
        if step <= 1e-12 * max(1.0, np.linalg.norm(x)):
            break
    return x


def omp(
    A,
    b: np.ndarray,
    sparsity: int,
    real_coefficients: bool = False,
    box: bool = False,
) -> SolverReport:
    """Orthogonal matching pursuit with per-step least-squares refit.

    Greedy atom selection by maximal residual correlation per unit atom
    norm; the residual norm trace is non-increasing and selection stops
    early once the residual is negligible.  A rank-deficient refit drops
    the newest atom with a warning and continues.

    ``real_coefficients`` constrains the refit to real weights and ranks
    atoms by the real part of their correlation, the right geometry when
    the unknown is a real selection vector over a complex design; ``box``
    additionally clamps the refit weights to [0, 1] (implies real).
    """
    op = _as_operator(A)
    m, n = op.shape
    if not 0 <= sparsity <= n:
        raise ValueError(f"sparsity {sparsity} outside 0..{n}")
    real_coefficients = real_coefficients or box
    b = np.asarray(b)
    x = np.zeros(n, dtype=complex)
    r = b.copy()
    r_norm = np.linalg.norm(r)
    trace = [r_norm]
    support: list[int] = []
    banned = np.zeros(n, dtype=bool)
    cols: list[np.ndarray] = []
    coef = np.zeros(0)
    tol0 = 1e-12 * max(r_norm, 1.0)
    # correlation scores are per unit atom norm; zero-norm atoms never win
    if hasattr(op, "column_norms"):
        inv_norms = 1.0 / np.maximum(np.asarray(op.column_norms()), 1e-300)
    else:
        inv_norms = np.ones(n)

    def refit(A_s, warm):
        if box:
            c = _box_lstsq(A_s, b, warm)
            return c, len(warm)
        if real_coefficients:
            A_r = np.concatenate([A_s.real, A_s.imag], axis=0)
            b_r = np.concatenate([b.real, b.imag])
            c, _, rank, _ = np.linalg.lstsq(A_r, b_r, rcond=None)
            return c, rank
        c, _, rank, _ = np.linalg.lstsq(A_s, b, rcond=None)
        return c, rank

    for _ in range(sparsity):
        if np.linalg.norm(r) <= tol0:
            break
        corr = op.rmatvec(r)
        g = (corr.real if real_coefficients else np.abs(corr)) * inv_norms
        g = g.copy()
        g[banned] = -np.inf
        j_star = int(np.argmax(g))
        if not np.isfinite(g[j_star]) or g[j_star] <= 1e-14:
            break
        support.append(j_star)
        cols.append(op.column(j_star))
        A_s = np.column_stack(cols)
        warm = np.concatenate([coef, [0.0]]) if len(support) > 1 else np.zeros(1)
        coef, rank = refit(A_s, warm)
        if rank < len(support):
            warnings.warn(
                f"atom {j_star} makes the active set rank deficient; dropped",
                UserWarning,
                stacklevel=2,
            )
            support.pop()
            cols.pop()
            banned[j_star] = True
            if support:
                coef, _ = refit(np.column_stack(cols), coef[:-1])
            continue
        banned[j_star] = True
        r = b - A_s @ coef
        trace.append(np.linalg.norm(r))

    if support:
        x[np.asarray(support)] = coef
    return SolverReport(
        x=x,
        objective_trace=np.asarray(trace),
        iters=len(support),
        converged=True,
    )


def export_solver_trace(report: SolverReport, path) -> None:
    """Write the per-iteration objective trace as (iteration, objective)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "objective"])
        for i, v in enumerate(report.objective_trace):
            w.writerow([i, f"{v:.12g}"])
