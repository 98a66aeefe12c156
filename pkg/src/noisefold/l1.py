"""Convex l1 decoders: basis pursuit (equality/inequality), weighted, reweighted.

The engine is an augmented-Lagrangian splitting (ADMM): a soft-threshold step
alternating with a least-squares projection step.  The equality solver uses the
exact affine projection onto {Ax = y}, so returned iterates are feasible to
machine precision; the inequality solver keeps a consensus copy of Ax inside
the l2 ball of radius delta.  Optimality can be checked independently through
the dual subgradient certificate (`l1_optimality_violation`).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .encoders import Encoder
from .errors import DimensionError, ParameterError
from .results import DecodeResult


@dataclass(frozen=True)
class ConvexSolveOptions:
    """Budgets and tolerances for the splitting solvers.

    `max_outer` bounds reweighting rounds, `max_inner` ADMM iterations,
    `penalty` is the ADMM penalty parameter.  Stopping uses the scaled
    residual tests ||x - z|| <= primal_tol sqrt(N) and
    penalty ||z - z_prev|| <= dual_tol sqrt(N).
    """

    max_outer: int = 8
    max_inner: int = 30000
    primal_tol: float = 1e-9
    dual_tol: float = 1e-9
    penalty: float = 10.0
    verbose: bool = False

    def __post_init__(self):
        if self.primal_tol <= 0 or self.dual_tol <= 0:
            raise ParameterError("tolerances must be positive")
        if self.penalty <= 0:
            raise ParameterError("penalty must be positive")


DEFAULT_OPTS = ConvexSolveOptions()


def _soft(t: np.ndarray, thr: np.ndarray | float) -> np.ndarray:
    return np.sign(t) * np.maximum(np.abs(t) - thr, 0.0)


def _check_inputs(A: Encoder, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape != (A.m,):
        raise DimensionError(f"y has shape {y.shape}, expected ({A.m},)")
    return y


def _bp_equality_admm(M, y, w, opts, z0=None, u0=None):
    m, N = M.shape
    F = cho_factor(M @ M.T)
    P = np.eye(N) - M.T @ cho_solve(F, M)
    bproj = M.T @ cho_solve(F, y)
    rho = opts.penalty
    thr = w / rho
    z = np.zeros(N) if z0 is None else z0.copy()
    u = np.zeros(N) if u0 is None else u0.copy()
    x = bproj.copy()
    sq = math.sqrt(N)
    converged = False
    it = 0
    for it in range(1, opts.max_inner + 1):
        x = P @ (z - u) + bproj
        z_prev = z
        z = _soft(x + u, thr)
        u = u + x - z
        rp = np.linalg.norm(x - z)
        rd = rho * np.linalg.norm(z - z_prev)
        if rp <= opts.primal_tol * sq and rd <= opts.dual_tol * sq:
            converged = True
            break
    return x, z, u, it, converged


def _bp_inequality_admm(M, y, w, delta, opts, z0=None, uz0=None):
    # consensus blocks: x = z (l1 variable), Ax = v (ball variable)
    m, N = M.shape
    F = cho_factor(np.eye(m) + M @ M.T)  # Woodbury for (I + A^T A)^{-1}
    rho = opts.penalty
    thr = w / rho
    z = np.zeros(N) if z0 is None else z0.copy()
    uz = np.zeros(N) if uz0 is None else uz0.copy()
    v = y.copy()
    uv = np.zeros(m)
    x = np.zeros(N)
    sq = math.sqrt(N + m)
    converged = False
    it = 0
    for it in range(1, opts.max_inner + 1):
        rhs = (z - uz) + M.T @ (v - uv)
        x = rhs - M.T @ cho_solve(F, M @ rhs)
        Ax = M @ x
        z_prev = z
        z = _soft(x + uz, thr)
        d = Ax + uv - y
        nd = np.linalg.norm(d)
        v = y + (d if nd <= delta else d * (delta / nd))
        uz = uz + x - z
        uv = uv + Ax - v
        rp = math.hypot(np.linalg.norm(x - z), np.linalg.norm(Ax - v))
        rd = rho * np.linalg.norm(z - z_prev)
        if rp <= opts.primal_tol * sq and rd <= opts.dual_tol * sq:
            converged = True
            break
    return x, z, uz, it, converged


def _finish(A, y, x, iters, converged, tag, w, t0, info=None):
    residual = float(np.linalg.norm(A.entries @ x - y))
    objective = float(np.sum(w * np.abs(x)))
    return DecodeResult(
        xstar=x,
        iterations=iters,
        residual=residual,
        objective=objective,
        wall_time_ms=(time.perf_counter() - t0) * 1e3,
        converged=converged,
        method_tag=tag,
        info=info or {},
    )


def solve_bp_equality(
    A: Encoder, y: np.ndarray, opts: ConvexSolveOptions = DEFAULT_OPTS
) -> DecodeResult:
    """argmin ||z||_1 s.t. Az = y.

    The returned iterate is the affine projection step, so it satisfies the
    equality constraint to machine precision; l1 optimality is met to within
    the dual tolerance (checkable via `l1_optimality_violation`).
    """
    y = _check_inputs(A, y)
    t0 = time.perf_counter()
    w = np.ones(A.N)
    x, _, _, it, conv = _bp_equality_admm(A.entries, y, w, opts)
    return _finish(A, y, x, it, conv, "l1_eq", w, t0)


def solve_bp_inequality(
    A: Encoder, y: np.ndarray, delta: float, opts: ConvexSolveOptions = DEFAULT_OPTS
) -> DecodeResult:
    """argmin ||z||_1 s.t. ||Az - y||_2 <= delta."""
    if delta < 0:
        raise ParameterError(f"delta must be >= 0, got {delta}")
    y = _check_inputs(A, y)
    t0 = time.perf_counter()
    w = np.ones(A.N)
    if delta == 0.0:
        x, _, _, it, conv = _bp_equality_admm(A.entries, y, w, opts)
    else:
        x, _, _, it, conv = _bp_inequality_admm(A.entries, y, w, delta, opts)
    return _finish(A, y, x, it, conv, "l1_ineq", w, t0, info={"delta": delta})


def solve_weighted_bp(
    A: Encoder,
    y: np.ndarray,
    w: np.ndarray,
    delta: float = 0.0,
    opts: ConvexSolveOptions = DEFAULT_OPTS,
) -> DecodeResult:
    """argmin sum_i w_i |z_i| subject to the (in)equality constraint per delta."""
    y = _check_inputs(A, y)
    w = np.asarray(w, dtype=float)
    if w.shape != (A.N,):
        raise DimensionError(f"w has shape {w.shape}, expected ({A.N},)")
    if np.any(w <= 0):
        raise ParameterError("all weights must be positive")
    t0 = time.perf_counter()
    if delta == 0.0:
        x, _, _, it, conv = _bp_equality_admm(A.entries, y, w, opts)
    else:
        x, _, _, it, conv = _bp_inequality_admm(A.entries, y, w, delta, opts)
    return _finish(A, y, x, it, conv, "weighted_bp", w, t0, info={"delta": delta})


def irw_weights(z: np.ndarray, a: float) -> np.ndarray:
    """Reweighting rule w_i = 1 / (|z_i| + a)."""
    if a <= 0:
        raise ParameterError(f"stability parameter a must be > 0, got {a}")
    return 1.0 / (np.abs(np.asarray(z, dtype=float)) + a)


def irw_l1(
    A: Encoder,
    y: np.ndarray,
    a: float = 0.1,
    n_iters: int = 8,
    delta: float = 0.0,
    opts: ConvexSolveOptions = DEFAULT_OPTS,
) -> DecodeResult:
    """Iteratively re-weighted l1: weighted solves with w_i = 1/(|z_i| + a).

    Initial weights are all ones, so a single iteration equals plain basis
    pursuit.  Consecutive solves are warm-started from the previous splitting
    state.
    """
    if n_iters < 1:
        raise ParameterError(f"n_iters must be >= 1, got {n_iters}")
    y = _check_inputs(A, y)
    t0 = time.perf_counter()
    w = np.ones(A.N)
    z_ws = u_ws = None
    total_it = 0
    conv_all = True
    x = np.zeros(A.N)
    for _ in range(n_iters):
        if delta == 0.0:
            x, z_ws, u_ws, it, conv = _bp_equality_admm(
                A.entries, y, w, opts, z0=z_ws, u0=u_ws
            )
        else:
            x, z_ws, u_ws, it, conv = _bp_inequality_admm(
                A.entries, y, w, delta, opts, z0=z_ws, uz0=u_ws
            )
        total_it += it
        conv_all = conv_all and conv
        w = irw_weights(x, a)
    res = _finish(A, y, x, total_it, conv_all, "irw_l1", np.ones(A.N), t0)
    res.info.update({"a": a, "n_iters": n_iters, "delta": delta})
    return res


def delta_param(sigma: float, m: int) -> float:
    """Residual bound sqrt(sigma^2 (m + 2 sqrt(2m))) for the inequality decoders."""
    if sigma < 0:
        raise ParameterError(f"sigma must be >= 0, got {sigma}")
    if m < 1:
        raise ParameterError(f"m must be >= 1, got {m}")
    return float(math.sqrt(sigma * sigma * (m + 2.0 * math.sqrt(2.0 * m))))


def l1_optimality_violation(
    A: Encoder,
    x: np.ndarray,
    w: np.ndarray | None = None,
    support_tol: float = 1e-7,
) -> float:
    """Worst violation of the weighted-l1 subgradient certificate at x.

    Fits the dual vector by least squares on the support equations
    (A^T nu)_i = w_i sign(x_i) and reports the larger of the on-support fit
    error and the off-support excess max(|A^T nu| - w, 0).  Near zero means x
    is an (equality-constrained) minimizer.
    """
    x = np.asarray(x, dtype=float)
    w = np.ones(A.N) if w is None else np.asarray(w, dtype=float)
    S = np.flatnonzero(np.abs(x) > support_tol)
    M = A.entries
    if S.size == 0:
        return 0.0
    target = w[S] * np.sign(x[S])
    nu, *_ = np.linalg.lstsq(M[:, S].T, target, rcond=None)
    corr = M.T @ nu
    on_err = float(np.max(np.abs(corr[S] - target)))
    off = np.setdiff1d(np.arange(A.N), S)
    off_err = float(np.max(np.maximum(np.abs(corr[off]) - w[off], 0.0))) if off.size else 0.0
    return max(on_err, off_err)
