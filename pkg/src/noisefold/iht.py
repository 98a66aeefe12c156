"""l1-warm-started iterative hard thresholding with a convex QCQP correction.

The pipeline: basis pursuit warm start, hard threshold at sqrt(tau), IHT to a
fixed point, then a quadratically constrained quadratic program that restores
class membership on the identified support (off-support lp mass bounded by
eta, signed entries pushed past r).  The QCQP is solved by a log-barrier
interior scheme with Newton inner steps and is KKT-checkable.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .encoders import Encoder, MatrixCertificate, operator_norm
from .errors import (
    DimensionError,
    InfeasibleError,
    NumericError,
    ParameterError,
    PreconditionError,
)
from .l1 import ConvexSolveOptions, DEFAULT_OPTS, solve_bp_equality
from .results import DecodeResult
from .signals import ClassParams


def hard_threshold(z: np.ndarray, thresh: float) -> np.ndarray:
    """Keep entries with |z_i| > thresh (strict), zero the rest."""
    if thresh < 0:
        raise ParameterError(f"thresh must be >= 0, got {thresh}")
    z = np.asarray(z, dtype=float)
    return np.where(np.abs(z) > thresh, z, 0.0)


@dataclass(frozen=True)
class IHTParams:
    """tau (threshold is sqrt(tau)), iteration budget, and the ||A|| <= 1 switch."""

    tau: float
    max_iters: int = 5000
    fp_tol: float = 1e-12
    rescale: bool = True

    def __post_init__(self):
        if self.tau <= 0:
            raise ParameterError(f"tau must be > 0, got {self.tau}")
        if self.fp_tol <= 0:
            raise ParameterError(f"fp_tol must be > 0, got {self.fp_tol}")


def iht_decode(
    A: Encoder, y: np.ndarray, x0: np.ndarray, params: IHTParams
) -> DecodeResult:
    """Iterate x <- H_{sqrt(tau)}(x + A^T (y - Ax)) until a fixed point.

    With rescale=True, A and y are jointly scaled so ||A|| <= 1 (the l2
    feasible set is unchanged), which guarantees descent of the counting
    functional J0(x) = ||Ax - y||^2 + tau #supp(x).  Without convergence the
    iterate with smallest J0 is returned and converged is False.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (A.m,):
        raise DimensionError(f"y has shape {y.shape}, expected ({A.m},)")
    t0 = time.perf_counter()
    scale = 1.0 / max(1.0, operator_norm(A)) if params.rescale else 1.0
    M = scale * A.entries
    ys = scale * y
    th = math.sqrt(params.tau)
    x = np.asarray(x0, dtype=float).copy()

    def j0(v):
        return float(np.linalg.norm(M @ v - ys) ** 2 + params.tau * np.count_nonzero(v))

    best_x = x.copy()
    best_j = j0(x)
    converged = False
    it = 0
    j0_trace = [best_j]
    for it in range(1, params.max_iters + 1):
        z = x + M.T @ (ys - M @ x)
        x_new = hard_threshold(z, th)
        if not np.all(np.isfinite(x_new)):
            raise NumericError(f"IHT iterate not finite at step {it}")
        j = j0(x_new)
        j0_trace.append(j)
        if j < best_j:
            best_j = j
            best_x = x_new.copy()
        dx = float(np.linalg.norm(x_new - x))
        x = x_new
        if dx <= params.fp_tol:
            converged = True
            break
    out = x if converged else best_x
    return DecodeResult(
        xstar=out,
        iterations=it,
        residual=float(np.linalg.norm(A.entries @ out - y)),
        objective=j0(out),
        wall_time_ms=(time.perf_counter() - t0) * 1e3,
        converged=converged,
        method_tag="iht",
        info={"tau": params.tau, "scale": scale, "j0_final": j0(out),
              "j0_start": j0_trace[0]},
    )


def tau_range(eta: float, r: float, delta_2k: float, beta: float) -> tuple[float, float]:
    """Admissible tau interval (as tau = threshold^2) from the support theorem.

    Valid when r > eta (1 + (1 + 1/beta) / (1 - delta_2k)); then the
    threshold sqrt(tau) may range over
    (eta, (r - eta/(1 - delta_2k)) / (1 + 1/((1 - delta_2k) beta))).
    """
    if not (0.0 <= delta_2k < 1.0):
        raise ParameterError(f"need 0 <= delta_2k < 1, got {delta_2k}")
    if beta <= 0:
        raise ParameterError(f"beta must be > 0, got {beta}")
    need = eta * (1.0 + (1.0 + 1.0 / beta) / (1.0 - delta_2k))
    if r <= need:
        raise PreconditionError(
            f"empty threshold range: need r > eta (1 + (1 + 1/beta)/(1 - delta_2k))"
            f" = {need:.6g}, got r = {r:.6g}"
        )
    hi = (r - eta / (1.0 - delta_2k)) / (1.0 + 1.0 / ((1.0 - delta_2k) * beta))
    return eta * eta, hi * hi


def tau_midpoint(eta: float, r: float, delta_2k: float, beta: float) -> float:
    """Midpoint of the admissible threshold interval, squared."""
    lo2, hi2 = tau_range(eta, r, delta_2k, beta)
    return ((math.sqrt(lo2) + math.sqrt(hi2)) / 2.0) ** 2


@dataclass(frozen=True)
class QcqpProblem:
    """Support-corrected quadratic program data.

    Minimize 1/2 z^T A^T A z - y^T A z subject to the l2 surrogate of the
    off-support lp noise bound, ||z off support||^2 <= (N-#support)^{1-2/p}
    eta^2, and the linearized sign constraints sign_i z_i >= r on the support.
    """

    A: Encoder
    y: np.ndarray
    support: np.ndarray
    signs: np.ndarray
    eta: float
    r: float
    p: float = 2.0
    t0: float = 1.0
    t_factor: float = 10.0
    gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    max_newton: int = 80

    def __post_init__(self):
        support = np.asarray(self.support, dtype=int)
        signs = np.asarray(self.signs, dtype=float)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "signs", signs)
        if support.size == 0:
            raise ParameterError("support must be nonempty")
        if signs.shape != support.shape or not np.all(np.abs(signs) == 1.0):
            raise ParameterError("signs must be +-1, one per support index")
        if self.eta < 0 or self.r <= 0:
            raise ParameterError("need eta >= 0 and r > 0")
        if not (1.0 <= self.p <= 2.0):
            raise ParameterError(f"p must be in [1, 2], got {self.p}")


def _ball_radius_sq(prob: QcqpProblem) -> float:
    n_off = prob.A.N - prob.support.size
    if n_off == 0:
        return 0.0
    return float(n_off ** (1.0 - 2.0 / prob.p) * prob.eta**2)


def qcqp_correct(prob: QcqpProblem) -> np.ndarray:
    """Solve the support-corrected QCQP by a log-barrier interior scheme.

    The starting point (off-support zero, support entries at sign (r + 1)) is
    strictly feasible by construction, so no phase-1 is needed; an infeasible
    geometry would indicate a wrong support and raises `InfeasibleError`.
    When eta = 0 the ball collapses and the off-support block is eliminated,
    leaving a sign-constrained least squares on the support.  Stops when
    #constraints / t falls below gap_tol.
    """
    A, y = prob.A, np.asarray(prob.y, dtype=float)
    idx = prob.support
    signs = prob.signs
    N = A.N
    off = np.setdiff1d(np.arange(N), idx)
    rho2 = _ball_radius_sq(prob)
    use_ball = rho2 > 0.0 and off.size > 0

    # active variables: support coords, plus the off block only when the ball
    # constraint leaves it free
    act = np.arange(N) if use_ball else idx
    M = A.entries[:, act]
    G = M.T @ M
    c = M.T @ y
    n_act = act.size
    pos = {int(j): i for i, j in enumerate(act)}
    idx_a = np.array([pos[int(j)] for j in idx])
    off_a = np.array([pos[int(j)] for j in off]) if use_ball else np.array([], int)

    w = np.zeros(n_act)
    w[idx_a] = signs * (prob.r + 1.0)
    if np.any(signs * w[idx_a] - prob.r <= 0):  # pragma: no cover - defensive
        raise InfeasibleError("no strictly feasible start; wrong support input")
    n_con = idx.size + (1 if use_ball else 0)
    t = prob.t0

    def barrier_val(ww, tt):
        dj = signs * ww[idx_a] - prob.r
        if np.any(dj <= 0):
            return math.inf
        val = tt * (0.5 * ww @ (G @ ww) - c @ ww) - float(np.sum(np.log(dj)))
        if use_ball:
            dd = rho2 - float(ww[off_a] @ ww[off_a])
            if dd <= 0:
                return math.inf
            val -= math.log(dd)
        return val

    while n_con / t > prob.gap_tol:
        for _ in range(prob.max_newton):
            dj = signs * w[idx_a] - prob.r
            grad = t * (G @ w - c)
            grad[idx_a] -= signs / dj
            H = t * G.copy()
            H[idx_a, idx_a] += 1.0 / dj**2
            if use_ball:
                dd = rho2 - float(w[off_a] @ w[off_a])
                grad[off_a] += 2.0 * w[off_a] / dd
                H[np.ix_(off_a, off_a)] += (2.0 / dd) * np.eye(off_a.size) + np.outer(
                    4.0 * w[off_a] / dd**2, w[off_a]
                )
            try:
                F = cho_factor(H)
            except np.linalg.LinAlgError:  # pragma: no cover - jitter fallback
                F = cho_factor(H + 1e-10 * np.eye(n_act))
            step = -cho_solve(F, grad)
            decrement = float(-grad @ step)
            if decrement / 2.0 <= 1e-11:
                break
            s = 1.0
            f0 = barrier_val(w, t)
            while barrier_val(w + s * step, t) > f0 + 0.25 * s * float(grad @ step):
                s *= 0.5
                if s < 1e-14:  # pragma: no cover - defensive
                    break
            w = w + s * step
        t *= prob.t_factor
    z = np.zeros(N)
    z[act] = w
    return z


def qcqp_kkt_residual(prob: QcqpProblem, z: np.ndarray) -> dict:
    """Stationarity / feasibility / complementarity residuals at z.

    Multipliers are recovered by nonnegative least squares on the active
    gradients; small values certify optimality of the barrier solution.
    """
    A, y = prob.A, np.asarray(prob.y, dtype=float)
    idx, signs = prob.support, prob.signs
    N = A.N
    off = np.setdiff1d(np.arange(N), idx)
    rho2 = _ball_radius_sq(prob)
    M = A.entries
    g0 = M.T @ (M @ z - y)

    cols = []
    ball_slack = 0.0
    if off.size and rho2 > 0:
        cols.append(np.where(np.isin(np.arange(N), off), 2.0 * z, 0.0))
        ball_slack = float(z[off] @ z[off] - rho2)
    sign_cols = np.zeros((N, idx.size))
    sign_cols[idx, np.arange(idx.size)] = -signs
    cols.extend(sign_cols.T)
    J = np.column_stack(cols)
    lam, *_ = np.linalg.lstsq(J, -g0, rcond=None)
    lam = np.maximum(lam, 0.0)
    stationarity = float(np.max(np.abs(g0 + J @ lam)))

    feas = max(0.0, ball_slack)
    feas = max(feas, float(np.max(prob.r - signs * z[idx])))
    if rho2 == 0.0 and off.size:
        feas = max(feas, float(np.max(np.abs(z[off]))))

    slacks = [ball_slack] if (off.size and rho2 > 0) else []
    slacks.extend((signs * z[idx] - prob.r).tolist())
    comp = float(np.max(np.abs(lam * np.array(slacks)))) if len(slacks) else 0.0
    return {
        "stationarity": stationarity,
        "feasibility": feas,
        "complementarity": comp,
    }


def _order_stat_tau(warm: np.ndarray, k: int, eta: float, r: float) -> float:
    """Fallback threshold from the warm start's magnitude gap at order k.

    Midpoint between the k-th and (k+1)-th largest |warm| entries, squared;
    falls back to ((eta + r)/2)^2 when degenerate (k >= N or a zero gap
    midpoint).
    """
    mags = np.sort(np.abs(np.asarray(warm, dtype=float)))[::-1]
    if 0 < k < mags.size:
        mid = 0.5 * (mags[k - 1] + mags[k])
        if mid > 0.0:
            return float(mid * mid)
    return ((eta + r) / 2.0) ** 2


def l1_iht_pipeline(
    A: Encoder,
    y: np.ndarray,
    class_params: ClassParams,
    certs: MatrixCertificate | None = None,
    opts: ConvexSolveOptions = DEFAULT_OPTS,
    iht_params: IHTParams | None = None,
    warm: DecodeResult | None = None,
) -> DecodeResult:
    """Full decode chain: basis pursuit, hard threshold, IHT, QCQP correction.

    tau comes from the certified range midpoint when `certs` (order 2k) makes
    it valid; otherwise from the warm start's order-statistic gap at the
    class sparsity (flagged heuristic).  A precomputed warm-start result may
    be passed to share the basis-pursuit stage.  If the IHT support is empty
    the correction is skipped and the IHT iterate returned.
    """
    t0 = time.perf_counter()
    y = np.asarray(y, dtype=float)
    if warm is None:
        warm = solve_bp_equality(A, y, opts)
    eta, r, k = class_params.eta, class_params.r, class_params.k

    tau = None
    tau_heuristic = True
    if certs is not None and not certs.rip_violated:
        try:
            tau = tau_midpoint(eta, r, certs.rip_delta, certs.beta_lower)
            tau_heuristic = False
        except PreconditionError:
            tau = None
    if tau is None:
        tau = _order_stat_tau(warm.xstar, k, eta, r)

    x0 = hard_threshold(warm.xstar, math.sqrt(tau))
    ip = iht_params if iht_params is not None else IHTParams(tau=tau)
    if ip.tau != tau:
        ip = IHTParams(
            tau=tau, max_iters=ip.max_iters, fp_tol=ip.fp_tol, rescale=ip.rescale
        )
    iht_res = iht_decode(A, y, x0, ip)

    support = np.flatnonzero(iht_res.xstar)
    stage_info = {
        "tau": tau,
        "tau_heuristic": tau_heuristic,
        "warm_iterations": warm.iterations,
        "iht_iterations": iht_res.iterations,
        "iht_converged": iht_res.converged,
        "support_size": int(support.size),
        "j0_iht": iht_res.info.get("j0_final"),
    }
    if support.size == 0:
        out = iht_res.xstar
        converged = iht_res.converged
        stage_info["qcqp"] = "skipped-empty-support"
    else:
        prob = QcqpProblem(
            A=A,
            y=y,
            support=support,
            signs=np.sign(iht_res.xstar[support]),
            eta=eta,
            r=r,
            p=class_params.p,
        )
        out = qcqp_correct(prob)
        converged = warm.converged and iht_res.converged
        stage_info["qcqp"] = "ok"
    return DecodeResult(
        xstar=out,
        iterations=warm.iterations + iht_res.iterations,
        residual=float(np.linalg.norm(A.entries @ out - y)),
        objective=float(np.linalg.norm(A.entries @ out - y) ** 2),
        wall_time_ms=(time.perf_counter() - t0) * 1e3,
        converged=converged,
        method_tag="l1_iht",
        info=stage_info,
    )
