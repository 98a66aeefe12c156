"""Selective least p-powers decoder.

The potential per entry is |t|^p below r - eps, a cubic blend on
[r - eps, r + eps], and the constant r^p above: flat on "selected" entries,
power-like on noise.  Minimization over {Ax = y} runs three nested loops:
an outer proximal re-centering that restores nu-convexity, a Bregman-style
multiplier loop enforcing the measurements, and a componentwise thresholding
fixed-point iteration as the inner convex solver.

The scalar thresholding function is the proximity operator
argmin_t { mu W(t) + (t - xi)^2 }, in closed form for p in {1, 3/2, 2} and by
bracketed scalar minimization otherwise.  The closed forms are single-valued
(and Lipschitz) for mu <= mu_single_valued(r, eps, p); tests pin them against
the numeric oracle on that domain.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .encoders import Encoder, operator_norm
from .errors import DomainError, NumericError, ParameterError
from .results import DecodeResult

DIVERGENCE_NORM = 1e6


# ---------------------------------------------------------------------------
# potential
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CubicCoeffs:
    """Cubic blend pi(t) = a3 (t-s2)^3 + b2 (t-s2)^2 + c0 on [s1, s2]."""

    a3: float
    b2: float
    c0: float
    s1: float
    s2: float
    mu1: float
    mu2: float
    mu3: float


def _check_domain(r: float, eps: float, p: float):
    if not (0.0 < eps < r):
        raise DomainError(f"need 0 < eps < r, got eps={eps}, r={r}")
    if not (1.0 <= p <= 2.0):
        raise DomainError(f"p must be in [1, 2], got {p}")


def pi_coeffs(r: float, eps: float, p: float) -> CubicCoeffs:
    """Coefficients of the degree-3 interpolant joining the power and flat branches.

    Matches value/slope (mu2, mu1) at s1 = r - eps and value mu3 = r^p with
    zero slope at s2 = r + eps.
    """
    _check_domain(r, eps, p)
    s1, s2 = r - eps, r + eps
    h = s2 - s1
    mu1 = p * s1 ** (p - 1.0)
    mu2 = s1**p
    mu3 = r**p
    c0 = mu3
    b2 = mu1 / h - 3.0 * (mu3 - mu2) / h**2
    a3 = mu1 / (3.0 * h**2) + 2.0 * b2 / (3.0 * h)
    return CubicCoeffs(a3=a3, b2=b2, c0=c0, s1=s1, s2=s2, mu1=mu1, mu2=mu2, mu3=mu3)


def _pi_eval(cc: CubicCoeffs, t):
    u = t - cc.s2
    return cc.a3 * u**3 + cc.b2 * u**2 + cc.c0


def _pi_deriv(cc: CubicCoeffs, t):
    u = t - cc.s2
    return 3.0 * cc.a3 * u**2 + 2.0 * cc.b2 * u


def _w_trunc_array(t: np.ndarray, r: float, eps: float, p: float) -> np.ndarray:
    cc = pi_coeffs(r, eps, p)
    a = np.abs(t)
    out = np.where(a > cc.s2, r**p, 0.0)
    low = a < cc.s1
    mid = ~low & (a <= cc.s2)
    out = np.where(low, a**p, out)
    if np.any(mid):
        out = np.where(mid, _pi_eval(cc, a), out)
    return out


def w_trunc(t: float, r: float, eps: float, p: float) -> float:
    """Regularized truncated p-power: |t|^p, cubic blend, then flat r^p (even in t)."""
    return float(_w_trunc_array(np.asarray([t], dtype=float), r, eps, p)[0])


def sp_functional(x: np.ndarray, params: "SPParams") -> float:
    """Sum of the truncated-power potential over all entries."""
    return float(np.sum(_w_trunc_array(np.asarray(x, dtype=float), params.r, params.eps, params.p)))


def omega_for_nu_convexity(r: float, eps: float, p: float) -> float:
    """Smallest quadratic weight (plus 1e-6 margin) making t -> W(t) + omega t^2 convex.

    The only nonconvex region is the cubic blend; its second derivative is
    linear in t, so the minimum curvature sits at an endpoint.
    """
    cc = pi_coeffs(r, eps, p)
    curv_s1 = 6.0 * cc.a3 * (cc.s1 - cc.s2) + 2.0 * cc.b2
    curv_s2 = 2.0 * cc.b2
    power_curv = p * (p - 1.0) * cc.s1 ** (p - 2.0) if p > 1.0 else 0.0
    worst = max(0.0, -curv_s1, -curv_s2, -power_curv)
    return worst / 2.0 + 1e-6


def mu_single_valued(r: float, eps: float, p: float) -> float:
    """Largest prox weight keeping mu W(t) + (t - xi)^2 strictly convex in t."""
    cc = pi_coeffs(r, eps, p)
    min_curv = min(6.0 * cc.a3 * (cc.s1 - cc.s2) + 2.0 * cc.b2, 2.0 * cc.b2)
    if min_curv >= 0.0:
        return math.inf
    return 2.0 / (-min_curv)


# ---------------------------------------------------------------------------
# thresholding functions (componentwise proximity operators)
# ---------------------------------------------------------------------------


def _threshold_s2_array(xi: np.ndarray, mu: float, r: float, eps: float) -> np.ndarray:
    ax = np.abs(xi)
    first = ax < (r - eps) * (1.0 + mu)
    outer = ax > r + eps
    mid = ~first & ~outer
    out = np.where(outer, xi, xi / (1.0 + mu))
    if np.any(mid):
        a = ax[mid]
        gam = 4.0 * (
            1.0
            + (mu / (4.0 * eps)) ** 2 * (2.0 * r + eps) ** 2
            + (mu / (2.0 * eps)) * (2.0 * eps + r)
            - (3.0 * mu / (2.0 * eps)) * a
        )
        if np.any(gam < 0):
            raise NumericError("negative discriminant in the S2 middle branch")
        val = (4.0 * eps / (3.0 * mu)) * (
            1.0 + (mu / (4.0 * eps)) * (2.0 * eps + r) - np.sqrt(gam / 4.0)
        )
        out[mid] = np.sign(xi[mid]) * val
    return out


def threshold_s2(xi: float, mu: float, r: float, eps: float) -> float:
    """Closed-form p=2 thresholder: linear shrink, cubic-stationarity branch, identity.

    Branches are evaluated in display order (|xi| < (r-eps)(1+mu) wins), with
    odd symmetry S(-xi) = -S(xi).  Exact prox of mu W + (t-xi)^2 whenever
    mu <= mu_single_valued(r, eps, 2).
    """
    if mu <= 0:
        raise ParameterError(f"mu must be > 0, got {mu}")
    _check_domain(r, eps, 2.0)
    return float(_threshold_s2_array(np.asarray([xi], dtype=float), mu, r, eps)[0])


def _middle_root_array(cc: CubicCoeffs, mu: float, ax: np.ndarray, eps: float):
    # stationarity on the cubic: 3 a3 mu u^2 + (2 b2 mu + 2) u + 2 (s2 - ax) = 0
    aa = 3.0 * cc.a3 * mu
    bb = 2.0 * cc.b2 * mu + 2.0
    ccoef = 2.0 * (cc.s2 - ax)
    if abs(aa) < 1e-14:
        u = -ccoef / bb
    else:
        disc = np.maximum(bb * bb - 4.0 * aa * ccoef, 0.0)
        sq = np.sqrt(disc)
        u1 = (-bb + sq) / (2.0 * aa)
        u2 = (-bb - sq) / (2.0 * aa)
        lo, hi = -(cc.s2 - cc.s1) - 1e-12, 1e-12
        in1 = (u1 >= lo) & (u1 <= hi)
        u = np.where(in1, u1, u2)
    return cc.s2 + u


def _threshold_sp_array(
    xi: np.ndarray, mu: float, r: float, eps: float, p: float
) -> np.ndarray:
    if p == 2.0:
        return _threshold_s2_array(xi, mu, r, eps)
    cc = pi_coeffs(r, eps, p)
    ax = np.abs(xi)
    sg = np.sign(xi)
    s1, s2 = cc.s1, cc.s2
    out = np.empty_like(xi)
    if p == 1.0:
        seam1 = s1 + 0.5 * mu
        first = ax < seam1
        out[first] = sg[first] * np.maximum(ax[first] - 0.5 * mu, 0.0)
    elif p == 1.5:
        seam1 = s1 + 0.75 * mu * math.sqrt(s1)
        first = ax < seam1
        # 2 u^2 + (3 mu / 2) u - 2 ax = 0 with u = sqrt(t)
        u = (-(0.75 * mu) + np.sqrt((0.75 * mu) ** 2 + 4.0 * ax[first])) / 2.0
        out[first] = sg[first] * u * u
    else:
        return np.array(
            [threshold_numeric(float(v), mu, r, eps, p)[0] for v in xi]
        )
    outer = ax > s2
    out[outer] = xi[outer]
    mid = ~first & ~outer
    if np.any(mid):
        t = _middle_root_array(cc, mu, ax[mid], eps)
        out[mid] = sg[mid] * t
    return out


def threshold_sp(xi: float, mu: float, r: float, eps: float, p: float) -> float:
    """Componentwise thresholder for general p.

    p = 2 delegates to `threshold_s2`; p = 1 uses the soft-threshold first
    branch; p = 3/2 has a semi-closed first branch; any other p falls back to
    the numeric scalar minimization.  Only the first branch depends on p: the
    identity branch beyond r + eps is p-independent.
    """
    if mu <= 0:
        raise ParameterError(f"mu must be > 0, got {mu}")
    _check_domain(r, eps, p)
    return float(_threshold_sp_array(np.asarray([xi], dtype=float), mu, r, eps, p)[0])


def threshold_numeric(
    xi: float, mu: float, r: float, eps: float, p: float, grid: int = 4001
) -> tuple[float, bool]:
    """Defining oracle: argmin_t mu W(t) + (t - xi)^2 by grid search plus golden refine.

    Returns (minimizer, unique).  `unique` is False when a second local basin
    attains nearly the same value away from the minimizer (a nonunique seam);
    closed forms are only required to match where the oracle is unique.
    """
    _check_domain(r, eps, p)
    a_xi = abs(xi)
    hi = max(a_xi, r + eps) + 1.0
    ts = np.linspace(0.0, hi, grid)
    vals = mu * _w_trunc_array(ts, r, eps, p) + (ts - a_xi) ** 2

    i0 = int(np.argmin(vals))

    def refine(i):
        a = ts[max(i - 1, 0)]
        b = ts[min(i + 1, grid - 1)]
        gr = (math.sqrt(5.0) - 1.0) / 2.0
        c, d = b - gr * (b - a), a + gr * (b - a)

        def f(t):
            return mu * w_trunc(t, r, eps, p) + (t - a_xi) ** 2

        fc, fd = f(c), f(d)
        for _ in range(120):
            if fc < fd:
                b, d, fd = d, c, fc
                c = b - gr * (b - a)
                fc = f(c)
            else:
                a, c, fc = c, d, fd
                d = a + gr * (b - a)
                fd = f(d)
        t = 0.5 * (a + b)
        return t, f(t)

    t_best, f_best = refine(i0)
    # other strict local basins on the grid
    unique = True
    interior = np.flatnonzero(
        (vals[1:-1] <= vals[:-2]) & (vals[1:-1] <= vals[2:])
    ) + 1
    for i in interior:
        if abs(ts[i] - t_best) < 1e-4:
            continue
        t_i, f_i = refine(int(i))
        if abs(t_i - t_best) > 1e-4 and f_i <= f_best + 1e-8:
            unique = False
            break
    return math.copysign(t_best, xi) if xi != 0 else t_best, unique


# ---------------------------------------------------------------------------
# decoder
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SPParams:
    """Potential shape plus the nested-iteration controls.

    `omega` must dominate the nu-convexification constant of the potential;
    `mu` defaults to 1/(1 + omega), the largest prox weight for which the
    inner map is a contraction under ||A|| <= sqrt(2).  `lam` is the Bregman
    scaling, `alpha` the inner-loop count exponent.
    """

    r: float
    eps: float
    p: float = 2.0
    lam: float = 0.5
    omega: float = 0.0
    alpha: float = 1.1
    tol_outer: float = 1e-6
    mu: float = 0.0
    max_outer: int = 100
    max_bregman: int = 200
    max_inner: int = 2000
    inner_tol: float = 1e-8

    def __post_init__(self):
        _check_domain(self.r, self.eps, self.p)
        if self.alpha <= 1.0:
            raise ParameterError(f"alpha must be > 1, got {self.alpha}")
        if self.lam <= 0:
            raise ParameterError(f"lam must be > 0, got {self.lam}")
        omega_min = omega_for_nu_convexity(self.r, self.eps, self.p)
        if self.omega == 0.0:
            object.__setattr__(self, "omega", omega_min + 0.5)
        elif self.omega < omega_min - 1e-9:
            raise ParameterError(
                f"omega={self.omega} below nu-convexity bound {omega_min}"
            )
        if self.mu == 0.0:
            object.__setattr__(self, "mu", 1.0 / (1.0 + self.omega))
        elif not (0.0 < self.mu <= 1.0 / self.omega + 1e-12):
            raise ParameterError(
                f"mu={self.mu} outside (0, 1/omega]; prox would be multivalued"
            )

    @classmethod
    def for_class(
        cls, r: float, eps: float, p: float = 2.0, omega_margin: float = 0.5, **kw
    ) -> "SPParams":
        omega = omega_for_nu_convexity(r, eps, p) + omega_margin
        return cls(r=r, eps=eps, p=p, omega=omega, **kw)


def bregman_update(q: np.ndarray, y: np.ndarray, Ax: np.ndarray, lam: float) -> np.ndarray:
    """Multiplier step q + 2 lam (y - Ax); exactly linear in its inputs."""
    return q + 2.0 * lam * (y - Ax)


def _inner_iterate(x, G, Atb, xprime, params):
    """One surrogate-thresholding step of the inner convex subproblem.

    Minimizes W-sum + omega ||x - x'||^2 + 1/2 ||Ax - b||^2 by majorizing the
    quadratic coupling; with c = 2 (1/mu - omega) >= ||A||^2 each step is a
    contraction and fixed points are critical points of the subproblem.
    """
    mu, om = params.mu, params.omega
    v = (1.0 - mu * om) * x - 0.5 * mu * (G @ x) + 0.5 * mu * Atb + mu * om * xprime
    return _threshold_sp_array(v, mu, params.r, params.eps, params.p)


def _inner_loop(x, G, Atb, xprime, params):
    guard = DIVERGENCE_NORM * max(1.0, float(np.linalg.norm(x)))
    for it in range(1, params.max_inner + 1):
        x_new = _inner_iterate(x, G, Atb, xprime, params)
        if not np.all(np.isfinite(x_new)) or np.linalg.norm(x_new) > guard:
            raise NumericError(
                f"inner thresholding iteration diverged at step {it} "
                f"(|x| = {np.linalg.norm(x_new):.3e})"
            )
        dx = float(np.linalg.norm(x_new - x))
        x = x_new
        if dx <= params.inner_tol:
            return x, it
    return x, params.max_inner


def inner_fixed_point(
    A: Encoder,
    target: np.ndarray,
    xprime: np.ndarray,
    params: SPParams,
    x0: np.ndarray | None = None,
) -> np.ndarray:
    """Componentwise thresholding fixed-point iteration for one subproblem.

    `target` is the multiplier-shifted data y + q.  Requires ||A|| <= sqrt(2)
    (callers rescale); iterates until the step norm falls below
    params.inner_tol or max_inner, with divergence detection.
    """
    M = A.entries
    target = np.asarray(target, dtype=float)
    xprime = np.asarray(xprime, dtype=float)
    x = xprime.copy() if x0 is None else np.asarray(x0, dtype=float).copy()
    G = M.T @ M
    Atb = M.T @ target
    x, _ = _inner_loop(x, G, Atb, xprime, params)
    return x


def slp_decode(
    A: Encoder,
    y: np.ndarray,
    x0: np.ndarray,
    params: SPParams,
    trace_path: str | None = None,
) -> DecodeResult:
    """Linearly constrained local minimization of the selective p-potential.

    Nested loops: the outer pass re-centers the quadratic convexification at
    the previous iterate and stops when the outer step norm falls below
    tol_outer; the middle (Bregman) pass alternates the inner thresholding
    solve with the multiplier update q <- q + 2 lam (y - Ax) until
    (1 + ||q_prev||) ||Ax - y|| <= 1 / l^alpha.  A and y are jointly rescaled
    to operator norm <= 1 (feasible set unchanged).  Warm-starting x0 with
    the l1 minimizer is the intended use.
    """
    t0 = time.perf_counter()
    y = np.asarray(y, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    scale = 1.0 / max(1.0, operator_norm(A))
    M = scale * A.entries
    ys = scale * y
    G = M.T @ M
    x = x0.copy()
    q = np.zeros(A.m)
    total_inner = 0
    total_bregman = 0
    converged = False
    outer_done = 0
    trace_rows: list[tuple[int, float, float, float]] = []
    for ell in range(1, params.max_outer + 1):
        outer_done = ell
        xprime = x.copy()
        q_prev_norm = float(np.linalg.norm(q))
        bound = 1.0 / ell**params.alpha
        for _ in range(params.max_bregman):
            Atb = M.T @ (ys + q)
            x, n_inner = _inner_loop(x, G, Atb, xprime, params)
            total_inner += n_inner
            total_bregman += 1
            Ax = M @ x
            q = bregman_update(q, ys, Ax, params.lam)
            resid_s = float(np.linalg.norm(Ax - ys))
            if trace_path is not None:
                trace_rows.append(
                    (
                        total_bregman,
                        resid_s / scale,
                        sp_functional(x, params),
                        float(np.linalg.norm(x - xprime)),
                    )
                )
            if (1.0 + q_prev_norm) * resid_s <= bound:
                break
        if float(np.linalg.norm(x - xprime)) <= params.tol_outer:
            converged = True
            break
    if trace_path is not None:
        with open(trace_path, "w") as fh:
            fh.write("iteration,residual,sp_value,dx_norm\n")
            for row in trace_rows:
                fh.write(f"{row[0]},{row[1]!r},{row[2]!r},{row[3]!r}\n")
    residual = float(np.linalg.norm(A.entries @ x - y))
    return DecodeResult(
        xstar=x,
        iterations=total_inner,
        residual=residual,
        objective=sp_functional(x, params),
        wall_time_ms=(time.perf_counter() - t0) * 1e3,
        converged=converged,
        method_tag="slp",
        info={
            "outer_iters": outer_done,
            "bregman_iters": total_bregman,
            "multiplier_norm": float(np.linalg.norm(q)),
            "scale": scale,
        },
    )
