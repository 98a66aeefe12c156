"""Bounded-noise sparse signal class: generation, supports, and threshold formulas.

A signal belongs to the class when at most k entries exceed the relevance
threshold r in magnitude and the lp mass of the remaining entries stays below
the noise level eta.  All support sets use the strict inequality |x_i| > r.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DomainError, ParameterError

NORM_TOL = 1e-12
_SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class ClassParams:
    """(eta, k, r, p): noise level, relevant-entry budget, threshold, lp exponent."""

    eta: float
    k: int
    r: float
    p: float = 2.0

    def __post_init__(self):
        if not (1.0 <= self.p <= 2.0):
            raise DomainError(f"p must be in [1, 2], got {self.p}")
        if self.eta < 0:
            raise DomainError(f"eta must be >= 0, got {self.eta}")
        if self.k < 1:
            raise DomainError(f"k must be >= 1, got {self.k}")
        if self.r <= 0:
            raise DomainError(f"r must be > 0, got {self.r}")


@dataclass(frozen=True)
class NoisySignal:
    x: np.ndarray
    params: ClassParams
    relevant_support: tuple[int, ...]
    noise_norm: float

    def __post_init__(self):
        self.x.setflags(write=False)

    def to_json_dict(self) -> dict:
        return {
            "x": self.x.tolist(),
            "params": {
                "eta": self.params.eta,
                "k": self.params.k,
                "r": self.params.r,
                "p": self.params.p,
            },
            "relevant_support": list(self.relevant_support),
            "noise_norm": self.noise_norm,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "NoisySignal":
        return cls(
            x=np.asarray(d["x"], dtype=float),
            params=ClassParams(**d["params"]),
            relevant_support=tuple(int(i) for i in d["relevant_support"]),
            noise_norm=float(d["noise_norm"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def from_json(cls, s: str) -> "NoisySignal":
        return cls.from_json_dict(json.loads(s))


def lp_norm(v: np.ndarray, p: float) -> float:
    v = np.abs(np.asarray(v, dtype=float))
    if v.size == 0:
        return 0.0
    if p == 1.0:
        return float(np.sum(v))
    if p == 2.0:
        return float(np.linalg.norm(v))
    return float(np.sum(v**p) ** (1.0 / p))


def kappa_p(N: int, k: int, p: float) -> float:
    """Holder constant relating lp to l1 off the best k-term support.

    Equals 1 at p = 1 and (N-k)^{1/q} with 1/p + 1/q = 1 for 1 < p <= 2.
    """
    if not (1.0 <= p <= 2.0):
        raise DomainError(f"p must be in [1, 2], got {p}")
    if not (1 <= k < N):
        raise DomainError(f"need 1 <= k < N, got k={k}, N={N}")
    if p == 1.0:
        return 1.0
    q = p / (p - 1.0)
    return float((N - k) ** (1.0 / q))


def support_above(x: np.ndarray, r: float) -> np.ndarray:
    """Indices with |x_i| > r (strict), ascending."""
    return np.flatnonzero(np.abs(np.asarray(x)) > r)


def best_k_term(x: np.ndarray, k: int, p: float) -> tuple[np.ndarray, float]:
    """Best k-term approximation and its lp error.

    Keeps the k largest magnitudes (ties broken by lowest index) and returns
    the lp norm of the dropped tail, i.e. the nonincreasing-rearrangement tail.
    """
    x = np.asarray(x, dtype=float)
    N = x.size
    if not (0 <= k <= N):
        raise DomainError(f"need 0 <= k <= N, got k={k}")
    order = np.argsort(-np.abs(x), kind="stable")
    keep = order[:k]
    xk = np.zeros_like(x)
    xk[keep] = x[keep]
    sigma = lp_norm(x[order[k:]], p)
    return xk, sigma


def class_membership(x: np.ndarray, params: ClassParams) -> bool:
    """True iff |S_r(x)| <= k and the off-support lp mass is <= eta (tol 1e-12)."""
    S = support_above(x, params.r)
    if S.size > params.k:
        return False
    off = np.delete(np.asarray(x, dtype=float), S)
    return lp_norm(off, params.p) <= params.eta + NORM_TOL


def generate_signal(
    N: int,
    params: ClassParams,
    kk: int,
    amp_lo: float,
    amp_hi: float,
    seed: int,
) -> NoisySignal:
    """Draw a class member: kk relevant entries plus lp-rescaled Gaussian noise.

    Relevant entries sit at kk uniformly chosen distinct indices with
    magnitudes uniform in [amp_lo, amp_hi] and random signs; the remaining
    entries are i.i.d. standard normal rescaled so their lp norm equals eta
    exactly.  Class membership holds by construction.
    """
    if kk > params.k:
        raise ParameterError(f"kk={kk} exceeds class budget k={params.k}")
    if kk < 0 or kk > N:
        raise ParameterError(f"need 0 <= kk <= N, got kk={kk}, N={N}")
    if amp_lo <= params.r:
        raise ParameterError(
            f"amp_lo={amp_lo} must exceed r={params.r} to stay relevant"
        )
    if amp_hi < amp_lo:
        raise ParameterError(f"need amp_hi >= amp_lo, got [{amp_lo}, {amp_hi}]")
    rng = np.random.default_rng(np.uint64(seed))
    support = np.sort(rng.choice(N, size=kk, replace=False)) if kk else np.array([], int)
    x = np.zeros(N)
    if kk:
        mags = rng.uniform(amp_lo, amp_hi, size=kk)
        signs = 2.0 * rng.integers(0, 2, size=kk) - 1.0
        x[support] = mags * signs
    off = np.setdiff1d(np.arange(N), support)
    noise_norm = 0.0
    if off.size and params.eta > 0:
        noise = rng.normal(size=off.size)
        nn = lp_norm(noise, params.p)
        if nn == 0.0:  # pragma: no cover - probability zero
            raise ParameterError("degenerate zero noise draw")
        x[off] = noise * (params.eta / nn)
        noise_norm = lp_norm(x[off], params.p)
    return NoisySignal(
        x=x,
        params=params,
        relevant_support=tuple(int(i) for i in support),
        noise_norm=noise_norm,
    )


class GapThresholds(NamedTuple):
    """Sufficient relevance thresholds; None marks a flagged-undefined field."""

    r1: float | None
    r1rew: float | None
    r_s: float


def gap_thresholds(
    gamma_k: float,
    gamma_2k: float,
    delta_2k: float,
    kappa: float,
    k: int,
    eta: float,
) -> GapThresholds:
    """The three sufficient support-identification thresholds.

    r1     = 2 (1+gamma_k)/(1-gamma_k) kappa eta          (l1 decoder)
    r1rew  = 9.6 sqrt(1+delta_2k)/(1-(sqrt 2+1) delta_2k)
             (1 + kappa/sqrt k) eta                        (reweighted l1)
    r_s    = eta (1 + 2 gamma_2k kappa)                    (class stability)

    Fields whose parameter ranges fail (gamma_k >= 1, delta_2k >= sqrt(2)-1)
    come back as None rather than raising.
    """
    r1 = None
    if gamma_k < 1.0:
        r1 = 2.0 * (1.0 + gamma_k) / (1.0 - gamma_k) * kappa * eta
    r1rew = None
    if delta_2k < _SQRT2 - 1.0:
        r1rew = (
            9.6
            * np.sqrt(1.0 + delta_2k)
            / (1.0 - (_SQRT2 + 1.0) * delta_2k)
            * (1.0 + kappa / np.sqrt(k))
            * eta
        )
        r1rew = float(r1rew)
    r_s = float(eta * (1.0 + 2.0 * gamma_2k * kappa))
    return GapThresholds(r1=r1, r1rew=r1rew, r_s=r_s)


@dataclass(frozen=True)
class SupportMetrics:
    """Per-trial decoder quality relative to one ground-truth signal."""

    symdiff_count: int
    exact_by_r: bool
    exact_by_topk: bool
    separation_gap: float
    err_full: float
    err_restricted_truth: float
    err_restricted_decoded: float
    residual_noise: float


METRICS_COLUMNS = (
    "symdiff_count",
    "exact_by_r",
    "exact_by_topk",
    "separation_gap",
    "err_full",
    "err_restricted_truth",
    "err_restricted_decoded",
    "residual_noise",
)


def support_metrics(signal: NoisySignal, xstar: np.ndarray) -> SupportMetrics:
    """All support/gap/error metrics of a decode against the ground truth.

    The separation gap uses the truth's relevant set S_r(x) as the reference:
    min over S of |x*_i| minus max off S of |x*_i| (NaN when S is empty or
    full).  Top-k equality uses |S_r(x)| entries with lowest-index tie-break.
    """
    x = signal.x
    xstar = np.asarray(xstar, dtype=float)
    if xstar.shape != x.shape:
        raise DimensionError(f"length mismatch: {xstar.shape} vs {x.shape}")
    r = signal.params.r
    N = x.size
    S_true = support_above(x, r)
    S_dec = support_above(xstar, r)
    symdiff = int(np.setxor1d(S_true, S_dec).size)
    exact_by_r = symdiff == 0

    if S_true.size:
        top = np.argsort(-np.abs(xstar), kind="stable")[: S_true.size]
        exact_by_topk = set(int(i) for i in top) == set(int(i) for i in S_true)
    else:
        exact_by_topk = True

    off_true = np.setdiff1d(np.arange(N), S_true)
    if S_true.size and off_true.size:
        separation_gap = float(
            np.min(np.abs(xstar[S_true])) - np.max(np.abs(xstar[off_true]))
        )
    else:
        separation_gap = float("nan")

    diff = x - xstar
    off_dec = np.setdiff1d(np.arange(N), S_dec)
    return SupportMetrics(
        symdiff_count=symdiff,
        exact_by_r=exact_by_r,
        exact_by_topk=exact_by_topk,
        separation_gap=separation_gap,
        err_full=float(np.linalg.norm(diff)),
        err_restricted_truth=float(np.linalg.norm(diff[S_true])),
        err_restricted_decoded=float(np.linalg.norm(diff[S_dec])),
        residual_noise=float(np.linalg.norm(xstar[off_dec])),
    )
