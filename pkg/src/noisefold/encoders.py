"""Random measurement matrices and exact certification of their recovery constants.

Encoders are immutable m x N matrices with provenance (kind, seed, normalization).
Certification (`rip_constant`, `nsp_constant`) is exact by enumeration on small
instances and guarded by an explicit combinatorial budget; `beta_lower_bound` is a
search estimate and is flagged as such.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations, product
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from .errors import BudgetError, DimensionError, NumericError

ENUMERATION_BUDGET = 10**6


class EncoderKind(str, Enum):
    GAUSSIAN = "gaussian"
    SUBSAMPLED_COSINE = "subsampled_cosine"
    EXPLICIT = "explicit"


@dataclass(frozen=True)
class Encoder:
    """Immutable measurement matrix with provenance.

    `entries` is an m x N float64 array marked read-only; `op_norm` is filled
    lazily by :func:`operator_norm` and then cached on the instance.
    """

    m: int
    N: int
    entries: np.ndarray
    kind: EncoderKind
    seed: int
    col_scale: float
    op_norm: float | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.entries.shape != (self.m, self.N):
            raise DimensionError(
                f"entries shape {self.entries.shape} != ({self.m}, {self.N})"
            )
        if not np.all(np.isfinite(self.entries)):
            raise ValueError("encoder entries must be finite")
        self.entries.setflags(write=False)

    @property
    def matrix(self) -> np.ndarray:
        return self.entries


def _check_dims(m: int, N: int):
    if not (1 <= m <= N):
        raise DimensionError(f"need 1 <= m <= N, got m={m}, N={N}")


def gaussian_encoder(m: int, N: int, seed: int) -> Encoder:
    """i.i.d. Gaussian encoder with entry variance 1/m.

    Variance 1/m makes squared column norms concentrate at 1, so the
    signal-noise variance is amplified by exactly N/m in expectation when
    folded through the measurement.
    """
    _check_dims(m, N)
    rng = np.random.default_rng(np.uint64(seed))
    entries = rng.normal(0.0, 1.0 / math.sqrt(m), size=(m, N))
    return Encoder(m, N, entries, EncoderKind.GAUSSIAN, int(seed), 1.0 / math.sqrt(m))


def _cosine_basis(N: int) -> np.ndarray:
    # Orthogonal type-II cosine transform: rows indexed by frequency j.
    i = np.arange(N)
    j = np.arange(N)[:, None]
    C = math.sqrt(2.0 / N) * np.cos(math.pi * j * (2 * i + 1) / (2 * N))
    C[0] /= math.sqrt(2.0)
    return C


def _fisher_yates_prefix(N: int, m: int, rng: np.random.Generator) -> np.ndarray:
    arr = np.arange(N)
    for i in range(m):
        swap = i + int(rng.integers(0, N - i))
        arr[i], arr[swap] = arr[swap], arr[i]
    return arr[:m].copy()


def subsampled_cosine_encoder(m: int, N: int, seed: int) -> Encoder:
    """m distinct rows of the orthogonal N-point cosine transform, scaled by sqrt(N/m).

    The scaling gives A A^T = (N/m) I, matching the folding statistics of the
    Gaussian ensemble.
    """
    _check_dims(m, N)
    rng = np.random.default_rng(np.uint64(seed))
    rows = _fisher_yates_prefix(N, m, rng)
    scale = math.sqrt(N / m)
    entries = scale * _cosine_basis(N)[rows]
    return Encoder(
        m, N, entries, EncoderKind.SUBSAMPLED_COSINE, int(seed), scale
    )


def explicit_encoder(entries: np.ndarray, seed: int = 0) -> Encoder:
    """Wrap an arbitrary dense matrix as an encoder."""
    entries = np.ascontiguousarray(np.asarray(entries, dtype=float))
    if entries.ndim != 2:
        raise DimensionError("explicit encoder needs a 2-D array")
    m, N = entries.shape
    if m > N:
        raise DimensionError(f"need m <= N, got {m} x {N}")
    return Encoder(m, N, entries, EncoderKind.EXPLICIT, int(seed), 1.0)


def operator_norm(A: Encoder) -> float:
    """Largest singular value by power iteration on A^T A (rel. tol 1e-10), cached."""
    if A.op_norm is not None:
        return A.op_norm
    M = A.entries
    G_mul = lambda v: M.T @ (M @ v)
    # deterministic generic start vector
    v = 1.0 + 1e-3 * np.arange(A.N)
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(10000):
        w = G_mul(v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            sigma = 0.0
            break
        v = w / nw
        sigma_new = math.sqrt(float(v @ G_mul(v)))
        if abs(sigma_new - sigma) <= 1e-10 * max(sigma_new, 1e-300):
            sigma = sigma_new
            break
        sigma = sigma_new
    object.__setattr__(A, "op_norm", float(sigma))
    return float(sigma)


def _budget_check(count: int, what: str):
    if count > ENUMERATION_BUDGET:
        raise BudgetError(
            f"{what} needs {count} > {ENUMERATION_BUDGET} enumeration steps"
        )


def rip_constant(A: Encoder, K: int) -> float:
    """Smallest delta_K with (1-delta)||z|| <= ||Az|| <= (1+delta)||z|| on K-sparse z.

    Exact: enumerates all C(N, K) column supports and measures the worst
    deviation of the submatrix singular values from 1 (non-squared form).
    Values >= 1 mean the property is violated for every admissible delta.
    """
    if K < 1 or K > A.m:
        raise DimensionError(f"need 1 <= K <= m, got K={K}, m={A.m}")
    _budget_check(math.comb(A.N, K), f"rip_constant(K={K})")
    M = A.entries
    worst = 0.0
    for T in combinations(range(A.N), K):
        s = np.linalg.svd(M[:, T], compute_uv=False)
        worst = max(worst, float(s[0] - 1.0), float(1.0 - s[-1]))
    return worst


def _kernel_basis(M: np.ndarray) -> np.ndarray:
    """Orthonormal basis of ker M as columns (empty array for trivial kernel)."""
    u, s, vt = np.linalg.svd(M, full_matrices=True)
    tol = max(M.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    return vt[rank:].T


def nsp_constant(A: Encoder, k: int) -> float:
    """Smallest gamma_k with ||z_L||_1 <= gamma_k ||z_{L^c}||_1 on ker A, |L| <= k.

    Exact computation: for every size-k support and every sign pattern on it,
    maximize the signed on-support sum over the kernel slice with the
    off-support l1 ball as constraint (a linear program; the maximum of the
    convex objective is attained at an LP vertex).  Returns inf when some
    kernel vector is supported entirely inside a single support.
    """
    if k < 1 or k >= A.N:
        raise DimensionError(f"need 1 <= k < N, got k={k}, N={A.N}")
    V = _kernel_basis(A.entries)
    d = V.shape[1]
    if d == 0:
        return 0.0
    # sign symmetry z -> -z halves the patterns
    n_lp = math.comb(A.N, k) * (2 ** (k - 1))
    _budget_check(n_lp * 2, f"nsp_constant(k={k})")
    gamma = 0.0
    n_off = A.N - k
    # variables: (c in R^d, t in R^{N-k}); constraints +-V_off c <= t, sum t <= 1
    A_sum = np.concatenate([np.zeros(d), np.ones(n_off)])
    bounds = [(None, None)] * d + [(0, None)] * n_off
    for L in combinations(range(A.N), k):
        Lc = np.setdiff1d(np.arange(A.N), L)
        V_L = V[list(L)]
        V_off = V[Lc]
        A_ub = np.vstack(
            [
                np.hstack([V_off, -np.eye(n_off)]),
                np.hstack([-V_off, -np.eye(n_off)]),
                A_sum,
            ]
        )
        b_ub = np.concatenate([np.zeros(2 * n_off), [1.0]])
        for signs in product((1.0, -1.0), repeat=k - 1):
            s = np.array((1.0,) + signs)
            c_obj = np.concatenate([-(s @ V_L), np.zeros(n_off)])
            res = linprog(c_obj, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
            if res.status == 3:  # unbounded: kernel vector inside L
                return math.inf
            if not res.success:  # pragma: no cover - defensive
                raise NumericError(
                    f"LP solver failed: status={res.status} {res.message}"
                )
            gamma = max(gamma, -res.fun)
    return float(gamma)


def beta_lower_bound(
    A: Encoder, samples: int, descent_steps: int, seed: int = 0
) -> float:
    """Search estimate of beta(A) = min_{||z||=1} max_i |A_i^T z| (an upper bound).

    Random unit directions followed by projected subgradient descent on the
    max of column correlations; reports the smallest objective found.  The
    estimate is monotone nonincreasing in `samples` for a fixed seed.
    """
    M = A.entries
    if not np.any(M):
        raise ValueError("beta undefined for the zero matrix")
    rng = np.random.default_rng(np.uint64(seed))
    m = A.m

    def objective(z):
        return float(np.max(np.abs(M.T @ z)))

    best = math.inf
    for _ in range(samples):
        z = rng.normal(size=m)
        z /= np.linalg.norm(z)
        step0 = 0.3
        for it in range(descent_steps):
            corr = M.T @ z
            i_star = int(np.argmax(np.abs(corr)))
            g = math.copysign(1.0, corr[i_star]) * M[:, i_star]
            g = g - (g @ z) * z  # tangent component
            ng = np.linalg.norm(g)
            if ng < 1e-15:
                break
            z_new = z - step0 / (1 + it) ** 0.5 * g / ng
            z_new /= np.linalg.norm(z_new)
            if objective(z_new) <= objective(z):
                z = z_new
            best = min(best, objective(z))
        best = min(best, objective(z))
    return best


@dataclass(frozen=True)
class MatrixCertificate:
    """Recovery constants of one encoder at a given sparsity order.

    `rip_delta` / `nsp_gamma` are exact (full enumeration) when method is
    "exact"; `beta_lower` is always a search estimate (an upper bound on the
    true beta).  `rip_violated` marks rip_delta >= 1.
    """

    order: int
    rip_delta: float
    rip_violated: bool
    nsp_gamma: float
    beta_lower: float
    method: str

    def to_json_dict(self) -> dict:
        return {
            "order": self.order,
            "rip_delta": self.rip_delta,
            "rip_violated": self.rip_violated,
            "nsp_gamma": self.nsp_gamma,
            "beta_lower": self.beta_lower,
            "method": self.method,
        }


def certify(
    A: Encoder,
    order: int,
    beta_samples: int = 50,
    beta_steps: int = 200,
    beta_seed: int = 0,
) -> MatrixCertificate:
    """Exact RIP/NSP constants at `order` plus a sampled beta estimate."""
    delta = rip_constant(A, order)
    gamma = nsp_constant(A, order) if A.N > A.m else 0.0
    beta = beta_lower_bound(A, beta_samples, beta_steps, seed=beta_seed)
    return MatrixCertificate(
        order=order,
        rip_delta=delta,
        rip_violated=delta >= 1.0,
        nsp_gamma=gamma,
        beta_lower=beta,
        method="exact",
    )


# ---------------------------------------------------------------------------
# .enc serialization: one JSON header line, then a little-endian float64
# payload (row-major) for explicit matrices only; seeded kinds rebuild.
# ---------------------------------------------------------------------------


def save_encoder(A: Encoder, path: str | Path):
    path = Path(path)
    header = {
        "kind": A.kind.value,
        "m": A.m,
        "N": A.N,
        "seed": A.seed,
        "col_scale": A.col_scale,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        if A.kind is EncoderKind.EXPLICIT:
            fh.write(A.entries.astype("<f8").tobytes(order="C"))


def load_encoder(path: str | Path) -> Encoder:
    path = Path(path)
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        kind = EncoderKind(header["kind"])
        m, N, seed = header["m"], header["N"], header["seed"]
        if kind is EncoderKind.EXPLICIT:
            payload = fh.read(8 * m * N)
            entries = np.frombuffer(payload, dtype="<f8").reshape(m, N).copy()
            return explicit_encoder(entries, seed=seed)
    if kind is EncoderKind.GAUSSIAN:
        return gaussian_encoder(m, N, seed)
    return subsampled_cosine_encoder(m, N, seed)
