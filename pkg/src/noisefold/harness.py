"""Seeded experiment batteries, aggregation, phase grids, and folding checks.

Every trial derives its own child seed from (seed_base, m, k, trial), so any
cell reproduces in isolation and re-running a battery yields byte-identical
per-trial rows.  Wall times live in a separate timings table because they are
the one non-deterministic output.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .encoders import Encoder, gaussian_encoder, subsampled_cosine_encoder
from .errors import ParameterError
from .iht import IHTParams, l1_iht_pipeline
from .l1 import (
    ConvexSolveOptions,
    delta_param,
    irw_l1,
    solve_bp_equality,
    solve_bp_inequality,
)
from .results import DecodeResult
from .signals import (
    ClassParams,
    METRICS_COLUMNS,
    NoisySignal,
    generate_signal,
    support_metrics,
)
from .slp import SPParams, slp_decode

METHOD_TAGS = ("l1_eq", "l1_ineq", "irw_l1", "slp_cold", "l1_slp", "l1_iht")

ROWS_COLUMNS = (
    "m",
    "k",
    "trial",
    "method",
    *METRICS_COLUMNS,
    "iterations",
    "residual",
    "objective",
    "converged",
    "failed",
    "error",
)

AGGREGATE_COLUMNS = (
    "method",
    "k",
    "n_trials",
    "n_failed",
    "mean_err_full",
    "mean_residual_noise",
    "mean_wall_time_ms",
    "mean_separation_gap",
    "topk_success_rate",
    "sr_success_rate",
    "mean_err_restricted_truth",
    "mean_err_restricted_decoded",
)

_M64 = (1 << 64) - 1


def splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return (z ^ (z >> 31)) & _M64


def child_seed(seed_base: int, *parts: int) -> int:
    """64-bit mix of the base seed and cell coordinates; collision-tested."""
    s = seed_base & _M64
    for p in parts:
        s = splitmix64((s + (int(p) & _M64)) & _M64)
    return s


@dataclass(frozen=True)
class TrialConfig:
    """One battery: problem sizes, class parameters, methods, and seeds."""

    N: int = 100
    m: int = 40
    k_list: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7)
    r: float = 0.8
    eta: float = 0.75
    p: float = 2.0
    ensemble: str = "gaussian"
    trials_per_cell: int = 30
    methods: tuple[str, ...] = ("l1_eq", "l1_ineq", "irw_l1", "l1_slp", "l1_iht")
    seed_base: int = 20240
    amp_lo: float | None = None
    amp_hi: float | None = None
    method_opts: dict = field(default_factory=dict)
    timeout_s: float | None = 60.0

    def __post_init__(self):
        if self.eta >= self.r:
            raise ParameterError(f"need eta < r, got eta={self.eta}, r={self.r}")
        if any(k >= self.m for k in self.k_list):
            raise ParameterError("battery requires every k < m")
        if self.trials_per_cell < 1:
            raise ParameterError("trials_per_cell must be >= 1")
        for meth in self.methods:
            if meth not in METHOD_TAGS:
                raise ParameterError(f"unknown method tag {meth!r}")
        if self.ensemble not in ("gaussian", "subsampled_cosine"):
            raise ParameterError(f"unknown ensemble {self.ensemble!r}")

    @property
    def amplitude_range(self) -> tuple[float, float]:
        # documented defaults for the unspecified amplitude law
        lo = self.amp_lo if self.amp_lo is not None else self.r + 0.2
        hi = self.amp_hi if self.amp_hi is not None else 2.0 * self.r
        return lo, hi

    @classmethod
    def from_dict(cls, d: dict) -> "TrialConfig":
        d = dict(d)
        if "k_list" in d:
            d["k_list"] = tuple(int(k) for k in d["k_list"])
        if "methods" in d:
            d["methods"] = tuple(d["methods"])
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path) -> "TrialConfig":
        path = Path(path)
        if path.suffix == ".toml":
            try:
                import tomllib  # py >= 3.11
            except ModuleNotFoundError:  # pragma: no cover
                import tomli as tomllib
            with open(path, "rb") as fh:
                return cls.from_dict(tomllib.load(fh))
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_json(self) -> str:
        d = {
            "N": self.N,
            "m": self.m,
            "k_list": list(self.k_list),
            "r": self.r,
            "eta": self.eta,
            "p": self.p,
            "ensemble": self.ensemble,
            "trials_per_cell": self.trials_per_cell,
            "methods": list(self.methods),
            "seed_base": self.seed_base,
            "amp_lo": self.amp_lo,
            "amp_hi": self.amp_hi,
            "method_opts": self.method_opts,
            "timeout_s": self.timeout_s,
        }
        return json.dumps(d, indent=2, sort_keys=True)


def _build_encoder(cfg_ensemble: str, m: int, N: int, seed: int) -> Encoder:
    if cfg_ensemble == "gaussian":
        return gaussian_encoder(m, N, seed)
    return subsampled_cosine_encoder(m, N, seed)


def _convex_opts(block: dict) -> ConvexSolveOptions:
    base = {
        "max_inner": 30000,
        "primal_tol": 1e-7,
        "dual_tol": 1e-7,
        "penalty": 10.0,
    }
    base.update({k: v for k, v in block.items() if k in ConvexSolveOptions.__dataclass_fields__})
    return ConvexSolveOptions(**base)


def _slp_params(r: float, block: dict) -> SPParams:
    # class-to-potential mapping: flat zone must start below the typical
    # warm-start magnitudes of relevant entries, hence the lowered threshold
    base = {
        "r": block.get("r_pot", 0.5 * r),
        "eps": block.get("eps", 0.2 * r),
        "p": 2.0,
        "alpha": 2.0,
        "tol_outer": 1e-5,
        "inner_tol": 1e-9,
        "max_outer": 100,
        "max_bregman": 400,
        "max_inner": 2000,
    }
    base.update(
        {k: v for k, v in block.items() if k in SPParams.__dataclass_fields__}
    )
    return SPParams(**base)


def _decode_one(
    method: str,
    A: Encoder,
    y: np.ndarray,
    signal: NoisySignal,
    kk: int,
    cfg: TrialConfig,
    warm_cache: dict,
) -> DecodeResult:
    block = cfg.method_opts.get(method, {})
    params = signal.params

    def warm_bp() -> DecodeResult:
        if "bp" not in warm_cache:
            opts = _convex_opts(cfg.method_opts.get("l1_eq", {}))
            warm_cache["bp"] = solve_bp_equality(A, y, opts)
        return warm_cache["bp"]

    if method == "l1_eq":
        res = warm_bp()
        return replace_tag(res, "l1_eq")
    if method == "l1_ineq":
        delta = block.get("delta", "auto")
        if delta == "auto":
            sigma_w = (
                math.sqrt(cfg.N / cfg.m) * cfg.eta / math.sqrt(max(cfg.N - kk, 1))
                if cfg.eta > 0
                else 0.0
            )
            delta = delta_param(sigma_w, cfg.m)
        return solve_bp_inequality(A, y, float(delta), _convex_opts(block))
    if method == "irw_l1":
        delta = block.get("delta", "auto")
        if delta == "auto":
            # tighter residual budget than the folded-noise bound; the
            # indicated sigma^2 (m + 2 sqrt(2m)) formula over-relaxes here
            delta = cfg.eta / 2.0
        return irw_l1(
            A,
            y,
            a=block.get("a", 0.1),
            n_iters=block.get("n_iters", 8),
            delta=float(delta),
            opts=_convex_opts(block),
        )
    if method in ("slp_cold", "l1_slp"):
        sp = _slp_params(cfg.r, block)
        x0 = np.zeros(cfg.N) if method == "slp_cold" else warm_bp().xstar
        res = slp_decode(A, y, x0, sp)
        return replace_tag(res, method)
    if method == "l1_iht":
        ip = IHTParams(
            tau=1.0,  # replaced by the pipeline's tau selection
            max_iters=block.get("max_iters", 5000),
            fp_tol=block.get("fp_tol", 1e-12),
            rescale=block.get("rescale", True),
        )
        return l1_iht_pipeline(
            A,
            y,
            params,
            certs=None,
            opts=_convex_opts(block),
            iht_params=ip,
            warm=warm_bp(),
        )
    raise ParameterError(f"unknown method tag {method!r}")


def replace_tag(res: DecodeResult, tag: str) -> DecodeResult:
    if res.method_tag == tag:
        return res
    return DecodeResult(
        xstar=res.xstar,
        iterations=res.iterations,
        residual=res.residual,
        objective=res.objective,
        wall_time_ms=res.wall_time_ms,
        converged=res.converged,
        method_tag=tag,
        info=res.info,
    )


def run_trial(cfg: TrialConfig, cell: tuple[int, int], m: int | None = None):
    """Run every configured method on one seeded (k, trial) cell.

    Returns (rows, timings): one metrics row and one timing row per method.
    Decoder exceptions become failed rows; a per-cell wall-clock timeout (when
    configured) marks the remaining methods as timed out instead of running
    them.
    """
    kk, trial = cell
    m = cfg.m if m is None else m
    enc_seed = child_seed(cfg.seed_base, m, kk, trial, 0)
    sig_seed = child_seed(cfg.seed_base, m, kk, trial, 1)
    A = _build_encoder(cfg.ensemble, m, cfg.N, enc_seed)
    amp_lo, amp_hi = cfg.amplitude_range
    params = ClassParams(eta=cfg.eta, k=kk, r=cfg.r, p=cfg.p)
    signal = generate_signal(cfg.N, params, kk, amp_lo, amp_hi, sig_seed)
    y = A.entries @ signal.x

    rows = []
    timings = []
    warm_cache: dict = {}
    started = time.perf_counter()
    timed_out = False
    for method in cfg.methods:
        base = {"m": m, "k": kk, "trial": trial, "method": method}
        if timed_out or (
            cfg.timeout_s is not None
            and time.perf_counter() - started > cfg.timeout_s
        ):
            timed_out = True
            rows.append(
                {
                    **base,
                    **{c: "" for c in METRICS_COLUMNS},
                    "iterations": 0,
                    "residual": "",
                    "objective": "",
                    "converged": False,
                    "failed": True,
                    "error": "timeout",
                }
            )
            timings.append({**base, "wall_time_ms": 0.0})
            continue
        t0 = time.perf_counter()
        try:
            res = _decode_one(method, A, y, signal, kk, cfg, warm_cache)
            metrics = support_metrics(signal, res.xstar)
            rows.append(
                {
                    **base,
                    **{c: getattr(metrics, c) for c in METRICS_COLUMNS},
                    "iterations": res.iterations,
                    "residual": res.residual,
                    "objective": res.objective,
                    "converged": res.converged,
                    "failed": False,
                    "error": "",
                }
            )
            timings.append({**base, "wall_time_ms": (time.perf_counter() - t0) * 1e3})
        except Exception as exc:  # captured, not propagated
            rows.append(
                {
                    **base,
                    **{c: "" for c in METRICS_COLUMNS},
                    "iterations": 0,
                    "residual": "",
                    "objective": "",
                    "converged": False,
                    "failed": True,
                    "error": f"{type(exc).__name__}: {exc}",
                }
            )
            timings.append({**base, "wall_time_ms": (time.perf_counter() - t0) * 1e3})
    return rows, timings


def run_battery(cfg: TrialConfig):
    """All (k, trial) cells of the battery, rows in deterministic order."""
    rows = []
    timings = []
    for kk in cfg.k_list:
        for trial in range(cfg.trials_per_cell):
            r, t = run_trial(cfg, (kk, trial))
            rows.extend(r)
            timings.extend(t)
    rows.sort(key=lambda d: (d["m"], d["k"], d["trial"], d["method"]))
    timings.sort(key=lambda d: (d["m"], d["k"], d["trial"], d["method"]))
    return rows, timings


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "True" if v else "False"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: str | Path, rows: list[dict], columns) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def read_rows_csv(path: str | Path) -> list[dict]:
    out = []
    with open(path, newline="") as fh:
        for raw in csv.DictReader(fh):
            row: dict = dict(raw)
            for key in ("m", "k", "trial", "iterations", "symdiff_count"):
                if row.get(key):
                    row[key] = int(float(row[key]))
            for key in (
                "separation_gap",
                "err_full",
                "err_restricted_truth",
                "err_restricted_decoded",
                "residual_noise",
                "residual",
                "objective",
                "wall_time_ms",
            ):
                if key in row and row[key] != "":
                    row[key] = float(row[key])
            for key in ("exact_by_r", "exact_by_topk", "converged", "failed"):
                if key in row and row[key] != "":
                    row[key] = row[key] == "True"
            out.append(row)
    return out


def massive_stats(rows: list[dict], timings: list[dict] | None = None) -> list[dict]:
    """Aggregate per (method, k): means, success rates, failure counts.

    Failed rows are excluded from every mean and counted in n_failed; the
    separation-gap mean ignores NaN cells.
    """
    time_lookup = {}
    for t in timings or []:
        time_lookup[(t["m"], t["k"], t["trial"], t["method"])] = t["wall_time_ms"]
    groups: dict[tuple[str, int], list[dict]] = {}
    for row in rows:
        groups.setdefault((row["method"], row["k"]), []).append(row)
    out = []
    for (method, k) in sorted(groups, key=lambda g: (g[0], g[1])):
        grp = groups[(method, k)]
        good = [r for r in grp if not r["failed"]]
        n_failed = len(grp) - len(good)

        def mean(key):
            vals = [r[key] for r in good if r[key] != ""]
            vals = [v for v in vals if not (isinstance(v, float) and math.isnan(v))]
            return float(np.mean(vals)) if vals else float("nan")

        times = [
            time_lookup.get((r["m"], r["k"], r["trial"], r["method"]))
            for r in good
        ]
        times = [t for t in times if t is not None]
        out.append(
            {
                "method": method,
                "k": k,
                "n_trials": len(grp),
                "n_failed": n_failed,
                "mean_err_full": mean("err_full"),
                "mean_residual_noise": mean("residual_noise"),
                "mean_wall_time_ms": float(np.mean(times)) if times else float("nan"),
                "mean_separation_gap": mean("separation_gap"),
                "topk_success_rate": (
                    float(np.mean([r["exact_by_topk"] for r in good]))
                    if good
                    else float("nan")
                ),
                "sr_success_rate": (
                    float(np.mean([r["exact_by_r"] for r in good]))
                    if good
                    else float("nan")
                ),
                "mean_err_restricted_truth": mean("err_restricted_truth"),
                "mean_err_restricted_decoded": mean("err_restricted_decoded"),
            }
        )
    return out


def format_aggregate(agg: list[dict]) -> str:
    """Fixed-width table at 6 significant digits."""
    lines = ["  ".join(f"{c:>24s}" for c in AGGREGATE_COLUMNS)]
    for row in agg:
        cells = []
        for c in AGGREGATE_COLUMNS:
            v = row[c]
            cells.append(f"{v:>24.6g}" if isinstance(v, float) else f"{v!s:>24s}")
        lines.append("  ".join(cells))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# phase transition grids
# ---------------------------------------------------------------------------


@dataclass
class PhaseGrid:
    """Support-recovery success rates over (m, k <= m) with level contours."""

    N: int
    method: str
    trials: int
    rates: np.ndarray  # (N+1, N+1), NaN outside the admissible triangle
    contours: dict = field(default_factory=dict)

    def rate(self, m: int, k: int) -> float:
        return float(self.rates[m, k])

    def to_rows(self) -> list[dict]:
        rows = []
        for m in range(1, self.N + 1):
            for k in range(1, m + 1):
                if not math.isnan(self.rates[m, k]):
                    rows.append({"m": m, "k": k, "rate": self.rates[m, k]})
        return rows


def extract_contour(rates: np.ndarray, level: float) -> list[tuple[int, float]]:
    """Per-column boundary of {rate >= level}: largest admissible k, interpolated.

    For each m, finds the largest k with rate(m, k) >= level and linearly
    interpolates the crossing toward k + 1 (marching the columns of the rate
    matrix); columns where even k = 1 fails are reported at 0.
    """
    N = rates.shape[0] - 1
    poly = []
    for m in range(1, N + 1):
        col = rates[m, 1 : m + 1]
        if np.all(np.isnan(col)):
            continue
        k_star = 0.0
        for k in range(1, m + 1):
            v = rates[m, k]
            if math.isnan(v) or v < level:
                break
            k_star = float(k)
        if 0 < k_star < m:
            v_in, v_out = rates[m, int(k_star)], rates[m, int(k_star) + 1]
            if not math.isnan(v_out) and v_in > v_out:
                k_star += (v_in - level) / (v_in - v_out)
        poly.append((m, min(k_star, float(m))))
    return poly


def phase_transition(
    cfg: TrialConfig, method: str, trials: int, m_values=None, k_max=None
) -> PhaseGrid:
    """Success-rate grid over m = 1..N and admissible k = 1..m for one method.

    Success per cell is exact relevant-support recovery S_r(x*) = S_r(x).
    Decoder failures count as unsuccessful trials.
    """
    N = cfg.N
    m_values = range(1, N + 1) if m_values is None else m_values
    rates = np.full((N + 1, N + 1), np.nan)
    base_cfg = replace(cfg, methods=(method,), trials_per_cell=trials)
    for m in m_values:
        top = m if k_max is None else min(m, k_max)
        for k in range(1, top + 1):
            wins = 0
            for trial in range(trials):
                rows, _ = run_trial(base_cfg, (k, trial), m=m)
                row = rows[0]
                wins += int((not row["failed"]) and row["exact_by_r"])
            rates[m, k] = wins / trials
    grid = PhaseGrid(N=N, method=method, trials=trials, rates=rates)
    grid.contours = {
        "0.5": extract_contour(rates, 0.5),
        "0.9": extract_contour(rates, 0.9),
    }
    return grid


def contour_dominance(grid_a: PhaseGrid, grid_b: PhaseGrid, level: float) -> float:
    """Fraction of columns where grid_a's level boundary is at least grid_b's."""
    ca = dict(extract_contour(grid_a.rates, level))
    cb = dict(extract_contour(grid_b.rates, level))
    cols = sorted(set(ca) | set(cb))
    if not cols:
        return 1.0
    wins = sum(ca.get(m, 0.0) >= cb.get(m, 0.0) for m in cols)
    return wins / len(cols)


# ---------------------------------------------------------------------------
# noise folding
# ---------------------------------------------------------------------------


def noise_folding_check(
    N: int, m: int, sigma_n: float, trials: int, seed: int = 0
) -> float:
    """Empirical folded variance of signal noise over sigma_n^2; expectation N/m.

    Fresh variance-1/m Gaussian encoders and fresh N(0, sigma_n^2) noise per
    trial; pools all m entries of A n across trials.
    """
    if trials * m < 10**4:
        raise ParameterError("need trials * m >= 1e4 samples for the estimate")
    rng = np.random.default_rng(np.uint64(seed))
    batch = max(1, min(trials, 10**7 // (m * N)))
    total_sq = 0.0
    count = 0
    done = 0
    while done < trials:
        b = min(batch, trials - done)
        A = rng.normal(0.0, 1.0 / math.sqrt(m), size=(b, m, N))
        n = rng.normal(0.0, sigma_n, size=(b, N, 1))
        w = (A @ n)[..., 0]
        total_sq += float(np.sum(w * w))
        count += w.size
        done += b
    return total_sq / count / sigma_n**2
