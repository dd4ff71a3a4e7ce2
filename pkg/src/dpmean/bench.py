"""Benchmarks behind the command-line tool: golden table, curves, simulation, replay."""

from __future__ import annotations

import csv
import io
import json
import math
import subprocess
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .exceptions import ParseError, PreconditionError
from .metrics import (
    PrivacyBudget,
    error_curve,
    error_E,
    frob_prefix_curve,
    optimize_nu,
    _row_sq_norms,
)
from .sensitivity import ParticipationPattern, sens_min_sep, sens_upper_bound
from .series import Banding, FactorizationPlan, Kind, ToeplitzSeries, build_plan
from .streaming import EstimatorConfig, StreamingMeanEstimator, default_bandwidth
from .withhold import ArrivalPattern, WithholdReleaseEstimator

TABLE_N = 8196
TABLE_KS = (4, 16, 64)
TOL = 0.002
TOL_NU = 0.003

# Published E_n values, indexed by (banding, kind) and then k = 4, 16, 64.
GOLDEN: dict[tuple[Banding, Kind], tuple[float, float, float]] = {
    (Banding.NOT_BANDED, Kind.IDENTITY): (0.068, 0.137, 0.274),
    (Banding.NOT_BANDED, Kind.SQRT_PREFIX): (0.072, 0.221, 0.813),
    (Banding.NOT_BANDED, Kind.NU_DP_FTRL): (0.043, 0.086, 0.172),
    (Banding.NOT_BANDED, Kind.MEAN_AWARE): (0.042, 0.086, 0.186),
    (Banding.BANDED, Kind.SQRT_PREFIX): (0.047, 0.094, 0.196),
    (Banding.BANDED, Kind.NU_DP_FTRL): (0.043, 0.086, 0.172),
    (Banding.BANDED, Kind.MEAN_AWARE): (0.042, 0.084, 0.169),
    (Banding.BANDED_INVERSE, Kind.SQRT_PREFIX): (0.045, 0.089, 0.179),
    (Banding.BANDED_INVERSE, Kind.NU_DP_FTRL): (0.043, 0.086, 0.172),
    (Banding.BANDED_INVERSE, Kind.MEAN_AWARE): (0.042, 0.085, 0.172),
}


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).parent)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def write_csv(out: TextIO, rows: list[dict], meta: dict) -> None:
    """CSV with a leading ``# {json}`` metadata comment."""
    out.write("# " + json.dumps(meta, sort_keys=True, default=str) + "\n")
    if not rows:
        return
    w = csv.DictWriter(out, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def table_bandwidth(kind: Kind, banding: Banding, b: int) -> int | None:
    if banding is Banding.NOT_BANDED:
        return None
    return default_bandwidth(kind, b)


@dataclass
class TableCell:
    banding: Banding
    kind: Kind
    k: int
    b: int
    p: int | None
    nu: float | None
    E_n: float
    golden: float

    @property
    def tol(self) -> float:
        return TOL_NU if self.kind is Kind.NU_DP_FTRL else TOL

    @property
    def diff(self) -> float:
        return self.E_n - self.golden

    @property
    def ok(self) -> bool:
        return abs(self.diff) <= self.tol

    def row(self) -> dict:
        return {
            "banding": self.banding.value, "kind": self.kind.value, "k": self.k, "b": self.b,
            "p": "" if self.p is None else self.p, "nu": "" if self.nu is None else self.nu,
            "E_n": self.E_n, "golden": self.golden, "diff": self.diff,
            "status": "ok" if self.ok else "FAIL",
        }


def table_cell(banding: Banding, kind: Kind, k: int, n: int = TABLE_N) -> TableCell:
    pattern = ParticipationPattern.from_k(n, k)
    p = table_bandwidth(kind, banding, pattern.b)
    nu = None
    if kind is Kind.NU_DP_FTRL:
        nu, value = optimize_nu(banding, pattern, p)
    else:
        value = error_E(build_plan(kind, banding, n, p=p), pattern).E_t
    golden = GOLDEN[(banding, kind)][TABLE_KS.index(k)]
    return TableCell(banding, kind, k, pattern.b, p, nu, value, golden)


def golden_table(n: int = TABLE_N, ks: Iterable[int] = TABLE_KS) -> list[TableCell]:
    return [table_cell(banding, kind, k, n) for (banding, kind) in GOLDEN for k in ks]


def resolve_plan(kind: Kind, banding: Banding, pattern: ParticipationPattern,
                 p: int | None = None, nu: float | str | None = None) -> FactorizationPlan:
    """Plan with defaulted bandwidth; ``nu='auto'`` optimizes nu for the pattern."""
    if banding is not Banding.NOT_BANDED and p is None:
        p = default_bandwidth(kind, pattern.b)
    if kind is Kind.NU_DP_FTRL:
        if nu is None or nu == "auto":
            nu, _ = optimize_nu(banding, pattern, p)
        nu = float(nu)
    else:
        nu = None
    return build_plan(kind, banding, pattern.n, p=p, nu=nu)


def curve_rows(plan: FactorizationPlan, baseline: FactorizationPlan,
               pattern: ParticipationPattern, stride: int = 1) -> list[dict]:
    """``t, E_t`` of ``plan`` and its ratio to ``baseline`` on a strided grid ending at n."""
    ts = sorted(set(range(stride, pattern.n + 1, stride)) | {pattern.n})
    ours = error_curve(plan, pattern, ts)
    base = error_curve(baseline, pattern, ts)
    return [{"t": a.t, "E_t": a.E_t, "baseline_E_t": c.E_t, "ratio": a.E_t / c.E_t}
            for a, c in zip(ours, base)]


# ---------------------------------------------------------------- simulation
@dataclass
class SimResult:
    t: np.ndarray
    rmse: np.ndarray          # sqrt(E ||mu_hat_t - mu||^2)
    ramse: np.ndarray         # sqrt(E (1/t) sum_{s<=t} ||mu_hat_s - mu||^2)
    noise_ramse: np.ndarray   # same, against the non-private running mean
    analytic_rmse: np.ndarray
    analytic_ramse: np.ndarray
    analytic_noise_ramse: np.ndarray

    def rows(self) -> list[dict]:
        return [
            {"t": int(t), "rmse": float(a), "ramse": float(b), "noise_ramse": float(c),
             "analytic_rmse": float(d), "analytic_ramse": float(e), "analytic_noise_ramse": float(f)}
            for t, a, b, c, d, e, f in zip(self.t, self.rmse, self.ramse, self.noise_ramse,
                                          self.analytic_rmse, self.analytic_ramse,
                                          self.analytic_noise_ramse)
        ]


def bernoulli_stream(rng: np.random.Generator, n: int, trials: int, d: int, mu: float) -> np.ndarray:
    """``n x trials x d`` Bernoulli(mu) draws."""
    return rng.binomial(1, mu, size=(n, trials, d)).astype(np.float64)


def _fsum_rows(a: np.ndarray) -> np.ndarray:
    """Compensated mean over axis 0, independent of summation order."""
    return np.array([math.fsum(col) for col in a.reshape(a.shape[0], -1).T]).reshape(a.shape[1:]) / a.shape[0]


def simulate_alg1(config: EstimatorConfig, trials: int, mu: float = 0.5,
                  data_seed: int = 0, ts: Iterable[int] | None = None) -> SimResult:
    """Monte-Carlo root averaged MSE of the streaming estimator on Bernoulli data.

    All trials run side by side as one batched estimator; each trial has its
    own data and noise streams.
    """
    cfg = replace(config, replicas=trials)
    est = StreamingMeanEstimator(cfg)
    n, d = cfg.n, cfg.d
    X = bernoulli_stream(np.random.default_rng(data_seed), n, trials, d, mu)
    ts = np.arange(1, n + 1) if ts is None else np.asarray(sorted(set(ts)), dtype=int)
    err_pt = np.empty((trials, n))
    noise_pt = np.empty((trials, n))
    csum = np.zeros((trials, d))
    for t in range(1, n + 1):
        out = est.observe(X[t - 1])
        csum += X[t - 1]
        err_pt[:, t - 1] = np.sum((out - mu) ** 2, axis=-1)
        noise_pt[:, t - 1] = np.sum((out - csum / t) ** 2, axis=-1)
    steps = np.arange(1, n + 1)
    avg_err = np.cumsum(err_pt, axis=1) / steps
    avg_noise = np.cumsum(noise_pt, axis=1) / steps
    idx = ts - 1
    plan = est.plan()
    rows = _row_sq_norms(plan)
    frob2 = frob_prefix_curve(plan) ** 2
    var = mu * (1 - mu)
    stat_pt = d * var / steps
    stat_avg = np.cumsum(stat_pt) / steps
    noise_pt_a = d * est.sigma**2 * rows
    noise_avg_a = d * est.sigma**2 * frob2 / steps
    return SimResult(
        t=ts,
        rmse=np.sqrt(_fsum_rows(err_pt[:, idx])),
        ramse=np.sqrt(_fsum_rows(avg_err[:, idx])),
        noise_ramse=np.sqrt(_fsum_rows(avg_noise[:, idx])),
        analytic_rmse=np.sqrt(stat_pt + noise_pt_a)[idx],
        analytic_ramse=np.sqrt(stat_avg + noise_avg_a)[idx],
        analytic_noise_ramse=np.sqrt(noise_avg_a)[idx],
    )


def simulate_withhold(b: int, k: int, d: int, budget: PrivacyBudget, trials: int, mu: float = 0.5,
                      seed: int = 0, ts: Iterable[int] | None = None, **kwargs) -> SimResult:
    """Monte-Carlo error of the withhold-release estimator on round-robin Bernoulli data."""
    arrival = ArrivalPattern.round_robin(b, k)
    n = arrival.n
    ts = np.arange(1, n + 1) if ts is None else np.asarray(sorted(set(ts)), dtype=int)
    X = bernoulli_stream(np.random.default_rng(seed), n, trials, d, mu)
    err_pt = np.empty((trials, n))
    noise_pt = np.empty((trials, n))
    for r in range(trials):
        est = WithholdReleaseEstimator(b, k, d, budget, seed=seed * 1_000_003 + r, **kwargs)
        csum = np.zeros(d)
        for t, u in enumerate(arrival.user_ids):
            out = est.observe(u, X[t, r])
            csum += X[t, r]
            err_pt[r, t] = np.sum((out - mu) ** 2)
            noise_pt[r, t] = np.sum((out - csum / (t + 1)) ** 2)
    steps = np.arange(1, n + 1)
    idx = ts - 1
    nan = np.full(ts.size, np.nan)
    return SimResult(
        t=ts,
        rmse=np.sqrt(_fsum_rows(err_pt[:, idx])),
        ramse=np.sqrt(_fsum_rows((np.cumsum(err_pt, axis=1) / steps)[:, idx])),
        noise_ramse=np.sqrt(_fsum_rows((np.cumsum(noise_pt, axis=1) / steps)[:, idx])),
        analytic_rmse=nan, analytic_ramse=nan, analytic_noise_ramse=nan,
    )


# ------------------------------------------------------------------- streams
@dataclass
class StreamData:
    user_ids: np.ndarray   # dense 0-based ids in order of first appearance
    raw_ids: list[int]
    values: np.ndarray     # n x d

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


def parse_stream(f: TextIO) -> StreamData:
    """Read ``user_id, v1..vd`` rows (optional ``t``) in arrival order."""
    reader = csv.reader(row for row in f if not row.startswith("#"))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ParseError("empty input", line=1) from None
    if "user_id" not in header:
        raise ParseError("missing required column", line=1, column="user_id")
    vcols = sorted((h for h in header if h.startswith("v") and h[1:].isdigit()), key=lambda h: int(h[1:]))
    if not vcols:
        raise ParseError("no value columns v1..vd", line=1, column="v1")
    if vcols != [f"v{j}" for j in range(1, len(vcols) + 1)]:
        raise ParseError("value columns must be v1..vd without gaps", line=1)
    pos_u = header.index("user_id")
    pos_t = header.index("t") if "t" in header else None
    pos_v = [header.index(c) for c in vcols]
    raw, vals, remap, dense = [], [], {}, []
    last_t = 0
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
        try:
            uid = int(row[pos_u])
        except ValueError:
            raise ParseError(f"not an integer: {row[pos_u]!r}", line=lineno, column="user_id") from None
        if pos_t is not None:
            try:
                t = int(row[pos_t])
            except ValueError:
                raise ParseError(f"not an integer: {row[pos_t]!r}", line=lineno, column="t") from None
            if t <= last_t:
                raise ParseError("t must be strictly increasing", line=lineno, column="t")
            last_t = t
        v = []
        for c, j in zip(vcols, pos_v):
            try:
                x = float(row[j])
            except ValueError:
                raise ParseError(f"not a number: {row[j]!r}", line=lineno, column=c) from None
            if not math.isfinite(x):
                raise ParseError("value is not finite", line=lineno, column=c)
            v.append(x)
        raw.append(uid)
        dense.append(remap.setdefault(uid, len(remap)))
        vals.append(v)
    if not vals:
        raise ParseError("no data rows", line=2)
    return StreamData(np.asarray(dense, dtype=np.int64), raw, np.asarray(vals, dtype=np.float64))


def separation_violations(user_ids: np.ndarray, b: int) -> list[tuple[int, int]]:
    """Pairs ``(t_prev, t)`` (1-based) where one user returns fewer than b steps later."""
    last: dict[int, int] = {}
    bad = []
    for t, u in enumerate(user_ids, start=1):
        u = int(u)
        if u in last and t - last[u] < b:
            bad.append((last[u], t))
        last[u] = t
    return bad


def check_separation(data: StreamData, b: int, strict: bool) -> None:
    bad = separation_violations(data.user_ids, b)
    if not bad:
        return
    msg = f"{len(bad)} participations closer than b={b}; first at steps {bad[0]}"
    if strict:
        raise PreconditionError(msg)
    warnings.warn(msg, stacklevel=2)


def replay_alg1(data: StreamData, budget: PrivacyBudget, b: int, kind: Kind = Kind.MEAN_AWARE,
                p: int | None = None, nu: float | None = None, seed: int = 0,
                sigma: float | None = None) -> list[dict]:
    pattern = ParticipationPattern(data.n, min(b, data.n))
    p = min(default_bandwidth(kind, pattern.b) if p is None else p, data.n)
    if kind is Kind.NU_DP_FTRL and nu is None:
        nu = 0.5
    cfg = EstimatorConfig(budget, pattern, p=p, d=data.d, clip_mode="clip", seed=seed,
                          kind=kind, nu=nu, sigma_override=sigma)
    est = StreamingMeanEstimator(cfg)
    rows_sq = _row_sq_norms(est.plan())
    out, csum = [], np.zeros(data.d)
    for t, x in enumerate(data.values, start=1):
        xc = est._prepare(x)
        mu_hat = est.observe(x)
        csum += xc
        rec = {"t": t}
        rec.update({f"private_v{j + 1}": float(v) for j, v in enumerate(mu_hat)})
        rec.update({f"true_v{j + 1}": float(v) for j, v in enumerate(csum / t)})
        rec["per_step_std"] = float(est.sigma * math.sqrt(rows_sq[t - 1]))
        out.append(rec)
    return out


def replay_withhold(data: StreamData, budget: PrivacyBudget, seed: int = 0, **kwargs) -> list[dict]:
    arrival = ArrivalPattern(data.user_ids, int(data.user_ids.max()) + 1)
    est = WithholdReleaseEstimator(arrival.b, arrival.k, data.d, budget, seed=seed, **kwargs)
    out, csum = [], np.zeros(data.d)
    xi = budget.xi
    for t, (u, x) in enumerate(zip(arrival.user_ids, data.values), start=1):
        norm = np.linalg.norm(x)
        x = x * min(1.0, xi / norm) if norm > 0 else x
        mu = est.observe(u, x)
        csum += x
        rec = {"t": t}
        rec.update({f"private_v{j + 1}": float(v) for j, v in enumerate(mu)})
        rec.update({f"true_v{j + 1}": float(v) for j, v in enumerate(csum / t)})
        out.append(rec)
    return out


def synthetic_stream(b: int = 500, k: int = 20, d: int = 1, seed: int = 0) -> str:
    """Round-robin CSV of heavy-tailed positive amounts (lognormal)."""
    rng = np.random.default_rng(seed)
    buf = io.StringIO()
    buf.write("t,user_id," + ",".join(f"v{j}" for j in range(1, d + 1)) + "\n")
    scale = rng.lognormal(3.5, 0.8, size=(b, d))
    t = 0
    for _ in range(k):
        for u in range(b):
            t += 1
            v = scale[u] * rng.lognormal(0.0, 1.0, size=d)
            buf.write(f"{t},{u}," + ",".join(f"{x:.2f}" for x in v) + "\n")
    return buf.getvalue()


# ---------------------------------------------------------------- sens check
def random_decreasing_series(rng: np.random.Generator, n: int) -> np.ndarray:
    c = np.sort(rng.random(n))[::-1]
    return c / c[0]


@dataclass
class SensCheck:
    n: int
    b: int
    seed: int
    closed: float
    enumerated: float

    @property
    def ok(self) -> bool:
        return abs(self.closed - self.enumerated) <= 1e-12 * max(1.0, abs(self.closed))


def sens_check(n_max: int = 12, b_max: int = 4, seeds: int = 50, base_seed: int = 0) -> list[SensCheck]:
    """Closed-form sensitivity against exhaustive enumeration on random decreasing series."""
    if n_max > 12:
        raise PreconditionError("sens-check is capped at n <= 12")
    out = []
    for s in range(seeds):
        rng = np.random.default_rng([base_seed, s])
        for n in range(1, n_max + 1):
            c = ToeplitzSeries(random_decreasing_series(rng, n))
            for b in range(1, min(b_max, n) + 1):
                pat = ParticipationPattern(n, b)
                out.append(SensCheck(n, b, s, sens_min_sep(c, pat),
                                     sens_upper_bound(c.dense(), pat, prune=False)))
    return out


__all__ = [
    "GOLDEN", "TableCell", "golden_table", "table_cell", "curve_rows", "simulate_alg1",
    "simulate_withhold", "parse_stream", "replay_alg1", "replay_withhold", "synthetic_stream",
    "sens_check", "write_csv", "git_describe", "resolve_plan",
]
