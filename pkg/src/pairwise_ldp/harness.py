"""Seeded Monte-Carlo trials, MSE aggregation and CSV reports.

Every random quantity is derived from the master seed and the position in
the experiment grid, so results do not depend on the number of workers.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .kernels import resolve_workload
from .protocols import (
    NonInteractiveQuadraticForm,
    ProtocolEstimate,
    ThreeRoundQuadraticForm,
    linear_query_protocol,
    lq_from_qf_reduction,
    quadratic_form_pipeline,
)
from .randomizers import derive_rng
from .statistics import auc_exact, auc_protocol, pairwise_statistic_exact, ustat_from_qf
from .workload import Dataset, fact_balance, format_matrix, histogram_of, linear_queries_exact, quadratic_form_exact

log = logging.getLogger(__name__)

PROTOCOLS = ("noninteractive", "three_round", "linear_query", "reduction")
VECTOR_PROTOCOLS = ("linear_query", "reduction")
WORKERS_ENV = "PAIRWISE_LDP_WORKERS"
CSV_COLUMNS = ("statistic", "protocol", "k", "n", "epsilon", "trials", "mse", "mse_ci_lo",
               "mse_ci_hi", "bias", "seed")


class ExperimentError(RuntimeError):
    """A trial raised; ``rows`` holds the trial results gathered so far plus the error row."""

    def __init__(self, message: str, rows: list):
        super().__init__(message)
        self.rows = rows


@dataclass
class ExperimentConfig:
    statistic: str
    n: list[int]
    epsilon: list[float]
    k: int | None = None
    protocol: str = "noninteractive"
    jl_policy: str = "none"
    trials: int = 100
    master_seed: int = 0
    dataset: str = "uniform"
    estimand: str = "quadratic_form"
    output: str | None = None
    trials_output: str | None = None
    workers: int | None = None
    noise_off: bool = False
    fw_iters: int = 2000
    bootstrap: int = 1000

    def __post_init__(self):
        self.n = [int(v) for v in np.atleast_1d(self.n)]
        self.epsilon = [float(v) for v in np.atleast_1d(self.epsilon)]
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.n or min(self.n) < 1:
            raise ValueError("every n must be >= 1")
        if not self.epsilon or min(self.epsilon) <= 0:
            raise ValueError("every epsilon must be > 0")
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}; choose from {PROTOCOLS}")
        if self.estimand not in ("quadratic_form", "statistic"):
            raise ValueError(f"unknown estimand {self.estimand!r}")
        if self.estimand == "statistic" and self.protocol in VECTOR_PROTOCOLS:
            raise ValueError("the statistic estimand needs a quadratic-form protocol")
        self.k = domain_size(self.statistic, self.k)
        _check_dataset_spec(self.dataset)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "workload" in d and "statistic" not in d:
            d["statistic"] = d.pop("workload")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrialResult:
    statistic: str
    protocol: str
    n: int
    epsilon: float
    trial: int
    seed: int
    estimate: Any
    exact: Any
    squared_error: Any
    wall_time: float = 0.0
    error: str | None = None


@dataclass
class Summary:
    statistic: str
    protocol: str
    k: int
    n: int
    epsilon: float
    trials: int
    mse: float
    mse_ci_lo: float
    mse_ci_hi: float
    bias: float
    std: float
    seed: int
    epsilon_spent: float
    worst_coordinate: int | None = None
    extra: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {c: getattr(self, c) for c in CSV_COLUMNS}


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    summaries: list[Summary]
    trials: list[TrialResult]
    transcripts: list[tuple[str, np.ndarray]] = field(default_factory=list)


def domain_size(statistic: str, k: int | None) -> int:
    kind, _, rest = statistic.partition(":")
    if kind == "kendall":
        a, _, b = rest.partition("x")
        return int(a) * int(b)
    if kind == "auc":
        return 2 * int(rest)
    if not k or k < 1:
        raise ValueError(f"statistic {statistic!r} needs a domain size k >= 1")
    return int(k)


# -- datasets ----------------------------------------------------------------------


def _check_dataset_spec(spec: str):
    kind = spec.partition(":")[0]
    if kind not in ("point_mass", "uniform", "two_point", "halves_extremes", "file"):
        raise ValueError(f"unknown dataset generator {spec!r}")


def generate_dataset(spec: str, k: int, n: int, seed: int) -> Dataset:
    """Build a dataset over ``[k]``.

    Specs: ``point_mass:<b>``, ``uniform``, ``two_point:<b1>,<b2>,<p>`` (each
    user is ``b1`` with probability ``p``), ``halves_extremes`` (``ceil(n/2)``
    users at 1, the rest at ``k``) and ``file:<path>`` (whitespace-separated
    integers; ``n`` is ignored).
    """
    _check_dataset_spec(spec)
    kind, _, rest = spec.partition(":")
    rng = np.random.default_rng(seed)
    if kind == "point_mass":
        return Dataset(np.full(n, int(rest)), k)
    if kind == "uniform":
        return Dataset(rng.integers(1, k + 1, size=n), k)
    if kind == "two_point":
        try:
            b1, b2, p = rest.split(",")
            b1, b2, p = int(b1), int(b2), float(p)
        except ValueError as exc:
            raise ValueError(f"bad two_point spec {spec!r}") from exc
        return Dataset(np.where(rng.random(n) < p, b1, b2), k)
    if kind == "halves_extremes":
        first = (n + 1) // 2
        return Dataset(np.r_[np.ones(first, dtype=np.int64), np.full(n - first, k)], k)
    try:
        values = np.array(Path(rest).read_text().split(), dtype=np.int64)
    except (OSError, ValueError) as exc:
        raise ValueError(f"cannot read dataset file {rest!r}: {exc}") from exc
    return Dataset(values, k)


# -- protocol construction ---------------------------------------------------------


class _Cell:
    """One ``(n, epsilon)`` grid point: a fixed dataset, its exact answer and a protocol runner."""

    def __init__(self, config: ExperimentConfig, n: int, epsilon: float, cell_index: int):
        self.config = config
        self.n = n
        self.epsilon = epsilon
        self.cell_index = cell_index
        data_seed = int(derive_rng(config.master_seed, "dataset", n).integers(2**63))
        self.data = generate_dataset(config.dataset, config.k, n, data_seed)
        self.kind = config.statistic.partition(":")[0]

        F, W = resolve_workload(config.statistic, config.k)
        self.W = W
        build_seed = int(derive_rng(config.master_seed, "build", cell_index).integers(2**63))
        if config.protocol == "three_round":
            self.proto = ThreeRoundQuadraticForm(fact_balance(F), epsilon, config.fw_iters, workload=W)
        elif config.protocol == "linear_query":
            self.proto = quadratic_form_pipeline(F, None, epsilon, n, config.jl_policy, build_seed)
        else:
            proto = quadratic_form_pipeline(F, None, epsilon, n, config.jl_policy, build_seed)
            self.proto = NonInteractiveQuadraticForm(proto.factorization, epsilon, W, proto.info)
        d = np.diag(W)
        if config.estimand == "statistic" and self.kind != "auc" and not np.all(d == d[0]):
            raise ValueError("the statistic estimand needs a workload with a constant diagonal")
        self.diag = float(d[0])
        self.exact = self._exact()

    def _auc_split(self):
        v = self.data.index
        return v // 2 + 1, v % 2

    def _exact(self):
        h = histogram_of(self.data)
        if self.config.protocol in VECTOR_PROTOCOLS:
            return linear_queries_exact(self.W, h)
        if self.config.estimand == "quadratic_form":
            return quadratic_form_exact(self.W, h)
        if self.kind == "auc":
            return auc_exact(*self._auc_split())
        from .statistics import PairwiseKernel
        from .workload import WorkloadMatrix

        kernel = PairwiseKernel(self.config.statistic, None, self.diag == 0, WorkloadMatrix(self.W, True))
        return pairwise_statistic_exact(kernel, self.data)

    def run(self, seed: int) -> ProtocolEstimate:
        cfg = self.config
        if cfg.protocol == "linear_query":
            return linear_query_protocol(self.proto.factorization, self.data, self.epsilon, seed, cfg.noise_off)
        if cfg.protocol == "reduction":
            return lq_from_qf_reduction(self.proto, self.data, self.epsilon, seed, cfg.noise_off)
        if cfg.estimand == "statistic" and self.kind == "auc":
            scores, labels = self._auc_split()
            return auc_protocol(scores, labels, self.config.k // 2, self.epsilon, seed, cfg.protocol,
                                cfg.noise_off, cfg.jl_policy)
        est = self.proto.run(self.data, seed, cfg.noise_off)
        if cfg.estimand == "statistic":
            est = ProtocolEstimate(ustat_from_qf(est.value, self.n, diag=self.diag), est.transcript_stats,
                                   dict(est.params, qf_estimate=est.value))
        return est


# -- trial runner ------------------------------------------------------------------


def trial_seed(master_seed: int, cell_index: int, trial: int) -> int:
    return int(derive_rng(master_seed, "trial", cell_index, trial).integers(2**63))


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def bootstrap_mse_interval(sq_errors: np.ndarray, resamples: int, rng: np.random.Generator,
                           level: float = 0.95) -> tuple[float, float]:
    """Percentile bootstrap interval of the (maximum per-coordinate) mean squared error."""
    sq = np.asarray(sq_errors, dtype=float)
    if sq.ndim == 1:
        sq = sq[:, None]
    T = sq.shape[0]
    idx = rng.integers(0, T, size=(resamples, T))
    stats = np.array([sq[row].mean(axis=0).max() for row in idx])
    lo, hi = np.quantile(stats, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


def summarize(results: list[TrialResult], config: ExperimentConfig, cell_index: int,
              epsilon_spent: float) -> Summary:
    est = np.array([np.atleast_1d(r.estimate) for r in results], dtype=float)
    exact = np.atleast_1d(np.asarray(results[0].exact, dtype=float))
    sq = np.array([np.atleast_1d(r.squared_error) for r in results], dtype=float)
    per_coord = sq.mean(axis=0)
    j = int(np.argmax(per_coord))
    rng = derive_rng(config.master_seed, "bootstrap", cell_index)
    lo, hi = bootstrap_mse_interval(sq, config.bootstrap, rng)
    first = results[0]
    return Summary(
        statistic=config.statistic, protocol=config.protocol, k=config.k, n=first.n,
        epsilon=first.epsilon, trials=len(results), mse=float(per_coord[j]), mse_ci_lo=lo,
        mse_ci_hi=hi, bias=float(est[:, j].mean() - exact[j]),
        std=float(est[:, j].std(ddof=1)) if len(results) > 1 else 0.0,
        seed=config.master_seed, epsilon_spent=epsilon_spent,
        worst_coordinate=j if est.shape[1] > 1 else None,
    )


def run_trials(config: ExperimentConfig, workers: int | None = None) -> ExperimentResult:
    """Run every ``(n, epsilon)`` cell for ``config.trials`` independent trials."""
    workers = workers or config.workers or default_workers()
    summaries, all_rows, transcripts = [], [], []
    cell_index = 0
    for n in config.n:
        for eps in config.epsilon:
            cell = _Cell(config, n, eps, cell_index)

            def one(t, cell=cell, cell_index=cell_index):
                seed = trial_seed(config.master_seed, cell_index, t)
                start = time.perf_counter()
                try:
                    est = cell.run(seed)
                except Exception as exc:  # reported as an error row, then the experiment aborts
                    return TrialResult(config.statistic, config.protocol, cell.n, cell.epsilon, t, seed,
                                       math.nan, cell.exact, math.nan, time.perf_counter() - start,
                                       f"{type(exc).__name__}: {exc}"), None
                value = np.asarray(est.value, dtype=float)
                sq = (value - cell.exact) ** 2
                return TrialResult(config.statistic, config.protocol, cell.n, cell.epsilon, t, seed,
                                   value.tolist() if value.ndim else float(value),
                                   np.asarray(cell.exact).tolist() if np.ndim(cell.exact) else float(cell.exact),
                                   sq.tolist() if sq.ndim else float(sq),
                                   time.perf_counter() - start), est

            if workers > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    outcomes = list(pool.map(one, range(config.trials)))
            else:
                outcomes = [one(t) for t in range(config.trials)]
            rows = [r for r, _ in outcomes]
            all_rows.extend(rows)
            failed = [r for r in rows if r.error]
            if failed:
                raise ExperimentError(f"trial {failed[0].trial} at n={n}, epsilon={eps} failed: "
                                      f"{failed[0].error}", all_rows)
            first_est = outcomes[0][1]
            spent = first_est.epsilon_spent
            if abs(spent - eps) > 1e-12:
                raise ExperimentError(f"privacy ledger sums to {spent}, configured {eps}", all_rows)
            for tag, agg in first_est.transcript_stats.get("aggregates", {}).items():
                transcripts.append((f"n={n} epsilon={eps} {tag}", np.atleast_1d(agg)))
            summaries.append(summarize(rows, config, cell_index, spent))
            log.info("n=%d epsilon=%g mse=%.4g", n, eps, summaries[-1].mse)
            cell_index += 1
    return ExperimentResult(config, summaries, all_rows, transcripts)


# -- reports -----------------------------------------------------------------------


def fit_loglog_slope(ns, mses) -> float:
    """Least-squares slope of ``log(mse)`` against ``log(n)``."""
    ns = np.asarray(ns, dtype=float)
    mses = np.asarray(mses, dtype=float)
    if ns.size < 2:
        raise ValueError("need at least two n values to fit a slope")
    return float(np.polyfit(np.log(ns), np.log(mses), 1)[0])


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def summaries_csv(summaries: list[Summary]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for s in summaries:
        writer.writerow([_fmt(v) for v in s.row().values()])
    return buf.getvalue()


def trials_csv(rows: list[TrialResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("statistic", "protocol", "n", "epsilon", "trial", "seed", "estimate", "exact",
                     "squared_error", "error"))
    for r in rows:
        writer.writerow([r.statistic, r.protocol, r.n, _fmt(r.epsilon), r.trial, r.seed,
                         json.dumps(r.estimate), json.dumps(r.exact), json.dumps(r.squared_error),
                         r.error or ""])
    return buf.getvalue()


def mse_report(summaries: list[Summary]) -> tuple[str, dict]:
    """CSV of the summaries and, per ``(statistic, protocol, k, epsilon)``, the log-log slope in n."""
    groups: dict[tuple, list[Summary]] = {}
    for s in summaries:
        groups.setdefault((s.statistic, s.protocol, s.k, s.epsilon), []).append(s)
    slopes = {}
    for key, group in groups.items():
        ns = sorted({s.n for s in group})
        if len(ns) >= 2:
            slopes[key] = fit_loglog_slope([s.n for s in group], [s.mse for s in group])
    return summaries_csv(summaries), slopes


def write_outputs(result: ExperimentResult, output: str | None = None,
                  trials_output: str | None = None, dump_transcript: str | None = None) -> str:
    text, _ = mse_report(result.summaries)
    output = output or result.config.output
    if output:
        Path(output).write_text(text)
    trials_output = trials_output or result.config.trials_output
    if trials_output:
        Path(trials_output).write_text(trials_csv(result.trials))
    if dump_transcript:
        Path(dump_transcript).write_text("\n".join(format_matrix(v[None, :]) for _, v in result.transcripts))
    return text


def reduction_experiment(config: ExperimentConfig, workers: int | None = None) -> list[dict]:
    """mMSE of the linear-query reduction next to the quadratic-form MSE it is built from.

    For each cell reports the reduction's mMSE, the quadratic-form MSE at
    ``(epsilon/2, n)`` on the data, and the worst quadratic-form MSE at
    ``(epsilon/2, 2n)`` over the joined datasets ``x + (n copies of j)``.
    """
    red_cfg = ExperimentConfig.from_dict(dict(config.to_dict(), protocol="reduction", estimand="quadratic_form"))
    red = run_trials(red_cfg, workers)
    rows = []
    for cell_index, summary in enumerate(red.summaries):
        n, eps = summary.n, summary.epsilon
        cell = _Cell(red_cfg, n, eps, cell_index)
        half = cell.proto.with_epsilon(eps / 2)
        W = cell.W
        qf_n = _qf_mse(half, cell.data, W, config, ("qf_n", cell_index))
        qf_2n = 0.0
        for j in range(cell.data.k):
            joined = Dataset(np.r_[cell.data.values, np.full(n, j + 1)], cell.data.k)
            qf_2n = max(qf_2n, _qf_mse(half, joined, W, config, ("qf_2n", cell_index, j)))
        rows.append({"statistic": config.statistic, "k": config.k, "n": n, "epsilon": eps,
                     "trials": config.trials, "mmse": summary.mse, "worst_query": summary.worst_coordinate,
                     "qf_mse_half_n": qf_n, "qf_mse_half_2n": qf_2n,
                     "ratio": summary.mse / (qf_n + qf_2n) if qf_n + qf_2n > 0 else math.inf,
                     "epsilon_spent": summary.epsilon_spent})
    return rows


def _qf_mse(proto, data: Dataset, W, config: ExperimentConfig, tags: tuple) -> float:
    exact = quadratic_form_exact(W, histogram_of(data))
    errs = [(proto.run(data, trial_seed(config.master_seed, hash_tags(tags), t), config.noise_off).value
             - exact) ** 2 for t in range(config.trials)]
    return float(np.mean(errs))


def hash_tags(tags: tuple) -> int:
    return int(derive_rng(0, *tags).integers(2**31))
