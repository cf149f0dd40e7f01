"""Degree-2 U-statistics computed through private quadratic forms.

With ``n^2 h^T W h = 2 sum_{i<j} f(x_i, x_j) + n sum_b h_b W_bb``, a
quadratic-form estimate converts into the pairwise statistic once the
diagonal contribution is known. All kernels built here have a zero diagonal
(ties count 0), so the conversion is a fixed rescaling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .kernels import (
    discretize_lipschitz,
    gini_diversity_fact,
    gini_diversity_matrix,
    grid_index,
    kendall_fact,
    kendall_matrix,
    kernel_matrix,
    lipschitz_bst_fact,
)
from .protocols import (
    NonInteractiveQuadraticForm,
    ProtocolEstimate,
    ThreeRoundQuadraticForm,
    _seed_int,
    quadratic_form_pipeline,
)
from .randomizers import derive_rng, randomized_response, rr_debias
from .workload import Dataset, Factorization, WorkloadMatrix, fact_balance


@dataclass(frozen=True)
class PairwiseKernel:
    name: str
    kernel_fn: Callable[[int, int], float]
    zero_diagonal: bool
    workload: WorkloadMatrix
    factorization: Factorization | None = None

    def __post_init__(self):
        W = self.workload.entries
        if not np.array_equal(W, W.T):
            raise ValueError(f"kernel {self.name!r} is not symmetric")
        if self.zero_diagonal and np.any(np.diag(W) != 0):
            raise ValueError(f"kernel {self.name!r} is flagged zero-diagonal but its diagonal is not 0")

    @property
    def k(self) -> int:
        return self.workload.k


def make_kernel(name: str, fn: Callable[[int, int], float], k: int,
                factorization: Factorization | None = None) -> PairwiseKernel:
    W = kernel_matrix(fn, k)
    return PairwiseKernel(name, fn, bool(np.all(np.diag(W) == 0)), WorkloadMatrix(W, True), factorization)


def gini_diversity_kernel(k: int) -> PairwiseKernel:
    return PairwiseKernel("gini_diversity", lambda i, j: float(i != j), True,
                          WorkloadMatrix(gini_diversity_matrix(k), True), gini_diversity_fact(k))


def flatten_pairs(y, z, k_B: int) -> np.ndarray:
    """``(y, z) -> (y - 1) k_B + z`` for 1-indexed coordinates."""
    return (np.asarray(y, dtype=np.int64) - 1) * k_B + np.asarray(z, dtype=np.int64)


def kendall_kernel(k_A: int, k_B: int) -> PairwiseKernel:
    def fn(a, b):
        (ya, za), (yb, zb) = divmod(a - 1, k_B), divmod(b - 1, k_B)
        return float(np.sign(ya - yb) * np.sign(za - zb))

    return PairwiseKernel(f"kendall:{k_A}x{k_B}", fn, True,
                          WorkloadMatrix(kendall_matrix(k_A, k_B), True), kendall_fact(k_A, k_B))


def auc_kernel(k_A: int) -> PairwiseKernel:
    kern = kendall_kernel(k_A, 2)
    return PairwiseKernel(f"auc:{k_A}", kern.kernel_fn, True, kern.workload, kern.factorization)


def auc_exact(scores, labels) -> float:
    """Fraction of (positive, negative) pairs ranked correctly, ties counting 1/2."""
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    pos, neg = scores[labels == 1], scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("AUC needs both labels present")
    neg_sorted = np.sort(neg)
    below = np.searchsorted(neg_sorted, pos, side="left")
    ties = np.searchsorted(neg_sorted, pos, side="right") - below
    return float((below.sum() + 0.5 * ties.sum()) / (pos.size * neg.size))


def pairwise_statistic_exact(kernel: PairwiseKernel, data: Dataset) -> float:
    """Average of the kernel over all unordered pairs of users."""
    if data.n < 2:
        raise ValueError("a pairwise statistic needs at least two users")
    if data.k != kernel.k:
        raise ValueError(f"dataset domain {data.k} does not match kernel domain {kernel.k}")
    # pair counts from the histogram; avoids an n x n matrix
    W = kernel.workload.entries
    c = np.bincount(data.index, minlength=data.k).astype(float)
    total = c @ W @ c - c @ np.diag(W)
    return float(total / 2 / math.comb(data.n, 2))


def ustat_from_qf(qf_value: float, n: int, kernel: PairwiseKernel | None = None,
                  diag: float | None = None) -> float:
    """Convert ``h^T W h`` into the pairwise average.

    For zero-diagonal kernels this is ``n / (n - 1) * qf``. Otherwise ``diag``
    must supply ``sum_b h_b W_bb`` (exact or estimated) and the result is
    ``(n qf - diag) / (n - 1)``.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if diag is None:
        if kernel is None or not kernel.zero_diagonal:
            raise ValueError("kernel has a nonzero diagonal; supply the diagonal term")
        diag = 0.0
    return (n * qf_value - diag) / (n - 1)


def _qf_protocol(F: Factorization, W, epsilon: float, protocol: str, n: int, jl_policy: str, seed: int):
    F = fact_balance(F)
    if protocol == "noninteractive":
        if jl_policy == "none":
            return NonInteractiveQuadraticForm(F, epsilon, W)
        proto = quadratic_form_pipeline(F, None, epsilon, n, jl_policy, seed)
        proto.workload = np.asarray(W, dtype=float)
        return proto
    if protocol == "three_round":
        return ThreeRoundQuadraticForm(F, epsilon, workload=W)
    raise ValueError(f"unknown quadratic-form protocol {protocol!r}")


def _as_statistic(est: ProtocolEstimate, value: float, name: str, **extra) -> ProtocolEstimate:
    params = dict(est.params, statistic=name, qf_estimate=est.value, **extra)
    return ProtocolEstimate(value, est.transcript_stats, params)


def run_pairwise_protocol(kernel: PairwiseKernel, data: Dataset, epsilon: float, seed=0,
                          protocol: str = "noninteractive", noise_off: bool = False,
                          jl_policy: str = "none") -> ProtocolEstimate:
    """Private pairwise statistic for a zero-diagonal kernel with a known factorization."""
    if kernel.factorization is None:
        raise ValueError(f"kernel {kernel.name!r} has no factorization")
    seed = _seed_int(seed)
    proto = _qf_protocol(kernel.factorization, kernel.workload.entries, epsilon, protocol, data.n,
                         jl_policy, seed)
    est = proto.run(data, seed, noise_off)
    return _as_statistic(est, ustat_from_qf(est.value, data.n, kernel), kernel.name)


def kendall_tau_protocol(y, z, k_A: int, k_B: int, epsilon: float, seed=0,
                         protocol: str = "noninteractive", noise_off: bool = False,
                         jl_policy: str = "none") -> ProtocolEstimate:
    """Kendall's tau (ties count 0) of paired ranks ``y in [k_A]``, ``z in [k_B]``.

    Noisy estimates are not clamped; ``params["out_of_range"]`` flags values
    outside ``[-1, 1]``.
    """
    kernel = kendall_kernel(k_A, k_B)
    data = Dataset(flatten_pairs(y, z, k_B), k_A * k_B)
    est = run_pairwise_protocol(kernel, data, epsilon, seed, protocol, noise_off, jl_policy)
    est.params["out_of_range"] = not -1.0 <= est.value <= 1.0
    return est


def auc_protocol(scores, labels, k_A: int, epsilon: float, seed=0, protocol: str = "noninteractive",
                 noise_off: bool = False, jl_policy: str = "none") -> ProtocolEstimate:
    """AUC of integer ``scores`` in ``[k_A]`` against binary ``labels``.

    Half the budget estimates ``S = sum_{i<j} sgn(s_i - s_j) sgn(l_i - l_j)``
    through the Kendall quadratic form over ``[k_A] x {0, 1}``; the other half
    estimates the positive count by randomized response. The estimate is
    ``1/2 + S / (2 n+ n-)`` clamped to ``[0, 1]`` (ties get half credit).
    """
    scores = np.asarray(scores, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    n = scores.size
    if n < 2 or labels.size != n:
        raise ValueError("need at least two labelled scores")
    seed = _seed_int(seed)
    kernel = auc_kernel(k_A)
    data = Dataset(flatten_pairs(scores, labels + 1, 2), 2 * k_A)
    est = run_pairwise_protocol(kernel, data, epsilon / 2, derive_rng(seed, "auc/qf"), protocol,
                                noise_off, jl_policy)
    S = est.value * math.comb(n, 2)

    if noise_off:
        n_pos = float(labels.sum())
    else:
        reported = randomized_response(labels, epsilon / 2, derive_rng(seed, "auc/rr"))
        n_pos = rr_debias(float(reported.sum()), n, epsilon / 2)
    n_neg = n - n_pos
    degenerate = n_pos <= 0 or n_neg <= 0
    denom = 2 * max(n_pos, 1.0) * max(n_neg, 1.0)
    raw = 0.5 + S / denom
    value = min(1.0, max(0.0, raw))

    budget = list(est.transcript_stats["budget"])
    budget.append({"round": 1, "message": "rr_label", "epsilon": epsilon / 2})
    stats = dict(est.transcript_stats, budget=budget, epsilon_spent=math.fsum(b["epsilon"] for b in budget))
    stats["rounds"] = list(est.transcript_stats["rounds"]) + [
        {"round": 1, "message": "rr_label", "count": n, "dim": 1}]
    params = dict(est.params, statistic=kernel.name, epsilon=epsilon, n_pos_estimate=n_pos,
                  pair_sum_estimate=S, raw_estimate=raw, degenerate=degenerate, clamped=value != raw)
    return ProtocolEstimate(value, stats, params)


class ContinuousPairwiseProtocol:
    """Pairwise statistic of a Lipschitz kernel on ``[0, 1]`` via grid discretization.

    Inputs are binned by :func:`grid_index`; the kernel is evaluated at bin
    midpoints, so each pair incurs at most ``G / k`` discretization bias.
    """

    def __init__(self, f: Callable[[float, float], float], G: float, n: int, epsilon: float,
                 max_k: int = 255, protocol: str = "noninteractive", jl_policy: str = "none",
                 name: str = "lipschitz", seed: int = 0):
        self.f = f
        self.G = G
        self.epsilon = epsilon
        self.k, self.g = discretize_lipschitz(f, G, n, epsilon, max_k)
        W = kernel_matrix(self.g, self.k)
        diagonal = np.diag(W)
        if np.any(diagonal != diagonal[0]):
            # a data-dependent diagonal term would need its own private estimate
            raise ValueError("kernel must take a constant value on identical inputs")
        self.diagonal = float(diagonal[0])
        # a constant kernel would shift to the zero matrix; keep it as is
        F = lipschitz_bst_fact(W, self.k, G / self.k, shift=bool(np.ptp(W) > 0))
        self.kernel = PairwiseKernel(name, self.g, self.diagonal == 0, WorkloadMatrix(W, True), F)
        self.protocol = protocol
        self.jl_policy = jl_policy
        self._proto = _qf_protocol(F, W, epsilon, protocol, n, jl_policy, seed)

    def discretize(self, x) -> Dataset:
        x = np.asarray(x, dtype=float)
        if np.any((x < 0) | (x > 1)):
            raise ValueError("inputs must lie in [0, 1]")
        return Dataset(grid_index(x, self.k), self.k)

    def exact_discretized(self, x) -> float:
        return pairwise_statistic_exact(self.kernel, self.discretize(x))

    def bias_bound(self) -> float:
        return self.G / self.k

    def run(self, x, seed=0, noise_off: bool = False) -> ProtocolEstimate:
        data = self.discretize(x)
        est = self._proto.run(data, seed, noise_off)
        value = ustat_from_qf(est.value, data.n, diag=self.diagonal)
        return _as_statistic(est, value, self.kernel.name, grid_k=self.k)


def gini_mean_difference_setup(n: int, epsilon: float, G: float = 1.0, max_k: int = 255,
                               protocol: str = "noninteractive", jl_policy: str = "none",
                               seed: int = 0) -> ContinuousPairwiseProtocol:
    """Gini's mean difference: the kernel ``|x - x'|`` on ``[0, 1]``."""
    return ContinuousPairwiseProtocol(lambda a, b: abs(a - b), G, n, epsilon, max_k, protocol,
                                      jl_policy, "gini_mean_difference", seed)
