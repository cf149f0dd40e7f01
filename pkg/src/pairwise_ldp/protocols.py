"""Simulated local-DP protocols for linear queries and quadratic forms.

Users are simulated in-process and vectorized; each protocol round draws its
user messages from its own stream derived from ``(seed, round tag)``. Every
protocol accepts ``noise_off=True``, which suppresses all noise draws while
keeping the deterministic arithmetic (including clipping) intact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .kernels import JL_CONSTANT, jl_reduce, jl_rows, resolve_workload
from .randomizers import clip, derive_rng, laplace_noise, vrand_batch
from .workload import (
    Dataset,
    Factorization,
    as_matrix,
    fact_balance,
    histogram_of,
    inf_norm,
    one_to_two_norm,
)

_CHUNK_ELEMENTS = 1 << 21


@dataclass
class ProtocolEstimate:
    """Protocol output plus per-round message counts and the privacy ledger.

    ``transcript_stats["budget"]`` lists one entry per randomizer applied to
    each user's input; the entries sum to the configured epsilon.
    """

    value: Union[float, np.ndarray]
    transcript_stats: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    @property
    def epsilon_spent(self) -> float:
        return math.fsum(entry["epsilon"] for entry in self.transcript_stats.get("budget", []))


@dataclass
class ProjectionResult:
    """Point of the symmetric hull ``conv{+-R_j, 0}`` with its convex weights.

    ``convex_weights`` has length ``2k``: weights on ``+R_j`` then ``-R_j``;
    the remaining mass ``1 - sum`` sits on the origin.
    """

    mu: np.ndarray
    convex_weights: np.ndarray
    fw_gap: float
    iterations: int = 0
    target: np.ndarray | None = None

    def reconstruct(self, R) -> np.ndarray:
        R = as_matrix(R)
        k = R.shape[1]
        return R @ (self.convex_weights[:k] - self.convex_weights[k:])


class _Transcript:
    def __init__(self):
        self.rounds: list[dict] = []
        self.budget: list[dict] = []
        self.aggregates: dict[str, np.ndarray] = {}

    def message(self, round_no: int, tag: str, n: int, dim: int, epsilon: float):
        self.rounds.append({"round": round_no, "message": tag, "count": n, "dim": dim})
        self.budget.append({"round": round_no, "message": tag, "epsilon": epsilon})

    def extend(self, stats: dict, prefix: str):
        for r in stats.get("rounds", []):
            self.rounds.append(dict(r, message=f"{prefix}/{r['message']}"))
        for b in stats.get("budget", []):
            self.budget.append(dict(b, message=f"{prefix}/{b['message']}"))
        for key, agg in stats.get("aggregates", {}).items():
            self.aggregates[f"{prefix}/{key}"] = agg

    def stats(self) -> dict:
        return {
            "rounds": self.rounds,
            "budget": self.budget,
            "epsilon_spent": math.fsum(b["epsilon"] for b in self.budget),
            "aggregates": self.aggregates,
        }


def _seed_int(seed) -> int:
    if isinstance(seed, np.random.Generator):
        return int(seed.integers(2**63))
    return int(seed)


def _user_index(data) -> np.ndarray:
    if isinstance(data, Dataset):
        return data.index
    return np.asarray(data, dtype=np.int64).reshape(-1) - 1


def _vrand_messages(M: np.ndarray, idx: np.ndarray, C: float, epsilon: float,
                    rng: np.random.Generator, noise_off: bool) -> np.ndarray:
    """Per-user messages ``vrand(M[:, x_i])`` as an ``(n, ell)`` array."""
    X = M.T[idx]
    if noise_off:
        return X
    return vrand_batch(X, C, epsilon, rng)


def _vrand_sum(M: np.ndarray, idx: np.ndarray, C: float, epsilon: float,
               rng: np.random.Generator, noise_off: bool) -> np.ndarray:
    """Sum over users of ``vrand(M[:, x_i])``, generated in memory-bounded chunks."""
    if noise_off:
        return M @ np.bincount(idx, minlength=M.shape[1]).astype(float)
    chunk = max(1, _CHUNK_ELEMENTS // M.shape[0])
    total = np.zeros(M.shape[0])
    for start in range(0, idx.size, chunk):
        total += vrand_batch(M.T[idx[start:start + chunk]], C, epsilon, rng).sum(axis=0)
    return total


def _require_balanced(F: Factorization):
    if not F.is_balanced(1e-8):
        a, b = F.norms()
        raise ValueError(f"factorization is not balanced (|L|={a}, |R|={b}); apply fact_balance first")


# -- linear queries: matrix mechanism ----------------------------------------------


def linear_query_protocol(F: Factorization, data, epsilon: float, seed=0,
                          noise_off: bool = False, C: float | None = None) -> ProtocolEstimate:
    """Users privatize their column of ``R``; the analyst returns ``L^T`` times the mean."""
    _require_balanced(F)
    R = np.asarray(F.R)
    bound = one_to_two_norm(R)
    if C is not None:
        if bound > C * (1 + 1e-9):
            raise ValueError(f"a column of R has norm {bound} > C={C}")
        bound = C
    idx = _user_index(data)
    seed = _seed_int(seed)
    t = _Transcript()
    mean_R = _vrand_sum(R, idx, bound, epsilon, derive_rng(seed, "lq/yR"), noise_off) / idx.size
    t.message(1, "yR", idx.size, F.ell, epsilon)
    t.aggregates["yR"] = mean_R
    value = F.L.T @ mean_R + F.offset
    return ProtocolEstimate(value, t.stats(), {"protocol": "linear_query", "epsilon": epsilon,
                                               "n": int(idx.size), "C": bound, "ell": F.ell})


# -- non-interactive quadratic form ------------------------------------------------


@dataclass
class QFMessages:
    yl: np.ndarray
    yr: np.ndarray


class NonInteractiveQuadraticForm:
    """One message pair per user: ``vrand(L e_x)`` and ``vrand(R e_x)`` at ``epsilon / 2`` each.

    The randomizer (:meth:`randomize`) and estimator (:meth:`estimate`) are
    exposed separately so they can be reused by the linear-query reduction.
    """

    interactive = False
    name = "noninteractive"

    def __init__(self, factorization: Factorization, epsilon: float, workload=None, info=None):
        _require_balanced(factorization)
        if not epsilon > 0:
            raise ValueError("epsilon must be positive")
        self.factorization = factorization
        self.epsilon = float(epsilon)
        self.workload = factorization.product() if workload is None else as_matrix(workload)
        self.C = one_to_two_norm(factorization.R)
        self.info = dict(info or {})

    @property
    def epsilon_per_message(self) -> float:
        return self.epsilon / 2

    def with_epsilon(self, epsilon: float) -> "NonInteractiveQuadraticForm":
        return NonInteractiveQuadraticForm(self.factorization, epsilon, self.workload, self.info)

    def randomize(self, data, rng: np.random.Generator, noise_off: bool = False) -> QFMessages:
        idx = _user_index(data)
        F, eb = self.factorization, self.epsilon_per_message
        yl = _vrand_messages(np.asarray(F.L), idx, self.C, eb, rng, noise_off)
        yr = _vrand_messages(np.asarray(F.R), idx, self.C, eb, rng, noise_off)
        return QFMessages(yl, yr)

    def estimate(self, *message_sets: QFMessages) -> float:
        yl = np.concatenate([m.yl for m in message_sets])
        yr = np.concatenate([m.yr for m in message_sets])
        return float(yl.mean(axis=0) @ yr.mean(axis=0)) + self.factorization.offset

    def run(self, data, seed=0, noise_off: bool = False) -> ProtocolEstimate:
        idx = _user_index(data)
        F, eb, n = self.factorization, self.epsilon_per_message, idx.size
        seed = _seed_int(seed)
        mean_L = _vrand_sum(np.asarray(F.L), idx, self.C, eb, derive_rng(seed, "qf/yL"), noise_off) / n
        mean_R = _vrand_sum(np.asarray(F.R), idx, self.C, eb, derive_rng(seed, "qf/yR"), noise_off) / n
        t = _Transcript()
        t.message(1, "yL", n, F.ell, eb)
        t.message(1, "yR", n, F.ell, eb)
        t.aggregates.update(yL=mean_L, yR=mean_R)
        value = float(mean_L @ mean_R) + F.offset
        params = {"protocol": self.name, "epsilon": self.epsilon, "n": int(n), "C": self.C,
                  "ell": F.ell, "alpha": F.alpha, **self.info}
        return ProtocolEstimate(value, t.stats(), params)


def quadratic_form_noninteractive(F: Factorization, data, epsilon: float, seed=0,
                                  noise_off: bool = False) -> ProtocolEstimate:
    return NonInteractiveQuadraticForm(F, epsilon).run(data, seed, noise_off)


def quadratic_form_pipeline(source, k: int | None, epsilon: float, n: int, policy: str = "jl",
                            seed: int = 0, c_jl: float = JL_CONSTANT) -> NonInteractiveQuadraticForm:
    """Factorize, balance and (policy ``"jl"``) JL-restrict a workload.

    ``source`` is a workload name (see :func:`resolve_workload`), a
    :class:`Factorization`, or a square matrix (factorized by SVD). The JL
    step uses ``target_alpha = |L| |R| / (epsilon sqrt(n))`` and is skipped when
    the factorization already has at most as many rows as the JL target, or
    when that slack is not below ``|L| |R|``.
    """
    if policy not in ("jl", "none"):
        raise ValueError(f"unknown JL policy {policy!r}")
    if isinstance(source, str):
        F, W = resolve_workload(source, k)
    elif isinstance(source, Factorization):
        F, W = source, source.product()
    else:
        from .kernels import svd_fact

        W = as_matrix(source)
        F = svd_fact(W)
    F = fact_balance(F)
    info = {"jl_policy": policy, "jl_applied": False}
    if policy == "jl":
        gamma = F.norm_product()
        target_alpha = gamma / (epsilon * math.sqrt(n))
        info["jl_target_alpha"] = target_alpha
        if target_alpha < gamma:
            rows = jl_rows(F.k, target_alpha, math.sqrt(gamma), c_jl)
            info["jl_rows"] = rows
            if rows < F.ell:
                F = fact_balance(jl_reduce(F, target_alpha, derive_rng(seed, "jl"), c_jl))
                info["jl_applied"] = True
    info.update(ell=F.ell, alpha=F.alpha, C=one_to_two_norm(F.R))
    return NonInteractiveQuadraticForm(F, epsilon, W, info)


# -- projection mechanism ----------------------------------------------------------


def frank_wolfe_projection(R, Y, iters: int = 2000, tol: float = 1e-8) -> ProjectionResult:
    """Project ``Y`` onto ``conv{+-R_j, 0}`` by Frank-Wolfe with exact line search.

    Starts at the origin. Each step moves toward the vertex maximizing
    ``<v, Y - mu>`` and stops once the duality gap ``<mu - v, mu - Y>`` is
    below ``tol``. The returned ``mu`` is recomputed from the convex
    weights, so membership holds up to rounding.
    """
    R = as_matrix(R)
    Y = np.asarray(Y, dtype=float)
    k = R.shape[1]
    weights = np.zeros(2 * k)
    mu = np.zeros(R.shape[0])
    gap = math.inf
    it = 0
    for it in range(1, iters + 1):
        resid = Y - mu
        scores = R.T @ resid
        j = int(np.argmax(np.abs(scores)))
        sign = 1.0 if scores[j] >= 0 else -1.0
        vertex = sign * R[:, j]
        gap = abs(scores[j]) - float(resid @ mu)
        if gap <= tol:
            break
        direction = vertex - mu
        denom = float(direction @ direction)
        if denom == 0.0:
            break
        step = min(1.0, max(0.0, gap / denom))
        weights *= 1.0 - step
        weights[j if sign > 0 else k + j] += step
        mu = mu + step * direction
    mu = R @ (weights[:k] - weights[k:])
    return ProjectionResult(mu, weights, float(gap), it, Y)


def projection_mechanism(R, data, epsilon: float, seed=0, fw_iters: int = 2000,
                         noise_off: bool = False, fw_tol: float = 1e-8) -> ProjectionResult:
    """Users send ``vrand(R e_x)`` with ``C = |R|_{1->2}``; the mean is projected onto ``R^Delta``."""
    R = as_matrix(R)
    idx = _user_index(data)
    C = one_to_two_norm(R)
    Y = _vrand_sum(R, idx, C, epsilon, derive_rng(_seed_int(seed), "proj/y"), noise_off) / idx.size
    return frank_wolfe_projection(R, Y, fw_iters, fw_tol)


# -- three-round interactive quadratic form ----------------------------------------


class ThreeRoundQuadraticForm:
    """Projection of ``R h`` first, then a Laplace-privatized correction around it.

    Each user's input is touched four times at ``epsilon / 4``: the projection
    message, ``vrand(L e_x)``, ``a_i`` and ``v_i``.
    """

    interactive = True
    name = "three_round"

    def __init__(self, factorization: Factorization, epsilon: float, fw_iters: int = 2000,
                 fw_tol: float = 1e-8, workload=None, info=None):
        _require_balanced(factorization)
        if not epsilon > 0:
            raise ValueError("epsilon must be positive")
        self.factorization = factorization
        self.epsilon = float(epsilon)
        self.fw_iters = fw_iters
        self.fw_tol = fw_tol
        self.workload = factorization.product() if workload is None else as_matrix(workload)
        self.C = one_to_two_norm(factorization.R)
        self.w_inf = inf_norm(factorization.L.T @ factorization.R)
        if self.w_inf == 0:
            raise ValueError("three-round protocol needs a nonzero workload")
        self.tau = 4 * self.w_inf
        self.info = dict(info or {})

    def with_epsilon(self, epsilon: float) -> "ThreeRoundQuadraticForm":
        return ThreeRoundQuadraticForm(self.factorization, epsilon, self.fw_iters, self.fw_tol,
                                       self.workload, self.info)

    def run(self, data, seed=0, noise_off: bool = False, mu_override=None) -> ProtocolEstimate:
        """Run all three rounds.

        ``mu_override`` replaces the round-one projection output (it must be
        a point of ``R^Delta``); the round-one messages are still generated.
        """
        F = self.factorization
        L, R = np.asarray(F.L), np.asarray(F.R)
        idx = _user_index(data)
        n = idx.size
        eb = self.epsilon / 4
        seed = _seed_int(seed)
        t = _Transcript()

        # round 1: projection mechanism on R
        Y_R = _vrand_sum(R, idx, self.C, eb, derive_rng(seed, "r1/proj"), noise_off) / n
        proj = frank_wolfe_projection(R, Y_R, self.fw_iters, self.fw_tol)
        mu = proj.mu if mu_override is None else np.asarray(
            mu_override.mu if isinstance(mu_override, ProjectionResult) else mu_override, dtype=float)
        t.message(1, "proj", n, F.ell, eb)
        t.aggregates.update(Y_R=Y_R, mu_R=mu)

        # round 2: vrand(L e_x) and <L e_x, mu> + Lap(2 |W|_inf / eb)
        Y_L = _vrand_sum(L, idx, self.C, eb, derive_rng(seed, "r2/yL"), noise_off) / n
        a = (L.T @ mu)[idx]
        if not noise_off:
            a = a + laplace_noise(2 * self.w_inf / eb, n, derive_rng(seed, "r2/a"))
        t.message(2, "yL", n, F.ell, eb)
        t.message(2, "a", n, 1, eb)

        # round 3: clip(<Y_L, R e_x - mu>) + Lap(2 tau / eb)
        v = clip((R.T @ Y_L - Y_L @ mu)[idx], self.tau)
        if not noise_off:
            v = v + laplace_noise(2 * self.tau / eb, n, derive_rng(seed, "r3/v"))
        t.message(3, "v", n, 1, eb)
        t.aggregates.update(Y_L=Y_L, a_mean=np.array([a.mean()]), v_mean=np.array([v.mean()]))

        value = float(a.mean() + v.mean()) + F.offset
        params = {"protocol": self.name, "epsilon": self.epsilon, "n": int(n), "C": self.C,
                  "tau": self.tau, "w_inf": self.w_inf, "fw_gap": proj.fw_gap,
                  "fw_iterations": proj.iterations, **self.info}
        return ProtocolEstimate(value, t.stats(), params)


def quadratic_form_three_round(F: Factorization, data, epsilon: float, seed=0,
                               noise_off: bool = False, **kwargs) -> ProtocolEstimate:
    return ThreeRoundQuadraticForm(F, epsilon, **kwargs).run(data, seed, noise_off)


# -- quadratic form -> linear queries ----------------------------------------------

ProtocolFactory = Callable[[float, int], NonInteractiveQuadraticForm]


def lq_from_qf_reduction(qf_protocol, data, epsilon: float, seed=0,
                         noise_off: bool = False) -> ProtocolEstimate:
    """Answer all linear queries ``W h`` with a non-interactive quadratic-form protocol.

    ``qf_protocol`` is a non-interactive protocol (re-budgeted internally) or
    a factory ``(epsilon, n) -> protocol``. With ``y`` the dataset of ``n``
    copies of ``j``, ``(W h)_j = 2 q_j - q / 2 - W_jj / 2`` where ``q`` is the
    form on ``x`` and ``q_j`` the form on ``x`` joined with ``y``.
    """
    if callable(qf_protocol) and not hasattr(qf_protocol, "randomize"):
        make: ProtocolFactory = qf_protocol
    else:
        if getattr(qf_protocol, "interactive", True) or not hasattr(qf_protocol, "randomize"):
            raise ValueError("the reduction needs a non-interactive protocol with a standalone randomizer")
        base = qf_protocol

        def make(eps, n):
            return base.with_epsilon(eps)

    idx = _user_index(data)
    n = idx.size
    proto_n = make(epsilon / 2, n)
    proto_2n = make(epsilon / 2, 2 * n)
    for proto in (proto_n, proto_2n):
        if getattr(proto, "interactive", True) or not hasattr(proto, "randomize"):
            raise ValueError("the reduction needs a non-interactive protocol with a standalone randomizer")
    W = proto_2n.workload
    if W.shape[0] != W.shape[1] or not np.allclose(W, W.T, rtol=0, atol=1e-12):
        raise ValueError("the reduction requires a symmetric workload")
    k = W.shape[0]
    seed = _seed_int(seed)

    qf_est = proto_n.run(idx + 1, derive_rng(seed, "red/qf"), noise_off)
    x_msgs = proto_2n.randomize(idx + 1, derive_rng(seed, "red/x"), noise_off)
    z = np.empty(k)
    for j in range(k):
        y_msgs = proto_2n.randomize(np.full(n, j + 1), derive_rng(seed, "red/sim", j), noise_off)
        z_joint = proto_2n.estimate(x_msgs, y_msgs)
        z[j] = 2 * z_joint - 0.5 * qf_est.value - 0.5 * W[j, j]

    t = _Transcript()
    t.extend(qf_est.transcript_stats, "qf")
    t.message(1, "lq/yL", n, proto_2n.factorization.ell, proto_2n.epsilon_per_message)
    t.message(1, "lq/yR", n, proto_2n.factorization.ell, proto_2n.epsilon_per_message)
    t.rounds.append({"round": 1, "message": "simulated", "count": n * k, "dim": proto_2n.factorization.ell})
    return ProtocolEstimate(z, t.stats(), {"protocol": "reduction", "epsilon": epsilon, "n": int(n),
                                           "qf_estimate": qf_est.value})


# -- approximate workload wrapper --------------------------------------------------


class ApproximateWorkloadProtocol:
    """Run ``inner`` (built on an approximation ``W_tilde``) but score against ``W``."""

    def __init__(self, W, W_tilde, inner):
        self.W = as_matrix(W)
        self.W_tilde = as_matrix(W_tilde)
        if self.W.shape != self.W_tilde.shape:
            raise ValueError(f"dimension mismatch: W {self.W.shape}, W_tilde {self.W_tilde.shape}")
        inner_W = getattr(inner, "workload", None)
        if inner_W is not None and inner_W.shape != self.W.shape:
            raise ValueError("inner protocol runs on a different domain size")
        self.inner = inner
        self.bias_bound = inf_norm(self.W_tilde - self.W)
        self.interactive = getattr(inner, "interactive", False)

    def exact_value(self, data) -> float:
        h = histogram_of(data if isinstance(data, Dataset) else Dataset(data, self.W.shape[0]))
        return float(h.weights @ self.W @ h.weights)

    def run(self, data, seed=0, noise_off: bool = False) -> ProtocolEstimate:
        est = self.inner.run(data, seed, noise_off)
        est.params = dict(est.params, bias_bound=self.bias_bound, wrapped=True)
        return est


def approximate_workload_protocol(W, W_tilde, inner) -> ApproximateWorkloadProtocol:
    return ApproximateWorkloadProtocol(W, W_tilde, inner)

