"""Explicit factorizations for pairwise kernels and the JL rank restriction."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .workload import (
    Factorization,
    as_matrix,
    column_norms,
    fact_balance,
    fact_kron,
    fact_scale,
    fact_sum,
    inf_norm,
    read_matrix,
)

JL_CONSTANT = 8.0
JL_MAX_RETRIES = 20
DEFAULT_MAX_GRID = 2**16 - 1


class JLRetryError(RuntimeError):
    """Every JL draw failed verification; beta is too aggressive for the constant."""


def identity_fact(k: int) -> Factorization:
    if k < 1:
        raise ValueError("k must be >= 1")
    I = np.eye(k)
    return Factorization(I, I)


def all_ones_fact(k: int) -> Factorization:
    if k < 1:
        raise ValueError("k must be >= 1")
    ones = np.ones((1, k))
    return Factorization(ones, ones)


def gini_diversity_matrix(k: int) -> np.ndarray:
    return 1.0 - np.eye(k)


def gini_diversity_fact(k: int) -> Factorization:
    """``1 1^T - I``: the kernel ``1[x != x']``. Norm product at most 2."""
    if k < 2:
        raise ValueError("Gini diversity needs k >= 2")
    return fact_balance(fact_sum(all_ones_fact(k), fact_scale(identity_fact(k), -1.0)))


def prefix_matrix(m: int) -> np.ndarray:
    """``T[i, j] = 1`` iff ``i <= j``."""
    return np.triu(np.ones((m, m)))


def _dyadic_intervals(m: int) -> list[tuple[int, int]]:
    # intervals [a, b) of length 2^s aligned at multiples of 2^s, contained in [0, m)
    out = []
    size = 1
    while size <= m:
        for a in range(0, m - size + 1, size):
            out.append((a, a + size))
        size *= 2
    return out


def prefix_tree_fact(m: int) -> Factorization:
    """Dyadic factorization of the upper-triangular all-ones matrix.

    Row ``I`` of ``L`` marks membership in the dyadic interval ``I``; row ``I``
    of ``R`` marks the intervals used by the canonical decomposition of each
    prefix ``{1..j}``. Each column lies in at most ``floor(log2 m) + 1``
    intervals, which bounds both 1->2 norms.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    intervals = _dyadic_intervals(m)
    row = {iv: r for r, iv in enumerate(intervals)}
    L = np.zeros((len(intervals), m))
    R = np.zeros((len(intervals), m))
    for r, (a, b) in enumerate(intervals):
        L[r, a:b] = 1.0
    for j in range(m):
        # prefix [0, j] (0-indexed, inclusive) = binary expansion of j + 1
        start, remaining = 0, j + 1
        for s in reversed(range(remaining.bit_length())):
            if remaining >> s & 1:
                R[row[(start, start + (1 << s))], j] = 1.0
                start += 1 << s
    return Factorization(L, R)


def sign_comparison_matrix(m: int) -> np.ndarray:
    """``U_m``: +1 on and above the diagonal, -1 below."""
    return 2.0 * prefix_matrix(m) - 1.0


def sign_comparison_fact(m: int) -> Factorization:
    """``U_m = 2 T_m - 1 1^T``; norm product at most ``2 (floor(log2 m) + 1) + 1``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    twice_prefix = fact_balance(fact_scale(prefix_tree_fact(m), 2.0))
    minus_ones = fact_balance(fact_scale(all_ones_fact(m), -1.0))
    return fact_balance(fact_sum(twice_prefix, minus_ones))


def strict_sign_matrix(m: int) -> np.ndarray:
    """``S[i, j] = sgn(j - i)``: ``U_m`` with its diagonal zeroed."""
    return np.sign(np.arange(m)[None, :] - np.arange(m)[:, None]).astype(float)


def strict_sign_fact(m: int) -> Factorization:
    """``U_m - I``, the comparison matrix with ``sgn(0) = 0`` on ties."""
    neg_identity = fact_balance(fact_scale(identity_fact(m), -1.0))
    return fact_balance(fact_sum(sign_comparison_fact(m), neg_identity))


def kendall_matrix(k_A: int, k_B: int) -> np.ndarray:
    return np.kron(strict_sign_matrix(k_A), strict_sign_matrix(k_B))


def kendall_fact(k_A: int, k_B: int) -> Factorization:
    """Kendall kernel ``sgn(y - y') sgn(z - z')`` over ``(y, z)`` flattened as ``(y-1) k_B + z``.

    Built as the Kronecker product of the tie-aware comparison factors, so
    pairs tied in either coordinate (including identical inputs) map to 0.
    """
    if k_A < 1 or k_B < 1:
        raise ValueError("k_A and k_B must be >= 1")
    return fact_balance(fact_kron(strict_sign_fact(k_A), strict_sign_fact(k_B)))


# -- Lipschitz kernels via a balanced binary search tree ----------------------------


def bst_size(k: int) -> int:
    """Smallest ``2^q - 1`` that is ``>= k``."""
    return (1 << max(k, 1).bit_length()) - 1 if k & (k + 1) else k


def bst_parent(j: int, size: int) -> int | None:
    """Parent of node ``j`` (1-indexed, in-order numbering) or None for the root."""
    low = j & -j
    parent = (j - low) | (low << 1)
    return None if parent > size else parent


def bst_depth(j: int, size: int) -> int:
    q = size.bit_length()
    return q - 1 - ((j & -j).bit_length() - 1)


def kernel_matrix(f: Callable[[int, int], float], k: int) -> np.ndarray:
    """Materialize ``W[i-1, j-1] = f(i, j)`` for ``i, j`` in ``1..k``."""
    return np.array([[f(i, j) for j in range(1, k + 1)] for i in range(1, k + 1)], dtype=float)


def lipschitz_bst_fact(f, k: int, G: float | None = None, shift: bool = False) -> Factorization:
    """Telescoping factorization of a kernel along root paths of a balanced BST.

    ``f`` is either a callable on ``1..k`` or a precomputed ``k x k`` matrix.
    With ``shift=True`` the midrange ``c = (max + min) / 2`` is removed first
    and carried as the factorization offset. ``G`` is only recorded.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    W = kernel_matrix(f, k) if callable(f) else as_matrix(f)
    if W.shape != (k, k):
        raise ValueError(f"kernel matrix has shape {W.shape}, expected {(k, k)}")
    if not np.allclose(W, W.T, rtol=0, atol=1e-12):
        raise ValueError("kernel must be symmetric")
    offset = 0.0
    if shift:
        offset = 0.5 * (W.max() + W.min())
        W = W - offset

    size = bst_size(k)
    # padded symbols reuse the kernel value of the nearest real symbol
    clamp = np.minimum(np.arange(size), k - 1)
    Wp = W[np.ix_(clamp, clamp)]

    L = np.zeros((size, size))
    R = np.zeros((size, size))
    for j in range(1, size + 1):
        depth = bst_depth(j, size)
        parent = bst_parent(j, size)
        prev = Wp[:, parent - 1] if parent is not None else 0.0
        L[j - 1] = (6 / 5) ** depth * (Wp[:, j - 1] - prev)
        t = j
        while t is not None:
            R[t - 1, j - 1] = (5 / 6) ** bst_depth(t, size)
            t = bst_parent(t, size)
    meta = {"lipschitz": G, "bst_size": size}
    return Factorization(L[:, :k], R[:, :k], 0.0, offset, meta)


# -- JL rank restriction -----------------------------------------------------------


def jl_rows(k: int, target_alpha: float, C: float, c_jl: float = JL_CONSTANT) -> int:
    """Number of projected rows ``ceil(c_jl * beta^-2 * ln(4k + 2))`` with ``beta = alpha / (2 C^2)``."""
    beta = 0.5 * target_alpha / C**2
    return math.ceil(c_jl * beta**-2 * math.log(4 * k + 2))


def jl_reduce(
    F: Factorization,
    target_alpha: float,
    rng: np.random.Generator,
    c_jl: float = JL_CONSTANT,
    max_retries: int = JL_MAX_RETRIES,
) -> Factorization:
    """Project both factors with one Gaussian matrix and verify the result.

    A draw is accepted when the product moves by at most ``target_alpha``
    entrywise and no column grows by more than ``sqrt(1 + beta)``.
    """
    if not F.is_balanced(1e-6):
        raise ValueError("jl_reduce expects a balanced factorization")
    C2 = F.norm_product()
    if not 0 < target_alpha < C2:
        raise ValueError(f"target_alpha must lie in (0, {C2}), got {target_alpha}")
    beta = 0.5 * target_alpha / C2
    rows = jl_rows(F.k, target_alpha, math.sqrt(C2), c_jl)
    L, R = np.asarray(F.L), np.asarray(F.R)
    P = L.T @ R
    bound_L = math.sqrt(1 + beta) * column_norms(L)
    bound_R = math.sqrt(1 + beta) * column_norms(R)
    for attempt in range(1, max_retries + 1):
        A = rng.standard_normal((rows, F.ell)) / math.sqrt(rows)
        AL, AR = A @ L, A @ R
        residual = inf_norm(AL.T @ AR - P)
        if (
            residual <= target_alpha
            and np.all(column_norms(AL) <= bound_L)
            and np.all(column_norms(AR) <= bound_R)
        ):
            meta = dict(F.meta, jl_rows=rows, jl_attempts=attempt, jl_residual=residual, jl_beta=beta)
            return Factorization(AL, AR, F.alpha + target_alpha, F.offset, meta)
    raise JLRetryError(f"no JL draw with {rows} rows passed verification in {max_retries} attempts")


# -- continuous Lipschitz kernels ---------------------------------------------------


def discretize_lipschitz(f: Callable[[float, float], float], G: float, n: int, epsilon: float,
                         max_k: int = DEFAULT_MAX_GRID):
    """Choose a grid size ``k ~ epsilon n^2`` and the discrete kernel on its bin midpoints.

    Returns ``(k, g)`` with ``g(i, j) = f((i - 1/2) / k, (j - 1/2) / k)``; ``g``
    is ``G / k``-Lipschitz on the integer grid and every input in ``[0, 1]``
    is within ``1 / (2k)`` of its bin midpoint.
    """
    if G <= 0 or n < 1 or epsilon <= 0:
        raise ValueError("need G > 0, n >= 1, epsilon > 0")
    k = bst_size(max(1, min(math.ceil(epsilon * n * n), max_k)))

    def g(i, j):
        return f((i - 0.5) / k, (j - 0.5) / k)

    return k, g


def grid_index(x, k: int) -> np.ndarray:
    """Bin of each ``x`` in ``[0, 1]``: ``ceil(x k)`` clamped to ``[1, k]``."""
    x = np.asarray(x, dtype=float)
    return np.clip(np.ceil(x * k), 1, k).astype(np.int64)


LIPSCHITZ_BUILTINS: dict[str, Callable[[float, float], float]] = {
    "absdiff": lambda x, y: abs(x - y),
    "sqdiff": lambda x, y: (x - y) ** 2,
    "min": lambda x, y: min(x, y),
    "max": lambda x, y: max(x, y),
}


def svd_fact(W) -> Factorization:
    """Exact (not norm-optimal) factorization ``L = S^1/2 U^T``, ``R = S^1/2 V^T``."""
    W = as_matrix(W)
    U, s, Vt = np.linalg.svd(W)
    keep = s > s.max() * 1e-14 if s.size and s.max() > 0 else np.zeros_like(s, dtype=bool)
    keep[0] = True
    root = np.sqrt(s[keep])[:, None]
    return fact_balance(Factorization(root * U[:, keep].T, root * Vt[keep]))


def resolve_workload(name: str, k: int | None = None) -> tuple[Factorization, np.ndarray]:
    """Build ``(factorization, target matrix)`` from a workload name.

    Names: ``identity``, ``all_ones``, ``gini_diversity``, ``prefix_tree``,
    ``sign_comparison``, ``kendall:<kA>x<kB>``, ``auc:<kA>``,
    ``lipschitz:<fn>:<G>`` (grid of size ``k``), ``gini_mean_difference``
    (``lipschitz:absdiff:1``), ``file:<path>``.
    """
    if name == "gini_mean_difference":
        name = "lipschitz:absdiff:1"
    kind, _, rest = name.partition(":")
    if kind in ("identity", "all_ones", "gini_diversity", "prefix_tree", "sign_comparison",
                "lipschitz") and not k:
        raise ValueError(f"workload {name!r} needs k")
    if kind == "identity":
        return identity_fact(k), np.eye(k)
    if kind == "all_ones":
        return all_ones_fact(k), np.ones((k, k))
    if kind == "gini_diversity":
        return gini_diversity_fact(k), gini_diversity_matrix(k)
    if kind == "prefix_tree":
        return fact_balance(prefix_tree_fact(k)), prefix_matrix(k)
    if kind == "sign_comparison":
        return fact_balance(sign_comparison_fact(k)), sign_comparison_matrix(k)
    if kind == "kendall":
        a, _, b = rest.partition("x")
        kA, kB = int(a), int(b)
        return kendall_fact(kA, kB), kendall_matrix(kA, kB)
    if kind == "auc":
        kA = int(rest)
        return kendall_fact(kA, 2), kendall_matrix(kA, 2)
    if kind == "lipschitz":
        fn_name, _, G = rest.partition(":")
        if fn_name not in LIPSCHITZ_BUILTINS:
            raise ValueError(f"unknown Lipschitz kernel {fn_name!r}; choose from {sorted(LIPSCHITZ_BUILTINS)}")
        fn = LIPSCHITZ_BUILTINS[fn_name]
        W = kernel_matrix(lambda i, j: fn((i - 0.5) / k, (j - 0.5) / k), k)
        F = lipschitz_bst_fact(W, k, float(G) if G else None)
        return fact_balance(F), W
    if kind == "file":
        W = read_matrix(rest)
        if W.shape[0] != W.shape[1]:
            raise ValueError(f"workload file must be square, got {W.shape}")
        return svd_fact(W), W
    raise ValueError(f"unknown workload {name!r}")
