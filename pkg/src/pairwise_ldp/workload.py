"""Workload matrices, factorizations, histograms and exact (non-private) evaluation.

A factorization ``(L, R)`` represents the matrix ``L.T @ R + offset * ones``.
The offset is a rank-one constant shift; since every normalized histogram
satisfies ``h @ ones @ h == 1`` it can be added back to any estimate exactly.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

ArrayLike = Union[np.ndarray, Sequence[Sequence[float]]]


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class WorkloadMatrix:
    """A real ``k_rows x k_cols`` workload (kernel or query) matrix."""

    entries: np.ndarray
    symmetric_flag: bool = False

    def __post_init__(self):
        entries = _frozen(self.entries)
        if entries.ndim != 2:
            raise ValueError(f"workload must be 2-d, got shape {entries.shape}")
        if not np.all(np.isfinite(entries)):
            raise ValueError("workload entries must be finite")
        if self.symmetric_flag and not (
            entries.shape[0] == entries.shape[1] and np.array_equal(entries, entries.T)
        ):
            raise ValueError("symmetric_flag set but entries are not exactly symmetric")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def from_array(cls, a: ArrayLike) -> "WorkloadMatrix":
        entries = np.asarray(a, dtype=float)
        sym = entries.ndim == 2 and entries.shape[0] == entries.shape[1] and np.array_equal(entries, entries.T)
        return cls(entries, symmetric_flag=bool(sym))

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    @property
    def k(self) -> int:
        return self.entries.shape[1]


def as_matrix(W) -> np.ndarray:
    """Return the dense float array behind a workload-like argument."""
    if isinstance(W, WorkloadMatrix):
        return W.entries
    return np.asarray(W, dtype=float)


@dataclass(frozen=True)
class Dataset:
    """User inputs ``x_1..x_n``, each in ``{1, ..., k}`` (1-indexed)."""

    values: np.ndarray
    k: int

    def __post_init__(self):
        values = _frozen(self.values, dtype=np.int64).reshape(-1)
        if self.k < 1:
            raise ValueError("domain size k must be >= 1")
        if values.size < 1:
            raise ValueError("dataset needs at least one user")
        if values.min() < 1 or values.max() > self.k:
            raise ValueError(f"values must lie in [1, {self.k}]")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return int(self.values.size)

    @property
    def index(self) -> np.ndarray:
        """0-indexed copy of the values, for array indexing."""
        return self.values - 1


@dataclass(frozen=True)
class Histogram:
    weights: np.ndarray

    def __post_init__(self):
        w = _frozen(self.weights).reshape(-1)
        if np.any(w < 0):
            raise ValueError("histogram weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"histogram weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "weights", w)

    @property
    def k(self) -> int:
        return int(self.weights.size)


def histogram_of(data: Dataset) -> Histogram:
    counts = np.bincount(data.index, minlength=data.k)
    return Histogram(counts / data.n)


def _weights(h) -> np.ndarray:
    return h.weights if isinstance(h, Histogram) else np.asarray(h, dtype=float)


def quadratic_form_exact(W, h) -> float:
    """``h^T W h``, accumulated row by row."""
    W = as_matrix(W)
    h = _weights(h)
    if W.ndim != 2 or W.shape[0] != W.shape[1] or W.shape[0] != h.size:
        raise ValueError(f"dimension mismatch: W {W.shape}, h {h.shape}")
    return float(h @ (W @ h))


def linear_queries_exact(W, h) -> np.ndarray:
    W = as_matrix(W)
    h = _weights(h)
    if W.ndim != 2 or W.shape[1] != h.size:
        raise ValueError(f"dimension mismatch: W {W.shape}, h {h.shape}")
    return W @ h


def inf_norm(W) -> float:
    """Largest absolute entry."""
    return float(np.max(np.abs(as_matrix(W))))


def one_to_two_norm(M) -> float:
    """Largest Euclidean norm over the columns of ``M``."""
    M = as_matrix(M)
    return float(np.sqrt(np.max(np.sum(M * M, axis=0))))


def column_norms(M) -> np.ndarray:
    M = as_matrix(M)
    return np.sqrt(np.sum(M * M, axis=0))


@dataclass(frozen=True)
class Factorization:
    """``L, R`` of shape ``(ell, k)`` with ``L.T @ R + offset`` approximating a target.

    ``alpha`` is the declared entrywise slack against the target the
    factorization was built for.
    """

    L: np.ndarray
    R: np.ndarray
    alpha: float = 0.0
    offset: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        L = _frozen(np.atleast_2d(self.L))
        R = _frozen(np.atleast_2d(self.R))
        if L.shape != R.shape:
            raise ValueError(f"L {L.shape} and R {R.shape} must have identical shapes")
        if L.shape[0] < 1:
            raise ValueError("factorization needs at least one row")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "R", R)

    @property
    def ell(self) -> int:
        return self.L.shape[0]

    @property
    def k(self) -> int:
        return self.L.shape[1]

    def product(self) -> np.ndarray:
        """The represented matrix ``L^T R + offset * 1 1^T``."""
        P = self.L.T @ self.R
        if self.offset:
            P = P + self.offset
        return P

    def norms(self) -> tuple[float, float]:
        return one_to_two_norm(self.L), one_to_two_norm(self.R)

    def norm_product(self) -> float:
        a, b = self.norms()
        return a * b

    def is_balanced(self, rtol: float = 1e-8) -> bool:
        a, b = self.norms()
        return abs(a - b) <= rtol * max(a, b, 1e-300)


def factorization_residual(F: Factorization, W) -> float:
    W = as_matrix(W)
    if W.shape != (F.k, F.k):
        raise ValueError(f"dimension mismatch: factorization k={F.k}, W {W.shape}")
    return inf_norm(F.product() - W)


def fact_balance(F: Factorization) -> Factorization:
    """Rescale so both factors share the 1->2 norm ``sqrt(|L| |R|)``."""
    a, b = F.norms()
    if a == 0 or b == 0:
        raise ValueError("cannot balance a factorization with a zero factor")
    c = np.sqrt(b / a)
    return Factorization(c * F.L, F.R / c, F.alpha, F.offset, dict(F.meta))


def fact_sum(FA: Factorization, FB: Factorization) -> Factorization:
    """Stack rows so that the product is ``A + B``."""
    if FA.k != FB.k:
        raise ValueError(f"cannot add factorizations over k={FA.k} and k={FB.k}")
    return Factorization(
        np.vstack([FA.L, FB.L]),
        np.vstack([FA.R, FB.R]),
        FA.alpha + FB.alpha,
        FA.offset + FB.offset,
    )


def fact_kron(FA: Factorization, FB: Factorization) -> Factorization:
    """Kronecker product; the product is ``A kron B``.

    Offsets are not supported here (the shifted Kronecker product is not rank
    structured); shift after composing instead.
    """
    if FA.offset or FB.offset:
        raise ValueError("fact_kron requires zero-offset factorizations")
    A = FA.L.T @ FA.R
    B = FB.L.T @ FB.R
    alpha = FA.alpha * inf_norm(B) + FB.alpha * inf_norm(A) + FA.alpha * FB.alpha
    return Factorization(np.kron(FA.L, FB.L), np.kron(FA.R, FB.R), alpha)


def fact_scale(F: Factorization, c: float) -> Factorization:
    return Factorization(c * F.L, F.R.copy(), abs(c) * F.alpha, c * F.offset, dict(F.meta))


# -- plain-text dense matrix format -------------------------------------------------


def format_matrix(M) -> str:
    M = np.atleast_2d(as_matrix(M))
    lines = [f"{M.shape[0]} {M.shape[1]}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in M]
    return "\n".join(lines) + "\n"


def _parse_blocks(text: str) -> list[list[str]]:
    blocks, cur = [], []
    for line in text.splitlines():
        if line.strip():
            cur.append(line.strip())
        elif cur:
            blocks.append(cur)
            cur = []
    if cur:
        blocks.append(cur)
    return blocks


def _parse_matrix_lines(lines: list[str]) -> np.ndarray:
    try:
        rows, cols = (int(t) for t in lines[0].split())
    except ValueError as exc:
        raise ValueError(f"bad matrix header {lines[0]!r}") from exc
    body = lines[1:]
    if len(body) != rows:
        raise ValueError(f"expected {rows} rows, found {len(body)}")
    M = np.array([[float(t) for t in line.split()] for line in body], dtype=float).reshape(rows, -1)
    if M.shape != (rows, cols):
        raise ValueError(f"expected shape {(rows, cols)}, found {M.shape}")
    return M


def parse_matrix(text: str) -> np.ndarray:
    blocks = _parse_blocks(text)
    if len(blocks) != 1:
        raise ValueError(f"expected one matrix block, found {len(blocks)}")
    return _parse_matrix_lines(blocks[0])


def parse_matrices(text: str) -> list[np.ndarray]:
    """Parse several blank-line separated matrices (e.g. a transcript dump)."""
    return [_parse_matrix_lines(b) for b in _parse_blocks(text)]


def read_matrix(path) -> np.ndarray:
    return parse_matrix(Path(path).read_text())


def write_matrix(path, M) -> None:
    Path(path).write_text(format_matrix(M))


def format_bundle(F: Factorization, W=None) -> str:
    """Header ``alpha <v>`` (plus ``offset <v>`` when nonzero), then L, R and W."""
    out = io.StringIO()
    out.write(f"alpha {F.alpha!r}\n")
    if F.offset:
        out.write(f"offset {F.offset!r}\n")
    out.write("\n")
    out.write(format_matrix(F.L))
    out.write("\n")
    out.write(format_matrix(F.R))
    out.write("\n")
    out.write(format_matrix(F.product() if W is None else W))
    return out.getvalue()


def parse_bundle(text: str) -> tuple[Factorization, np.ndarray]:
    blocks = _parse_blocks(text)
    if len(blocks) != 4:
        raise ValueError(f"factorization bundle needs a header and 3 matrices, found {len(blocks)} blocks")
    header = {}
    for line in blocks[0]:
        key, _, value = line.partition(" ")
        header[key] = float(value)
    if "alpha" not in header:
        raise ValueError("bundle header is missing 'alpha'")
    L, R, W = (_parse_matrix_lines(b) for b in blocks[1:])
    return Factorization(L, R, header["alpha"], header.get("offset", 0.0)), W


def write_bundle(path, F: Factorization, W=None) -> None:
    Path(path).write_text(format_bundle(F, W))


def read_bundle(path) -> tuple[Factorization, np.ndarray]:
    return parse_bundle(Path(path).read_text())
