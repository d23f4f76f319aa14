"""Dense/sparse numeric primitives.

Dense matrices are plain C-contiguous 2-D numpy arrays in the active
precision (float64 unless switched to float32 for benchmarks). Sparse
activations are per-row top-k ``(values, indices)`` pairs.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigError, ShapeError

INDEX_DTYPE = np.int32

_PRECISIONS = {"f64": np.float64, "f32": np.float32}
_precision = "f64"


def set_precision(name: str) -> None:
    global _precision
    if name not in _PRECISIONS:
        raise ConfigError(f"unknown precision {name!r}; expected one of {sorted(_PRECISIONS)}")
    _precision = name


def get_precision() -> str:
    return _precision


def get_dtype() -> type:
    return _PRECISIONS[_precision]


@contextlib.contextmanager
def precision(name: str):
    old = _precision
    set_precision(name)
    try:
        yield get_dtype()
    finally:
        set_precision(old)


@dataclass
class WorkCounter:
    """Scalar multiply-add and row counts, broken down by stage."""

    scalar_mul_adds: int = 0
    rows_touched: int = 0
    stages: dict[str, int] = field(default_factory=dict)

    def add(self, stage: str, mul_adds: int, rows: int = 0) -> None:
        self.scalar_mul_adds += int(mul_adds)
        self.rows_touched += int(rows)
        self.stages[stage] = self.stages.get(stage, 0) + int(mul_adds)

    def reset(self) -> None:
        self.scalar_mul_adds = 0
        self.rows_touched = 0
        self.stages = {}

    def as_dict(self) -> dict:
        return {
            "scalar_mul_adds": self.scalar_mul_adds,
            "rows_touched": self.rows_touched,
            "stages": dict(sorted(self.stages.items())),
        }


_counter = WorkCounter()


def work_counter() -> WorkCounter:
    return _counter


@contextlib.contextmanager
def counting(counter: WorkCounter | None = None):
    """Route work accounting into ``counter`` (a fresh one by default)."""
    global _counter
    old = _counter
    _counter = counter if counter is not None else WorkCounter()
    try:
        yield _counter
    finally:
        _counter = old


@dataclass
class SparseActivation:
    """Per-row top-k slice of a ``rows x full_width`` matrix."""

    values: np.ndarray
    indices: np.ndarray
    full_width: int

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape != self.indices.shape:
            raise ShapeError(
                f"values {self.values.shape} and indices {self.indices.shape} must be equal 2-D shapes"
            )
        if self.k > self.full_width:
            raise ShapeError(f"k={self.k} exceeds full_width={self.full_width}")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[1]

    def validate(self) -> None:
        """Check the index invariants (sorted, in range); O(rows*k)."""
        idx = self.indices
        if idx.size and (idx.min() < 0 or idx.max() >= self.full_width):
            raise ShapeError("sparse activation index out of range")
        if self.k > 1 and not np.all(np.diff(idx, axis=1) > 0):
            raise ShapeError("sparse activation indices must be strictly increasing per row")

    def nbytes(self) -> int:
        return self.values.nbytes + self.indices.nbytes


def _as_matrix(x, name="x") -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {x.shape}")
    return x


def split(x: np.ndarray, parts: int) -> list[np.ndarray]:
    """Column-split ``x`` into ``parts`` equal-width contiguous copies."""
    x = _as_matrix(x)
    if parts < 1 or x.shape[1] % parts:
        raise ConfigError(f"cannot split {x.shape[1]} cols into {parts} equal parts")
    w = x.shape[1] // parts
    return [np.ascontiguousarray(x[:, i * w:(i + 1) * w]) for i in range(parts)]


def concat(parts: list[np.ndarray]) -> np.ndarray:
    if not parts:
        raise ShapeError("concat needs at least one matrix")
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"row-count mismatch in concat: {sorted(rows)}")
    return np.concatenate([_as_matrix(p) for p in parts], axis=1)


_UINT_VIEW = {4: np.uint32, 8: np.uint64}


def gs_topk(x: np.ndarray, k: int, out: SparseActivation | None = None) -> SparseActivation:
    """Group-sparse selection: the ``k`` largest-magnitude entries of each row.

    Signs are preserved, ties go to the smaller column index and the kept
    indices are returned in ascending order.
    """
    x = _as_matrix(x)
    n, w = x.shape
    if not 1 <= k <= w:
        raise ConfigError(f"k={k} out of range [1, {w}]")
    if out is None:
        out = SparseActivation(np.empty((n, k), x.dtype), np.empty((n, k), INDEX_DTYPE), w)
    elif out.values.shape != (n, k):
        raise ShapeError(f"output buffer shape {out.values.shape} != {(n, k)}")
    out.full_width = w
    x = np.ascontiguousarray(x)
    bits = _UINT_VIEW[x.dtype.itemsize]
    _kernels.topk_rows(x.view(bits), x, k, bits(np.iinfo(bits).max >> 1), out.values, out.indices)
    return out


def scatter(s: SparseActivation, out: np.ndarray | None = None) -> np.ndarray:
    if out is None:
        out = np.empty((s.rows, s.full_width), s.values.dtype)
    elif out.shape != (s.rows, s.full_width):
        raise ShapeError(f"scatter output shape {out.shape} != {(s.rows, s.full_width)}")
    _kernels.scatter_rows(s.values, s.indices, out, False)
    return out


def scatter_add(s: SparseActivation, into: np.ndarray) -> np.ndarray:
    """``into += scatter(s)`` without materializing the scatter."""
    if into.shape != (s.rows, s.full_width):
        raise ShapeError(f"scatter_add target shape {into.shape} != {(s.rows, s.full_width)}")
    _kernels.scatter_rows(s.values, s.indices, into, True)
    return into


def gather(x: np.ndarray, idx: np.ndarray, out: np.ndarray | None = None) -> SparseActivation:
    x = _as_matrix(x)
    idx = np.asarray(idx)
    if idx.shape[0] != x.shape[0]:
        raise ShapeError(f"index rows {idx.shape[0]} != matrix rows {x.shape[0]}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[1]):
        raise ShapeError(f"gather index out of bounds for width {x.shape[1]}")
    if out is None:
        out = np.empty(idx.shape, x.dtype)
    _kernels.gather_rows(x, idx, out)
    return SparseActivation(out, idx, x.shape[1])


def gemm(a: np.ndarray, b: np.ndarray, accumulate_into: np.ndarray | None = None,
         out: np.ndarray | None = None) -> np.ndarray:
    """``a @ b`` (plus ``accumulate_into`` when given)."""
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"gemm shape mismatch: {a.shape} @ {b.shape}")
    _counter.add("transform", a.shape[0] * a.shape[1] * b.shape[1], a.shape[0])
    if accumulate_into is None:
        return np.matmul(a, b, out=out)
    if accumulate_into.shape != (a.shape[0], b.shape[1]):
        raise ShapeError(f"accumulator shape {accumulate_into.shape} != {(a.shape[0], b.shape[1])}")
    prod = np.matmul(a, b, out=out)
    return np.add(accumulate_into, prod, out=prod)


def _check_same(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def add(a, b, out=None):
    _check_same(a, b)
    return np.add(a, b, out=out)


def sub(a, b, out=None):
    _check_same(a, b)
    return np.subtract(a, b, out=out)


def axpy(alpha, x, y, out=None):
    """``alpha * x + y``."""
    _check_same(x, y)
    if out is None:
        return alpha * x + y
    np.multiply(x, alpha, out=out)
    return np.add(out, y, out=out)


def relu(x, out=None):
    return np.maximum(x, 0, out=out)
