"""Immutable CSR graphs, normalized aggregation and graph/node-data files."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import _kernels, tensor
from .errors import ConfigError, FormatError, ShapeError
from .tensor import SparseActivation

NORM_MODES = ("none", "row_mean", "sym_degree")

GRAPH_MAGIC = b"GSRG"
NODE_MAGIC = b"GSRN"
GRAPH_VERSION = 1


@dataclass(frozen=True, eq=False)
class CsrGraph:
    """Directed adjacency in CSR form; column ids sorted and unique per row."""

    n: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    norm_mode: str = "none"

    def __post_init__(self):
        if self.norm_mode not in NORM_MODES:
            raise ConfigError(f"unknown norm mode {self.norm_mode!r}")
        row_ptr = np.ascontiguousarray(self.row_ptr, dtype=np.int64)
        col_idx = np.ascontiguousarray(self.col_idx, dtype=np.int32)
        if row_ptr.shape != (self.n + 1,) or row_ptr[0] != 0 or row_ptr[-1] != col_idx.size:
            raise ShapeError("row_ptr must have n+1 entries from 0 to e")
        if np.any(np.diff(row_ptr) < 0):
            raise ShapeError("row_ptr must be non-decreasing")
        if col_idx.size and (col_idx.min() < 0 or col_idx.max() >= self.n):
            raise ShapeError("col_idx out of range")
        row_ptr.flags.writeable = False
        col_idx.flags.writeable = False
        object.__setattr__(self, "row_ptr", row_ptr)
        object.__setattr__(self, "col_idx", col_idx)

    @property
    def e(self) -> int:
        return int(self.col_idx.size)

    @cached_property
    def out_degree(self) -> np.ndarray:
        return np.diff(self.row_ptr)

    @cached_property
    def in_degree(self) -> np.ndarray:
        return np.bincount(self.col_idx, minlength=self.n)

    @cached_property
    def _weights64(self) -> np.ndarray:
        if self.norm_mode == "none":
            w = np.ones(self.e)
        elif self.norm_mode == "row_mean":
            w = np.repeat(1.0 / np.maximum(self.out_degree, 1), self.out_degree)
        else:
            rows = np.repeat(np.arange(self.n), self.out_degree)
            w = 1.0 / np.sqrt(self.out_degree[rows] * self.in_degree[self.col_idx].astype(np.float64))
        w.flags.writeable = False
        return w

    def weights(self, dtype=np.float64) -> np.ndarray:
        cache = self.__dict__.setdefault("_weights_by_dtype", {})
        key = np.dtype(dtype).str
        if key not in cache:
            w = self._weights64.astype(dtype)
            w.flags.writeable = False
            cache[key] = w
        return cache[key]

    @cached_property
    def _transposed(self):
        t_ptr, t_col, t_w = _kernels.transpose_csr(self.n, self.row_ptr, self.col_idx, self._weights64)
        return t_ptr, t_col, t_w

    def transpose_arrays(self, dtype=np.float64):
        """(row_ptr, col_idx, weights) of the normalized transpose, cached."""
        t_ptr, t_col, t_w = self._transposed
        cache = self.__dict__.setdefault("_tweights_by_dtype", {})
        key = np.dtype(dtype).str
        if key not in cache:
            cache[key] = t_w.astype(dtype)
        return t_ptr, t_col, cache[key]

    def _arrays(self, transpose: bool, dtype):
        if transpose:
            return self.transpose_arrays(dtype)
        return self.row_ptr, self.col_idx, self.weights(dtype)

    def with_norm(self, norm_mode: str) -> CsrGraph:
        return CsrGraph(self.n, self.row_ptr, self.col_idx, norm_mode)

    def dense(self) -> np.ndarray:
        """Normalized adjacency as a dense matrix (testing/oracle use)."""
        a = np.zeros((self.n, self.n))
        rows = np.repeat(np.arange(self.n), self.out_degree)
        a[rows, self.col_idx] = self._weights64
        return a

    def edges(self) -> np.ndarray:
        rows = np.repeat(np.arange(self.n, dtype=np.int64), self.out_degree)
        return np.stack([rows, self.col_idx.astype(np.int64)], axis=1)

    def is_symmetric(self) -> bool:
        t_ptr, t_col, _ = self._transposed
        return np.array_equal(t_ptr, self.row_ptr) and np.array_equal(t_col, self.col_idx)

    def same_structure(self, other: CsrGraph) -> bool:
        return (self.n == other.n and np.array_equal(self.row_ptr, other.row_ptr)
                and np.array_equal(self.col_idx, other.col_idx))


def from_edge_list(pairs, n: int, norm_mode: str = "none", symmetrize: bool = False) -> CsrGraph:
    """Build a deduplicated, row-sorted CSR graph from ``(u, v)`` pairs."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.size and (pairs.min() < 0 or pairs.max() >= n):
        bad = np.flatnonzero((pairs < 0).any(axis=1) | (pairs >= n).any(axis=1))[0]
        raise ShapeError(f"edge {tuple(pairs[bad].tolist())} (pair #{bad}) out of range for n={n}")
    if symmetrize:
        pairs = np.concatenate([pairs, pairs[:, ::-1]])
    keys = np.unique(pairs[:, 0] * n + pairs[:, 1])
    rows, cols = np.divmod(keys, n)
    row_ptr = np.zeros(n + 1, np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=row_ptr[1:])
    return CsrGraph(n, row_ptr, cols.astype(np.int32), norm_mode)


def spmm(g: CsrGraph, x: np.ndarray, transpose: bool = False, out: np.ndarray | None = None) -> np.ndarray:
    """``A_hat @ x`` (or ``A_hat.T @ x``) with the graph's normalization."""
    if x.ndim != 2 or x.shape[0] != g.n:
        raise ShapeError(f"spmm: x has shape {x.shape}, graph has {g.n} nodes")
    if out is None:
        out = np.empty(x.shape, x.dtype)
    row_ptr, col_idx, w = g._arrays(transpose, x.dtype)
    _kernels.spmm_dense(row_ptr, col_idx, w, x, out)
    tensor.work_counter().add("aggregate", g.e * x.shape[1], g.n)
    return out


def spmm_sparse(g: CsrGraph, s: SparseActivation, transpose: bool = False,
                out: np.ndarray | None = None) -> np.ndarray:
    """Same result as ``spmm(g, scatter(s))`` using O(e*k) work."""
    if s.rows != g.n:
        raise ShapeError(f"spmm_sparse: activation has {s.rows} rows, graph has {g.n} nodes")
    if out is None:
        out = np.empty((g.n, s.full_width), s.values.dtype)
    elif out.shape != (g.n, s.full_width):
        raise ShapeError(f"spmm_sparse: output shape {out.shape} != {(g.n, s.full_width)}")
    row_ptr, col_idx, w = g._arrays(transpose, s.values.dtype)
    _kernels.spmm_sparse(row_ptr, col_idx, w, s.values, s.indices, out)
    tensor.work_counter().add("aggregate", g.e * s.k, g.n)
    return out


# ---------------------------------------------------------------- node data


@dataclass
class NodeData:
    features: np.ndarray
    labels: np.ndarray
    split: np.ndarray  # uint8 per node: 0=train, 1=val, 2=test

    def __post_init__(self):
        n = self.features.shape[0]
        if self.labels.shape != (n,) or self.split.shape != (n,):
            raise ShapeError("features, labels and split must agree on node count")
        if not np.all(np.isfinite(self.labels)):
            raise ConfigError("labels must be finite")
        if self.split.size and self.split.max() > 2:
            raise ConfigError("split codes must be 0, 1 or 2")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def mask(self, name: str) -> np.ndarray:
        if name == "all":
            return np.ones(self.n, bool)
        code = {"train": 0, "val": 1, "test": 2}[name]
        return self.split == code

    @property
    def label_range(self) -> tuple[float, float]:
        return float(self.labels.min()), float(self.labels.max())


@dataclass
class SynthConfig:
    n: int = 2000
    base_degree: int = 4
    hub_fraction: float = 0.01
    hub_degree_range: tuple[int, int] = (50, 200)
    label_smoothing_hops: int = 2
    noise_std: float = 0.02
    seed: int = 0
    random_channels: int = 6
    long_range_fraction: float = 0.2
    norm_mode: str = "row_mean"
    extra: dict = field(default_factory=dict, repr=False)

    def validate(self) -> None:
        lo, hi = self.hub_degree_range
        if self.n < 4:
            raise ConfigError("synthetic graph needs n >= 4")
        if not 0.0 <= self.hub_fraction <= 1.0:
            raise ConfigError(f"hub_fraction {self.hub_fraction} outside [0, 1]")
        if not 1 <= self.base_degree < self.n:
            raise ConfigError(f"base_degree {self.base_degree} must be in [1, n)")
        n_hubs = int(round(self.hub_fraction * self.n))
        if n_hubs:
            if not 1 <= lo <= hi:
                raise ConfigError(f"hub_degree_range {self.hub_degree_range} must satisfy 1 <= min <= max")
            if hi >= self.n - n_hubs:
                raise ConfigError(
                    f"hub degree max {hi} infeasible: only {self.n - n_hubs} non-hub nodes"
                )


def _ring_lattice(n: int, degree: int) -> np.ndarray:
    half = degree // 2
    src = np.repeat(np.arange(n), half)
    dst = (src + np.tile(np.arange(1, half + 1), n)) % n
    pairs = [np.stack([src, dst], 1)]
    if degree % 2:
        u = np.arange(n // 2)
        pairs.append(np.stack([u, u + n // 2], 1))
    return np.concatenate(pairs)


def generate_synthetic(cfg: SynthConfig) -> tuple[CsrGraph, NodeData]:
    """Circuit-like graph: a near-regular lattice plus a few very high-degree hubs.

    Labels are a degree-driven congestion proxy smoothed over neighborhoods;
    they only stand in for real routing-congestion targets.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n
    pairs = [_ring_lattice(n, cfg.base_degree)]

    n_long = int(cfg.long_range_fraction * n) // 2 * 2
    if n_long:
        ends = rng.permutation(n)[:n_long].reshape(-1, 2)
        pairs.append(ends)

    n_hubs = int(round(cfg.hub_fraction * n))
    if n_hubs:
        hubs = rng.choice(n, n_hubs, replace=False)
        is_hub = np.zeros(n, bool)
        is_hub[hubs] = True
        others = np.flatnonzero(~is_hub)
        lo, hi = cfg.hub_degree_range
        degrees = rng.integers(lo, hi + 1, n_hubs)
        for h, d in zip(hubs, degrees):
            nbrs = others[rng.choice(others.size, d, replace=False)]
            pairs.append(np.stack([np.full(d, h), nbrs], 1))

    g = from_edge_list(np.concatenate(pairs), n, norm_mode=cfg.norm_mode, symmetrize=True)

    deg = g.out_degree.astype(np.float64)
    mean_g = g.with_norm("row_mean")
    congestion = np.log1p(deg)
    for _ in range(cfg.label_smoothing_hops):
        congestion = 0.5 * congestion + 0.5 * spmm(mean_g, congestion[:, None])[:, 0]
    span = congestion.max() - congestion.min()
    labels = (congestion - congestion.min()) / (span if span > 0 else 1.0)
    labels = labels + rng.normal(0.0, cfg.noise_std, n)

    log_deg = np.log1p(deg)
    log_deg = (log_deg - log_deg.mean()) / (log_deg.std() or 1.0)
    clustering = _kernels.local_clustering(n, g.row_ptr, g.col_idx)
    feats = np.column_stack([log_deg, clustering, rng.standard_normal((n, cfg.random_channels))])

    order = rng.permutation(n)
    split = np.zeros(n, np.uint8)
    n_train, n_val = int(0.8 * n), int(0.1 * n)
    split[order[n_train:n_train + n_val]] = 1
    split[order[n_train + n_val:]] = 2
    return g, NodeData(np.ascontiguousarray(feats), labels, split)


def degree_summary(g: CsrGraph, hub_min: int | None = None) -> dict:
    deg = g.out_degree
    hist = np.bincount(deg)
    mode = int(hist.argmax())
    summary = {
        "nodes": g.n,
        "edges": g.e,
        "min_degree": int(deg.min()) if g.n else 0,
        "max_degree": int(deg.max()) if g.n else 0,
        "mean_degree": float(deg.mean()) if g.n else 0.0,
        "mode_degree": mode,
    }
    if hub_min is not None:
        summary["hub_nodes"] = int((deg >= hub_min).sum())
        summary["two_mode"] = bool(summary["hub_nodes"] > 0 and mode < hub_min)
    return summary


# ---------------------------------------------------------------- file I/O


def write_graph(path, g: CsrGraph, fmt: str = "binary") -> None:
    path = Path(path)
    if fmt == "text":
        lines = [f"{g.n} {g.e}"]
        lines += [f"{u} {v}" for u, v in g.edges()]
        path.write_text("\n".join(lines) + "\n", encoding="ascii")
        return
    if fmt != "binary":
        raise ConfigError(f"unknown graph format {fmt!r}")
    with open(path, "wb") as f:
        f.write(GRAPH_MAGIC)
        f.write(struct.pack("<IQQ", GRAPH_VERSION, g.n, g.e))
        f.write(g.row_ptr.astype("<u8").tobytes())
        f.write(g.col_idx.astype("<u4").tobytes())


def _read_text_graph(text: str, norm_mode: str) -> CsrGraph:
    lines = text.splitlines()
    if not lines:
        raise FormatError("empty edge-list file", 0)
    try:
        n, e = (int(t) for t in lines[0].split())
    except ValueError:
        raise FormatError("line 1: expected 'N E' header") from None
    pairs = np.empty((e, 2), np.int64)
    count = 0
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise FormatError(f"line {lineno}: expected 'u v', got {line!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise FormatError(f"line {lineno}: non-integer node id in {line!r}") from None
        if not (0 <= u < n and 0 <= v < n):
            raise FormatError(f"line {lineno}: node id out of range [0, {n})")
        if count >= e:
            raise FormatError(f"line {lineno}: more edges than the declared {e}")
        pairs[count] = u, v
        count += 1
    if count != e:
        raise FormatError(f"declared {e} edges but found {count}")
    return from_edge_list(pairs, n, norm_mode)


def _unpack(fmt: str, data: bytes, offset: int, what: str):
    size = struct.calcsize(fmt)
    if offset + size > len(data):
        raise FormatError(f"truncated file while reading {what}", offset)
    return struct.unpack_from(fmt, data, offset), offset + size


def _array(data: bytes, offset: int, count: int, dtype: str, what: str):
    nbytes = count * np.dtype(dtype).itemsize
    if offset + nbytes > len(data):
        raise FormatError(f"truncated file while reading {what}", offset)
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
    return arr, offset + nbytes


def _check_version(version: int, offset: int) -> None:
    if version == GRAPH_VERSION:
        return
    if version == int.from_bytes(GRAPH_VERSION.to_bytes(4, "big"), "little"):
        raise FormatError("endianness marker mismatch (big-endian header)", offset)
    raise FormatError(f"unsupported version {version}", offset)


def read_graph(path, norm_mode: str = "none") -> CsrGraph:
    """Load a graph in either the binary or the text edge-list format."""
    data = Path(path).read_bytes()
    if data[:4] != GRAPH_MAGIC:
        if data[:1].isdigit():
            return _read_text_graph(data.decode("ascii"), norm_mode)
        raise FormatError(f"bad magic {data[:4]!r}, expected {GRAPH_MAGIC!r}", 0)
    (version,), off = _unpack("<I", data, 4, "version")
    _check_version(version, 4)
    (n, e), off = _unpack("<QQ", data, off, "header")
    row_ptr, off = _array(data, off, n + 1, "<u8", "row_ptr")
    col_idx, off = _array(data, off, e, "<u4", "col_idx")
    if off != len(data):
        raise FormatError(f"{len(data) - off} trailing bytes", off)
    if row_ptr[-1] != e:
        raise FormatError("row_ptr does not end at e", 4 + 4 + 16 + 8 * n)
    try:
        return CsrGraph(int(n), row_ptr.astype(np.int64), col_idx.astype(np.int32), norm_mode)
    except ShapeError as exc:
        raise FormatError(f"invalid CSR structure: {exc}") from None


def write_node_data(path, data: NodeData) -> None:
    n, d = data.features.shape
    with open(path, "wb") as f:
        f.write(NODE_MAGIC)
        f.write(struct.pack("<QQ", n, d))
        f.write(data.features.astype("<f8").tobytes())
        f.write(data.labels.astype("<f8").tobytes())
        f.write(data.split.astype(np.uint8).tobytes())


def read_node_data(path) -> NodeData:
    data = Path(path).read_bytes()
    if data[:4] != NODE_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {NODE_MAGIC!r}", 0)
    (n, d), off = _unpack("<QQ", data, 4, "header")
    feats, off = _array(data, off, n * d, "<f8", "features")
    labels, off = _array(data, off, n, "<f8", "labels")
    split, off = _array(data, off, n, "u1", "split")
    if off != len(data):
        raise FormatError(f"{len(data) - off} trailing bytes", off)
    return NodeData(feats.reshape(n, d).astype(np.float64), labels.astype(np.float64),
                    split.astype(np.uint8))
