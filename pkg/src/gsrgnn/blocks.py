"""Per-group message-passing blocks.

``dense_block`` is the baseline block ``A_hat @ relu(x) @ W (+ b)``; the GSR
blocks consume a top-k sparse activation instead and never materialize its
dense scatter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import graph as G
from . import tensor as T
from .errors import SequencingError, ShapeError
from .graph import CsrGraph
from .tensor import SparseActivation


@dataclass
class BlockParams:
    w: np.ndarray
    b: np.ndarray
    use_weight: bool = True
    use_bias: bool = False

    def __post_init__(self):
        if self.w.ndim != 2 or self.w.shape[0] != self.w.shape[1]:
            raise ShapeError(f"block weight must be square, got {self.w.shape}")
        if self.b.shape != (self.w.shape[0],):
            raise ShapeError(f"bias shape {self.b.shape} does not match width {self.w.shape[0]}")

    @property
    def width(self) -> int:
        return self.w.shape[0]

    @classmethod
    def init(cls, width: int, rng: np.random.Generator, scale: float = 1.0,
             use_weight: bool = True, use_bias: bool = False, dtype=None) -> BlockParams:
        dtype = dtype or T.get_dtype()
        w = rng.normal(0.0, scale / np.sqrt(width), (width, width)).astype(dtype)
        return cls(w, np.zeros(width, dtype), use_weight, use_bias)

    @classmethod
    def identity(cls, width: int, dtype=None) -> BlockParams:
        """Flags off: the block reduces to plain aggregation."""
        dtype = dtype or T.get_dtype()
        return cls(np.eye(width, dtype=dtype), np.zeros(width, dtype), False, False)

    def astype(self, dtype) -> BlockParams:
        return BlockParams(self.w.astype(dtype), self.b.astype(dtype), self.use_weight, self.use_bias)


@dataclass
class BlockGrads:
    dw: np.ndarray
    db: np.ndarray
    count: int = 0

    @classmethod
    def zeros_like(cls, p: BlockParams) -> BlockGrads:
        return cls(np.zeros_like(p.w), np.zeros_like(p.b))


def zero_grads(grads: BlockGrads) -> None:
    grads.dw.fill(0)
    grads.db.fill(0)
    grads.count = 0


def apply_grads(p: BlockParams, grads: BlockGrads, optimizer, key: str) -> None:
    """One optimizer step on ``p`` from ``grads``; grads are zeroed afterwards."""
    if grads.dw.shape != p.w.shape or grads.db.shape != p.b.shape:
        raise ShapeError("gradient shapes do not match parameters")
    if p.use_weight:
        optimizer.update(f"{key}.w", p.w, grads.dw)
    if p.use_bias:
        optimizer.update(f"{key}.b", p.b, grads.db)
    zero_grads(grads)


class BlockCache:
    """Indices (optionally values) saved by a forward block for its backward."""

    def __init__(self, name: str = "", keep_values: bool = False):
        self.name = name
        self.keep_values = keep_values
        self._indices: np.ndarray | None = None
        self._values: np.ndarray | None = None

    @property
    def occupied(self) -> bool:
        return self._indices is not None

    def store(self, s: SparseActivation) -> None:
        if self.occupied:
            raise SequencingError(f"cache {self.name!r} already holds a forward result")
        self._indices = s.indices
        self._values = s.values if self.keep_values else None
        self._width = s.full_width

    def peek(self) -> SparseActivation:
        if not self.occupied:
            raise SequencingError(f"cache {self.name!r} is empty: backward without forward")
        vals = self._values if self._values is not None else np.zeros(self._indices.shape)
        return SparseActivation(vals, self._indices, self._width)

    def take(self) -> tuple[np.ndarray, np.ndarray | None]:
        if not self.occupied:
            raise SequencingError(f"cache {self.name!r} is empty: backward without forward")
        out = (self._indices, self._values)
        self.clear()
        return out

    def clear(self) -> None:
        self._indices = None
        self._values = None

    def nbytes(self) -> int:
        if not self.occupied:
            return 0
        return self._indices.nbytes + (self._values.nbytes if self._values is not None else 0)


def apply_transform(agg, p: BlockParams, out):
    """``agg @ W + b`` honouring the block flags; may return ``agg`` itself."""
    if p.use_weight:
        out = T.gemm(agg, p.w, out=out)
    elif out is None:
        out = agg
    elif out is not agg:
        np.copyto(out, agg)
    if p.use_bias:
        out += p.b
    return out


def dense_block(x: np.ndarray, g: CsrGraph, p: BlockParams, relu: bool = True,
                out: np.ndarray | None = None, tmp: np.ndarray | None = None,
                agg: np.ndarray | None = None) -> np.ndarray:
    """``A_hat @ relu(x) @ W + b``; ReLU is applied on the block input."""
    if x.ndim != 2 or x.shape[0] != g.n or x.shape[1] != p.width:
        raise ShapeError(f"dense_block: x {x.shape} vs n={g.n}, width={p.width}")
    u = T.relu(x, out=tmp) if relu else x
    a = G.spmm(g, u, out=agg)
    return apply_transform(a, p, out)


def dense_block_vjp(x: np.ndarray, g: CsrGraph, p: BlockParams, gout: np.ndarray,
                    grads: BlockGrads | None, *, u=None, a=None, f=None, gin=None):
    """Recompute ``dense_block(x)`` and pull ``gout`` back through it.

    Returns ``(gin, f)`` with ``f`` the recomputed block output and ``gin``
    the input gradient. ``u``/``a``/``f``/``gin`` are optional scratch arrays
    of the block's shape; ``u`` and ``a`` are overwritten.
    """
    u = T.relu(x, out=u)
    a = G.spmm(g, u, out=a)
    f = apply_transform(a, p, f)
    if grads is not None:
        if p.use_weight:
            grads.dw += T.gemm(a.T, gout)
        if p.use_bias:
            grads.db += gout.sum(axis=0)
        grads.count += 1
    # a is free once dW has been accumulated
    da = T.gemm(gout, p.w.T, out=a) if p.use_weight else gout
    du = G.spmm(g, da, transpose=True, out=u)
    gin = np.multiply(du, x > 0, out=gin)
    return gin, f


def gsr_forward_block(s: SparseActivation, g: CsrGraph, p: BlockParams,
                      cache: BlockCache | None = None, out: np.ndarray | None = None,
                      tmp: np.ndarray | None = None) -> np.ndarray:
    """``A_hat @ scatter(s) @ W + b`` via the sparse aggregation kernel."""
    if s.rows != g.n or s.full_width != p.width:
        raise ShapeError(f"gsr_forward_block: activation {s.rows}x{s.full_width} "
                         f"vs n={g.n}, width={p.width}")
    if cache is not None and cache.occupied:
        raise SequencingError(f"cache {cache.name!r} already holds a forward result")
    agg = G.spmm_sparse(g, s, out=tmp if p.use_weight else out)
    m = apply_transform(agg, p, out)
    if cache is not None:
        cache.store(s)
    return m


def gsr_backward_block(m: np.ndarray, cache: BlockCache, g: CsrGraph, p: BlockParams,
                       grads: BlockGrads | None = None,
                       param_input: SparseActivation | None = None,
                       out: np.ndarray | None = None, tmp: np.ndarray | None = None,
                       gathered: np.ndarray | None = None) -> np.ndarray:
    """Sparse gradient path through a GSR block.

    The cached indices pick which entries of ``m @ W.T`` are propagated;
    the result is ``A_hat.T @ scatter(gather(m @ W.T, I))``. Parameter
    gradients use ``param_input`` (the block's forward input) when given,
    otherwise the cache's own values if it kept them.
    """
    if m.ndim != 2 or m.shape != (g.n, p.width):
        raise ShapeError(f"gsr_backward_block: m {m.shape} vs {(g.n, p.width)}")
    if not cache.occupied:
        raise SequencingError(f"cache {cache.name!r} is empty: backward without forward")
    if grads is not None:
        if param_input is None:
            param_input = cache.peek()
        accumulate_block_grads(m, g, p, grads, param_input, tmp=tmp)
    idx, _ = cache.take()
    t = T.gemm(m, p.w.T, out=tmp) if p.use_weight else m
    vg = T.gather(t, idx, out=gathered)
    return G.spmm_sparse(g, vg, transpose=True, out=out)


def accumulate_block_grads(m: np.ndarray, g: CsrGraph, p: BlockParams, grads: BlockGrads,
                           fwd_input: SparseActivation, tmp: np.ndarray | None = None) -> np.ndarray:
    """``dW += (A_hat @ scatter(S)).T @ m`` and ``db += colsum(m)``.

    Same value as ``scatter(S).T @ (A_hat.T @ m)`` with O(e*k) aggregation
    instead of a dense transposed pass. Returns the aggregate ``A_hat @ S``.
    """
    agg = G.spmm_sparse(g, fwd_input, out=tmp)
    if p.use_weight:
        grads.dw += T.gemm(agg.T, m)
    if p.use_bias:
        grads.db += m.sum(axis=0)
    grads.count += 1
    return agg
