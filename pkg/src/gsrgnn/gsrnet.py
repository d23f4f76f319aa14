"""Two-group sparse-reversible network.

Forward layer, with ``GS`` the per-row top-k selection and ``A``/``B`` the
two sparse blocks::

    (v1, i1) = GS(x1);  x2' = x2 + A(v1, i1)
    (v2, i2) = GS(x2'); x1' = scatter(v1, i1) + B(v2, i2)

The gradient procedure reuses the forward-style blocks on gradients::

    (v2, i2) = GS(g2);  m1 = g1 - B(v2, i2)
    (v1, i1) = GS(m1);  m2 = scatter(v2, i2) - A(v1, i1)
    g1' = A^T(m1, i1);  g2' = B^T(m2, i2)

It is gradient-shaped rather than an exact adjoint. Block parameter
gradients use each block's forward input: ``(v1, i1)`` is retained from
the forward pass, and block B's input is read back as ``gather(x2', i2)``
while ``x2`` is rebuilt layer by layer from the final activation via
``x2 = x2' - A(v1, i1)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import graph as G
from . import tensor as T
from .arena import Workspace
from .blocks import (BlockCache, BlockGrads, BlockParams, accumulate_block_grads, apply_transform,
                     gsr_backward_block, gsr_forward_block)
from .errors import ConfigError, SequencingError, ShapeError
from .graph import CsrGraph
from .linear import Linear
from .model import RunContext
from .tensor import SparseActivation

INDEX_SOURCES = ("local", "forward")


@dataclass
class GsrLayer:
    blocks: list[BlockParams]
    k: int
    cache_a: BlockCache = field(default=None, repr=False)
    cache_b: BlockCache = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.blocks) != 2:
            raise ConfigError(f"a sparse-reversible layer has exactly 2 blocks, got {len(self.blocks)}")
        if self.blocks[0].width != self.blocks[1].width:
            raise ShapeError("both blocks of a layer must share one width")
        if not 1 <= self.k <= self.width:
            raise ConfigError(f"k={self.k} must lie in [1, {self.width}] (half the hidden width)")
        self.cache_a = self.cache_a or BlockCache("A", keep_values=True)
        self.cache_b = self.cache_b or BlockCache("B", keep_values=False)

    @property
    def width(self) -> int:
        return self.blocks[0].width

    @property
    def hidden(self) -> int:
        return 2 * self.width

    @property
    def caches(self) -> tuple[BlockCache, BlockCache]:
        return self.cache_a, self.cache_b

    def cache_nbytes(self) -> int:
        return self.cache_a.nbytes() + self.cache_b.nbytes()

    @classmethod
    def init(cls, hidden: int, k: int, rng: np.random.Generator, scale: float = 1.0,
             use_weight: bool = True, use_bias: bool = False, dtype=None) -> GsrLayer:
        if hidden % 2:
            raise ConfigError(f"hidden width must be even, got {hidden}")
        w = hidden // 2
        return cls([BlockParams.init(w, rng, scale, use_weight, use_bias, dtype) for _ in range(2)], k)


def forward_groups(x1: np.ndarray, x2: np.ndarray, g: CsrGraph, layer: GsrLayer,
                   ws: Workspace, key: str = "layer") -> None:
    """One layer in place: ``(x1, x2)`` becomes ``(x1', x2')``.

    The layer's caches take ``(v1, i1)`` and ``i2``; their arrays are held in
    ``ws`` under ``key`` until the matching backward drops them.
    """
    n, w = x1.shape
    k, dt = layer.k, x1.dtype
    if layer.cache_a.occupied or layer.cache_b.occupied:
        raise SequencingError(f"{key}: forward called twice without a backward in between")
    a, b = layer.blocks
    s1 = T.gs_topk(x1, k, out=SparseActivation(ws.get(f"{key}.v1", (n, k), dt),
                                               ws.get(f"{key}.i1", (n, k), T.INDEX_DTYPE), w))
    m1 = gsr_forward_block(s1, g, a, layer.cache_a, out=ws.get("m", (n, w), dt),
                           tmp=ws.get("agg", (n, w), dt))
    x2 += m1
    s2 = T.gs_topk(x2, k, out=SparseActivation(ws.get("v2", (n, k), dt),
                                               ws.get(f"{key}.i2", (n, k), T.INDEX_DTYPE), w))
    # x1 is spent once its top-k is taken, so block B writes straight into it
    gsr_forward_block(s2, g, b, layer.cache_b, out=x1, tmp=ws.get("agg", (n, w), dt))
    T.scatter_add(s1, x1)


def backward_groups(g1: np.ndarray, g2: np.ndarray, x2: np.ndarray | None, g: CsrGraph,
                    layer: GsrLayer, grads: list[BlockGrads] | None, ws: Workspace,
                    key: str = "layer", index_source: str = "local") -> None:
    """Gradient procedure for one layer, in place on ``(g1, g2)``.

    ``x2`` is the layer's output group 2; when given it is rewound to the
    layer's input group 2 and used for block B's parameter gradient.
    Parameter gradients need ``x2``.
    """
    if index_source not in INDEX_SOURCES:
        raise ConfigError(f"index_source must be one of {INDEX_SOURCES}, got {index_source!r}")
    if not (layer.cache_a.occupied and layer.cache_b.occupied):
        raise SequencingError(f"{key}: backward without a matching forward")
    if grads is not None and x2 is None:
        raise ConfigError("parameter gradients need the layer output (x2)")
    n, w = g1.shape
    k, dt = layer.k, g1.dtype
    a, b = layer.blocks
    agg = ws.get("agg", (n, w), dt)
    sg2 = T.gs_topk(g2, k, out=SparseActivation(ws.get("gv2", (n, k), dt),
                                                ws.get("gi2", (n, k), T.INDEX_DTYPE), w))
    m1 = gsr_forward_block(sg2, g, b, out=ws.get("m", (n, w), dt), tmp=agg)
    np.subtract(g1, m1, out=m1)
    sg1 = T.gs_topk(m1, k, out=SparseActivation(ws.get("gv1", (n, k), dt),
                                                ws.get("gi1", (n, k), T.INDEX_DTYPE), w))
    m2 = gsr_forward_block(sg1, g, a, out=ws.get("m2", (n, w), dt), tmp=agg)
    np.negative(m2, out=m2)
    T.scatter_add(sg2, m2)

    fwd_a = layer.cache_a.peek()
    if x2 is not None:
        t = ws.get("t", (n, w), dt)
        if grads is not None:
            fwd_b = T.gather(x2, layer.cache_b.peek().indices, out=ws.get("v2", (n, k), dt))
            accumulate_block_grads(m2, g, b, grads[1], fwd_b, tmp=agg)
            a_in = accumulate_block_grads(m1, g, a, grads[0], fwd_a, tmp=agg)
        else:
            a_in = G.spmm_sparse(g, fwd_a, out=agg)
        x2 -= apply_transform(a_in, a, out=t)

    if index_source == "local":
        cache_a, cache_b = BlockCache("A.local"), BlockCache("B.local")
        cache_a.store(sg1)
        cache_b.store(sg2)
    else:
        cache_a, cache_b = layer.cache_a, layer.cache_b
    t = ws.get("t", (n, w), dt)
    gathered = ws.get("gath", (n, k), dt)
    # g1 and g2 are spent: m1, m2 and the top-k buffers hold all that is left
    gsr_backward_block(m1, cache_a, g, a, out=g1, tmp=t, gathered=gathered)
    gsr_backward_block(m2, cache_b, g, b, out=g2, tmp=t, gathered=gathered)
    layer.cache_a.clear()
    layer.cache_b.clear()
    for name in ("v1", "i1", "i2"):
        ws.drop(f"{key}.{name}")


def gsr_forward_layer(x: np.ndarray, g: CsrGraph, layer: GsrLayer,
                      ws: Workspace | None = None, key: str = "layer") -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != layer.hidden:
        raise ShapeError(f"layer expects {layer.hidden} columns, got {x.shape}")
    x1, x2 = T.split(x, 2)
    forward_groups(x1, x2, g, layer, ws or Workspace(None, "layer"), key)
    return T.concat([x1, x2])


def gsr_backward_layer(g_next: np.ndarray, g: CsrGraph, layer: GsrLayer,
                       grads: list[BlockGrads] | None = None, x_out: np.ndarray | None = None,
                       index_source: str = "local", ws: Workspace | None = None,
                       key: str = "layer") -> np.ndarray:
    """Input gradient of one layer; ``x_out`` (its forward output) enables parameter grads."""
    if g_next.ndim != 2 or g_next.shape[1] != layer.hidden:
        raise ShapeError(f"layer expects {layer.hidden} columns, got {g_next.shape}")
    g1, g2 = T.split(g_next, 2)
    x2 = T.split(x_out, 2)[1] if x_out is not None else None
    ws = ws or Workspace(None, "layer")
    backward_groups(g1, g2, x2, g, layer, grads, ws, key, index_source)
    return T.concat([g1, g2])



@dataclass
class GsrNet:
    encoder: Linear
    layers: list[GsrLayer]
    head: Linear

    groups = 2

    def __post_init__(self):
        if self.hidden % 2:
            raise ConfigError(f"hidden width must be even, got {self.hidden}")
        for layer in self.layers:
            if layer.hidden != self.hidden:
                raise ShapeError(f"layer width {layer.hidden} != network width {self.hidden}")
        if self.head.d_in != self.hidden or self.head.d_out != 1:
            raise ShapeError(f"head must map {self.hidden} -> 1, got {self.head.w.shape}")

    @property
    def hidden(self) -> int:
        return self.encoder.d_out

    @classmethod
    def init(cls, d_in: int, hidden: int, layers: int, k: int | list[int], seed: int = 0,
             scale: float = 1.0, use_weight: bool = True, use_bias: bool = False,
             dtype=None) -> GsrNet:
        ks = list(k) if isinstance(k, (list, tuple)) else [k] * layers
        if len(ks) != layers:
            raise ConfigError(f"got {len(ks)} per-layer k values for {layers} layers")
        rng = np.random.default_rng(seed)
        enc = Linear.init(d_in, hidden, rng, dtype)
        body = [GsrLayer.init(hidden, kl, rng, scale, use_weight, use_bias, dtype) for kl in ks]
        return cls(enc, body, Linear.init(hidden, 1, rng, dtype))

    def cache_nbytes(self) -> int:
        return sum(layer.cache_nbytes() for layer in self.layers)

    def forward_layers(self, xs: list[np.ndarray], g: CsrGraph, ctx: RunContext) -> None:
        x1, x2 = xs
        for l, layer in enumerate(self.layers):
            forward_groups(x1, x2, g, layer, ctx.workspace, key=f"L{l}")

    def backward_layers(self, xs: list[np.ndarray], gs: list[np.ndarray], g: CsrGraph,
                        grads: list[list[BlockGrads]], ctx: RunContext) -> None:
        # only group 2 is needed going down; group 1 goes back to the pool
        ctx.workspace.drop("x0")
        x2 = xs[1]
        g1, g2 = gs
        for l in range(len(self.layers) - 1, -1, -1):
            backward_groups(g1, g2, x2, g, self.layers[l], grads[l], ctx.workspace,
                            key=f"L{l}", index_source=ctx.index_source)
