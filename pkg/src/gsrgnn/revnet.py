"""Grouped reversible baseline network.

Forward, for groups ``x_1..x_C``::

    y_0 = x_2 + ... + x_C
    y_i = x_i + f_i(y_{i-1})        i = 1..C

Inverse runs ``x_i = y_i - f_i(y_{i-1})`` for ``i = C..2`` and then
``x_1 = y_1 - f_1(x_2 + ... + x_C)``. Nothing but the final activation is
kept: backward rebuilds each layer's input from its output while it pulls
the gradient through.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .arena import Workspace
from .blocks import BlockGrads, BlockParams, dense_block, dense_block_vjp
from .errors import ConfigError, ShapeError
from .graph import CsrGraph
from .linear import Linear
from .model import RunContext, net_backward


@dataclass
class RevLayer:
    blocks: list[BlockParams]

    def __post_init__(self):
        if len(self.blocks) < 2:
            raise ConfigError(f"a reversible layer needs at least 2 groups, got {len(self.blocks)}")
        if len({p.width for p in self.blocks}) != 1:
            raise ShapeError("all groups of a reversible layer must share one width")

    @property
    def groups(self) -> int:
        return len(self.blocks)

    @property
    def width(self) -> int:
        return self.blocks[0].width

    @property
    def hidden(self) -> int:
        return self.groups * self.width

    @classmethod
    def init(cls, hidden: int, groups: int, rng: np.random.Generator, scale: float = 1.0,
             use_weight: bool = True, use_bias: bool = False, dtype=None) -> RevLayer:
        if groups < 2 or hidden % groups:
            raise ConfigError(f"hidden={hidden} must split into groups={groups} >= 2 equal parts")
        w = hidden // groups
        return cls([BlockParams.init(w, rng, scale, use_weight, use_bias, dtype) for _ in range(groups)])


def _coupling(xs: list[np.ndarray], out: np.ndarray | None) -> np.ndarray:
    """``y_0 = x_2 + ... + x_C``, summed left to right."""
    if len(xs) == 2:
        return xs[1]
    y = np.add(xs[1], xs[2], out=out)
    for x in xs[3:]:
        y += x
    return y


def forward_groups(xs: list[np.ndarray], g: CsrGraph, layer: RevLayer, ws: Workspace) -> None:
    """One reversible layer, in place on the group buffers."""
    shape, dt = xs[0].shape, xs[0].dtype
    u, a, f = (ws.get(name, shape, dt) for name in ("u", "a", "f"))
    prev = _coupling(xs, ws.get("y0", shape, dt) if len(xs) > 2 else None)
    for x, p in zip(xs, layer.blocks):
        x += dense_block(prev, g, p, out=f, tmp=u, agg=a)
        prev = x


def inverse_groups(xs: list[np.ndarray], g: CsrGraph, layer: RevLayer, ws: Workspace) -> None:
    """Undo :func:`forward_groups` in place."""
    shape, dt = xs[0].shape, xs[0].dtype
    u, a, f = (ws.get(name, shape, dt) for name in ("u", "a", "f"))
    for i in range(len(xs) - 1, 0, -1):
        xs[i] -= dense_block(xs[i - 1], g, layer.blocks[i], out=f, tmp=u, agg=a)
    y0 = _coupling(xs, ws.get("y0", shape, dt) if len(xs) > 2 else None)
    xs[0] -= dense_block(y0, g, layer.blocks[0], out=f, tmp=u, agg=a)


def backward_groups(xs: list[np.ndarray], gs: list[np.ndarray], g: CsrGraph, layer: RevLayer,
                    grads: list[BlockGrads] | None, ws: Workspace) -> None:
    """Reconstruct the layer input and pull the gradient through, both in place.

    On entry ``xs`` holds the layer output and ``gs`` the gradient w.r.t. it;
    on exit they hold the layer input and the gradient w.r.t. that input.
    """
    c = len(xs)
    shape, dt = xs[0].shape, xs[0].dtype
    u, a, f, gin = (ws.get(name, shape, dt) for name in ("u", "a", "f", "gin"))
    for i in range(c - 1, -1, -1):
        if i > 0:
            block_in = xs[i - 1]
        else:
            block_in = _coupling(xs, ws.get("y0", shape, dt) if c > 2 else None)
        bg = grads[i] if grads is not None else None
        dense_block_vjp(block_in, g, layer.blocks[i], gs[i], bg, u=u, a=a, f=f, gin=gin)
        xs[i] -= f
        if i > 0:
            gs[i - 1] += gin
        else:
            for gj in gs[1:]:
                gj += gin


def _private_ws() -> Workspace:
    return Workspace(None, "layer")


def rev_forward_layer(x: np.ndarray, g: CsrGraph, layer: RevLayer) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != layer.hidden:
        raise ShapeError(f"layer expects {layer.hidden} columns, got {x.shape}")
    xs = T.split(x, layer.groups)
    forward_groups(xs, g, layer, _private_ws())
    return T.concat(xs)


def rev_inverse_layer(y: np.ndarray, g: CsrGraph, layer: RevLayer) -> np.ndarray:
    if y.ndim != 2 or y.shape[1] != layer.hidden:
        raise ShapeError(f"layer expects {layer.hidden} columns, got {y.shape}")
    xs = T.split(y, layer.groups)
    inverse_groups(xs, g, layer, _private_ws())
    return T.concat(xs)


def rev_backward_layer(y: np.ndarray, dy: np.ndarray, g: CsrGraph, layer: RevLayer,
                       grads: list[BlockGrads] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``(x, dL/dx)`` for one layer given its output ``y`` and ``dL/dy``."""
    if y.shape != dy.shape or y.shape[1] != layer.hidden:
        raise ShapeError(f"output {y.shape} and gradient {dy.shape} must both have {layer.hidden} columns")
    xs, gs = T.split(y, layer.groups), T.split(dy, layer.groups)
    backward_groups(xs, gs, g, layer, grads, _private_ws())
    return T.concat(xs), T.concat(gs)


@dataclass
class RevNet:
    encoder: Linear
    layers: list[RevLayer]
    head: Linear
    groups: int = 2

    def __post_init__(self):
        for layer in self.layers:
            if layer.hidden != self.hidden or layer.groups != self.groups:
                raise ShapeError("all layers must share hidden width and group count")
        if self.head.d_in != self.hidden or self.head.d_out != 1:
            raise ShapeError(f"head must map {self.hidden} -> 1, got {self.head.w.shape}")

    @property
    def hidden(self) -> int:
        return self.encoder.d_out

    @classmethod
    def init(cls, d_in: int, hidden: int, layers: int, groups: int = 2, seed: int = 0,
             scale: float = 1.0, use_weight: bool = True, use_bias: bool = False,
             dtype=None) -> RevNet:
        rng = np.random.default_rng(seed)
        enc = Linear.init(d_in, hidden, rng, dtype)
        body = [RevLayer.init(hidden, groups, rng, scale, use_weight, use_bias, dtype)
                for _ in range(layers)]
        return cls(enc, body, Linear.init(hidden, 1, rng, dtype), groups)

    def forward_layers(self, xs: list[np.ndarray], g: CsrGraph, ctx: RunContext) -> None:
        names = [f"x{i}" for i in range(self.groups)]
        for layer in self.layers:
            if ctx.churn:
                xs[:] = ctx.renew(names, xs)
            forward_groups(xs, g, layer, ctx.workspace)

    def backward_layers(self, xs: list[np.ndarray], gs: list[np.ndarray], g: CsrGraph,
                        grads: list[list[BlockGrads]], ctx: RunContext) -> None:
        xnames = [f"x{i}" for i in range(self.groups)]
        gnames = [f"g{i}" for i in range(self.groups)]
        for l in range(len(self.layers) - 1, -1, -1):
            if ctx.churn:
                xs[:] = ctx.renew(xnames, xs)
                gs[:] = ctx.renew(gnames, gs)
            backward_groups(xs, gs, g, self.layers[l], grads[l], ctx.workspace)


def rev_backward(net: RevNet, g: CsrGraph, dL_dy: np.ndarray):
    """``(dL/dX0, gradient bundle)`` for the last forward of ``net`` on ``g``."""
    grads, dx0 = net_backward(net, g, dL_dy, want_input_grad=True)
    return dx0, grads
