"""Gradient bundles, optimizer plumbing and the run engine shared by both networks.

A network here is anything with ``encoder``/``head`` (:class:`Linear`) and
``layers`` whose items expose ``blocks`` (a list of :class:`BlockParams`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .arena import Arena, Workspace
from .blocks import BlockGrads, apply_grads
from .errors import ConfigError, SequencingError, ShapeError
from .instrument import Timer
from .linear import LinearGrads


@dataclass
class GradBundle:
    encoder: LinearGrads
    head: LinearGrads
    blocks: list[list[BlockGrads]]

    @classmethod
    def for_net(cls, net) -> GradBundle:
        return cls(
            LinearGrads.zeros_like(net.encoder),
            LinearGrads.zeros_like(net.head),
            [[BlockGrads.zeros_like(p) for p in layer.blocks] for layer in net.layers],
        )

    def zero(self) -> None:
        self.encoder.zero()
        self.head.zero()
        for layer in self.blocks:
            for bg in layer:
                bg.dw.fill(0)
                bg.db.fill(0)
                bg.count = 0

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"encoder.w": self.encoder.dw, "encoder.b": self.encoder.db,
               "head.w": self.head.dw, "head.b": self.head.db}
        for l, layer in enumerate(self.blocks):
            for i, bg in enumerate(layer):
                out[f"layer{l}.block{i}.w"] = bg.dw
                out[f"layer{l}.block{i}.b"] = bg.db
        return out

    def max_abs(self) -> float:
        return max((float(np.abs(a).max()) for a in self.arrays().values() if a.size), default=0.0)


def parameters(net) -> dict[str, np.ndarray]:
    out = {"encoder.w": net.encoder.w, "encoder.b": net.encoder.b,
           "head.w": net.head.w, "head.b": net.head.b}
    for l, layer in enumerate(net.layers):
        for i, p in enumerate(layer.blocks):
            out[f"layer{l}.block{i}.w"] = p.w
            out[f"layer{l}.block{i}.b"] = p.b
    return out


def optimizer_step(net, grads: GradBundle, optimizer) -> None:
    optimizer.update("encoder.w", net.encoder.w, grads.encoder.dw)
    optimizer.update("encoder.b", net.encoder.b, grads.encoder.db)
    optimizer.update("head.w", net.head.w, grads.head.dw)
    optimizer.update("head.b", net.head.b, grads.head.db)
    grads.encoder.zero()
    grads.head.zero()
    for l, layer in enumerate(net.layers):
        for i, p in enumerate(layer.blocks):
            apply_grads(p, grads.blocks[l][i], optimizer, f"layer{l}.block{i}")


def mse_loss(pred: np.ndarray, target: np.ndarray, mask: np.ndarray | None = None):
    """Mean squared error over masked nodes and its gradient w.r.t. ``pred``."""
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    if mask is None:
        mask = np.ones(pred.shape, bool)
    count = int(mask.sum())
    if count == 0:
        raise ConfigError("mse_loss: empty mask")
    diff = np.where(mask, pred - target, 0.0)
    loss = float(np.dot(diff, diff) / count)
    return loss, (2.0 / count) * diff


def group_columns(hidden: int, groups: int) -> list[slice]:
    w = hidden // groups
    return [slice(i * w, (i + 1) * w) for i in range(groups)]


def head_forward(head, xs: list[np.ndarray], out: np.ndarray | None = None) -> np.ndarray:
    """``concat(xs) @ w + b`` accumulated group by group (no concatenation)."""
    cols = group_columns(head.d_in, len(xs))
    pred = T.gemm(xs[0], head.w[cols[0]], out=out)
    for x, c in zip(xs[1:], cols[1:]):
        pred += T.gemm(x, head.w[c])
    pred += head.b
    return pred


@dataclass
class RunContext:
    """Per-run policy shared by both networks' layer loops."""

    workspace: Workspace
    timer: Timer
    churn: bool = False
    index_source: str = "local"

    def region(self, label: str):
        return self.timer.region(label)

    def renew(self, names: list[str], arrays: list[np.ndarray]) -> list[np.ndarray]:
        """Move each named buffer into a freshly allocated one, destroying the old.

        This is the baseline's create-then-destroy cycle: capacity is handed
        back to the system instead of the pool, so every renewal allocates.
        """
        ws = self.workspace
        fresh = []
        with self.timer.region("copy"):
            for name, arr in zip(names, arrays):
                lease, new = ws.arena.array(arr.shape, arr.dtype, f"{ws.tag}:{name}")
                np.copyto(new, arr)
                ws.drop(name, destroy=True)
                ws.put(name, lease, new)
                fresh.append(new)
        return fresh


class Engine:
    """Runs one network's forward/backward over arena-backed group buffers.

    The network supplies ``groups`` plus ``forward_layers(xs, g, ctx)`` and
    ``backward_layers(xs, gs, g, grads, ctx)`` operating in place on lists
    of per-group arrays; encoder, head and buffer staging live here.
    """

    def __init__(self, net, graph, arena: Arena | None = None, timer: Timer | None = None,
                 churn: bool = False, index_source: str = "local"):
        if index_source not in ("local", "forward"):
            raise ConfigError(f"index_source must be 'local' or 'forward', got {index_source!r}")
        self.net = net
        self.graph = graph
        self.arena = arena if arena is not None else Arena()
        self.ctx = RunContext(Workspace(self.arena, "run"), timer or Timer(), churn, index_source)
        self._xs: list[np.ndarray] | None = None
        self._features: np.ndarray | None = None

    @property
    def dtype(self):
        return self.net.encoder.w.dtype

    def _names(self, prefix: str) -> list[str]:
        return [f"{prefix}{i}" for i in range(self.net.groups)]

    def forward(self, features: np.ndarray) -> np.ndarray:
        """Predictions (length n); the final activation stays resident for backward."""
        ctx, ws, net = self.ctx, self.ctx.workspace, self.net
        n = self.graph.n
        if features.shape != (n, net.encoder.d_in):
            raise ShapeError(f"features {features.shape} vs ({n}, {net.encoder.d_in})")
        with ctx.region("forward"):
            with ctx.region("copy"):
                feats = ws.get("features", features.shape, self.dtype)
                np.copyto(feats, features)
            xs = []
            for name, c in zip(self._names("x"), group_columns(net.hidden, net.groups)):
                xs.append(net.encoder.columns(feats, c, out=ws.get(name, (n, c.stop - c.start), self.dtype)))
            net.forward_layers(xs, self.graph, ctx)
            pred = head_forward(net.head, xs, out=ws.get("pred", (n, 1), self.dtype))
        self._xs = xs
        self._features = feats
        return pred[:, 0]

    def backward(self, dpred: np.ndarray, grads: GradBundle, want_input_grad: bool = False):
        """Accumulate all parameter gradients; optionally return dL/dX0 (n x hidden)."""
        if self._xs is None:
            raise SequencingError("backward called without a matching forward")
        ctx, ws, net = self.ctx, self.ctx.workspace, self.net
        n = self.graph.n
        xs, self._xs = self._xs, None
        cols = group_columns(net.hidden, net.groups)
        with ctx.region("backward"):
            dp = ws.get("dpred", (n, 1), self.dtype)
            dp[:, 0] = dpred
            gs = []
            for name, x, c in zip(self._names("g"), xs, cols):
                grads.head.dw[c] += T.gemm(x.T, dp)
                gs.append(T.gemm(dp, net.head.w[c].T, out=ws.get(name, x.shape, self.dtype)))
            grads.head.db += dp.sum(axis=0)
            net.backward_layers(xs, gs, self.graph, grads.blocks, ctx)
            for gi, c in zip(gs, cols):
                grads.encoder.dw[:, c] += T.gemm(self._features.T, gi)
                grads.encoder.db[c] += gi.sum(axis=0)
            dx0 = T.concat(gs) if want_input_grad else None
        return dx0

    def release(self) -> None:
        """Give every buffer back to the pool; the trainer calls this after each epoch."""
        self._xs = None
        self.ctx.workspace.close()
        for layer in self.net.layers:
            for cache in getattr(layer, "caches", ()):
                cache.clear()


def net_forward(net, g, x0: np.ndarray, **engine_kwargs) -> np.ndarray:
    """Encoder, all layers, head. The run state is parked on ``net`` for :func:`net_backward`."""
    engine = Engine(net, g, **engine_kwargs)
    pred = engine.forward(x0)
    net.pending_engine = engine
    return pred


def net_backward(net, g, dpred: np.ndarray, want_input_grad: bool = False):
    """Gradient bundle for the last :func:`net_forward` (plus dL/dX0 when asked)."""
    engine = getattr(net, "pending_engine", None)
    if engine is None or engine.graph is not g:
        raise SequencingError("net_backward needs a preceding net_forward on the same graph")
    net.pending_engine = None
    grads = GradBundle.for_net(net)
    dx0 = engine.backward(np.asarray(dpred), grads, want_input_grad)
    engine.release()
    return (grads, dx0) if want_input_grad else grads
