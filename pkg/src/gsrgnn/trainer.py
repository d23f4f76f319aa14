"""Full-batch training runs, benchmarks and quality comparisons."""

from __future__ import annotations

import contextlib
import time
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from threadpoolctl import threadpool_limits

from . import checkpoint
from . import graph as G
from . import tensor as T
from .arena import Arena
from .config import RunConfig
from .errors import ConfigError, NumericalError
from .gsrnet import GsrNet
from .instrument import CorrelationReport, Timer, TimingBreakdown
from .model import Engine, GradBundle, mse_loss, optimizer_step
from .optim import make_optimizer
from .report import REPORT_VERSION, ReportWriter
from .revnet import RevNet

# fields that describe where output goes or how fast it is computed, not what is computed
_ECHO_EXCLUDED = ("report", "threads", "checkpoint")


@contextlib.contextmanager
def runtime(cfg: RunConfig):
    """Precision and thread settings for the duration of one command."""
    old_threads = numba.get_num_threads()
    if cfg.threads is not None:
        numba.set_num_threads(min(cfg.threads, numba.config.NUMBA_NUM_THREADS))
    blas = 1 if cfg.deterministic else cfg.threads
    with T.precision(cfg.precision), threadpool_limits(limits=blas, user_api="blas"):
        try:
            yield
        finally:
            numba.set_num_threads(old_threads)


_DATA_CACHE: dict[tuple, tuple[G.CsrGraph, G.NodeData]] = {}


def load_data(cfg: RunConfig) -> tuple[G.CsrGraph, G.NodeData]:
    key = cfg.data_key()
    if key not in _DATA_CACHE:
        if cfg.graph:
            g = G.read_graph(cfg.graph, norm_mode=cfg.norm)
            data = G.read_node_data(node_data_path(cfg.graph))
            if data.n != g.n:
                raise ConfigError(f"node data has {data.n} nodes, graph has {g.n}")
        else:
            g, data = G.generate_synthetic(cfg.synth_config())
        _DATA_CACHE.clear()
        _DATA_CACHE[key] = (g, data)
    return _DATA_CACHE[key]


def node_data_path(graph_path) -> Path:
    return Path(graph_path).with_suffix(".gsrn")


def build_net(cfg: RunConfig, d_in: int):
    dtype = T.get_dtype()
    if cfg.model == "gsr":
        return GsrNet.init(d_in, cfg.hidden, cfg.layers, cfg.k, seed=cfg.seed, scale=cfg.init_scale,
                           use_bias=cfg.use_bias, dtype=dtype)
    return RevNet.init(d_in, cfg.hidden, cfg.layers, cfg.groups, seed=cfg.seed, scale=cfg.init_scale,
                       use_bias=cfg.use_bias, dtype=dtype)


def run_label(cfg: RunConfig) -> str:
    if cfg.model == "gsr":
        return f"gsr-k{cfg.k}"
    return f"baseline-c{cfg.groups}" + ("-churn" if cfg.churn else "")


@dataclass
class RunResult:
    config: RunConfig
    records: list[dict]
    summary: dict
    predictions: np.ndarray
    net: object
    timings: list[TimingBreakdown] = field(default_factory=list)
    memory: dict = field(default_factory=dict)
    alloc_per_epoch: float = 0.0
    work_per_epoch: dict = field(default_factory=dict)


def train(cfg: RunConfig, writer: ReportWriter | None = None, arena: Arena | None = None) -> RunResult:
    """Train one configuration end to end; ``cfg`` must already be resolved."""
    g, data = load_data(cfg)
    arena = arena if arena is not None else Arena()
    timer = Timer()
    label = run_label(cfg)
    with runtime(cfg):
        dtype = T.get_dtype()
        net = build_net(cfg, data.features.shape[1])
        engine = Engine(net, g, arena, timer, churn=cfg.churn, index_source=cfg.index_source)
        grads = GradBundle.for_net(net)
        opt = make_optimizer(cfg.optimizer, cfg.lr, (cfg.beta1, cfg.beta2), cfg.weight_decay,
                             cfg.momentum)
        feats = data.features.astype(dtype)
        train_mask = data.mask("train")
        records, timings, works = [], [], []
        cache_bytes = 0
        loss = float("nan")
        allocs_after_warmup = 0
        for epoch in range(cfg.epochs):
            timer.reset()
            counter = T.WorkCounter()
            t0 = time.perf_counter()
            with T.counting(counter):
                with timer.region("forward"):
                    pred = engine.forward(feats)
                    loss, dpred = mse_loss(pred, data.labels, train_mask)
                    if not np.isfinite(loss):
                        raise NumericalError(f"{label}: training diverged at epoch {epoch} (loss {loss})")
                    if isinstance(net, GsrNet):
                        cache_bytes = net.cache_nbytes()
                with timer.region("backward"):
                    engine.backward(dpred, grads)
                    optimizer_step(net, grads, opt)
                    # every epoch checks its buffers out of the pool afresh
                    engine.release()
            tb = TimingBreakdown.from_timer(epoch, timer, time.perf_counter() - t0)
            warm = epoch < cfg.warmup
            if not warm:
                timings.append(tb)
                works.append(counter.as_dict())
            rec = {"type": "epoch", "run": label, "epoch": epoch, "warmup": warm,
                   "train_loss": loss, "timing": None if cfg.deterministic else tb.as_dict(),
                   "memory": arena.stats().as_dict(), "work": counter.as_dict()}
            records.append(rec)
            if writer is not None:
                writer.emit(rec)
            if epoch == cfg.warmup - 1:
                arena.high_water_reset()
                allocs_after_warmup = arena.stats().alloc_count
        memory = arena.stats().as_dict()
        measured = cfg.epochs - cfg.warmup
        alloc_per_epoch = (memory["alloc_count"] - allocs_after_warmup) / measured
        with T.counting(T.WorkCounter()):
            final = engine.forward(feats).astype(np.float64)
        engine.release()
        if cfg.checkpoint:
            checkpoint.save(cfg.checkpoint, net)
    metrics = {name: CorrelationReport.compute(final[data.mask(name)], data.labels[data.mask(name)])
               .as_dict() for name in ("train", "val", "test", "all")}
    summary = {
        "type": "summary", "run": label, "version": REPORT_VERSION,
        "config": {k: v for k, v in cfg.as_dict().items() if k not in _ECHO_EXCLUDED},
        "final_train_loss": loss, "metrics": metrics,
        "timing_mean": None if cfg.deterministic else mean_timing(timings),
        "memory": memory, "work_per_epoch": works[-1] if works else T.WorkCounter().as_dict(),
        "cache_bytes": cache_bytes, "checkpoint": cfg.checkpoint,
    }
    if writer is not None:
        writer.emit(summary)
    return RunResult(cfg, records, summary, final, net, timings, memory, alloc_per_epoch,
                     summary["work_per_epoch"])


def mean_timing(timings: list[TimingBreakdown]) -> dict | None:
    if not timings:
        return None
    keys = ("t_forward", "t_backward", "t_copy", "t_total")
    out = {k: float(np.mean([getattr(t, k) for t in timings])) for k in keys}
    out["accounted_fraction"] = (out["t_forward"] + out["t_backward"] + out["t_copy"]) / out["t_total"]
    return out


def bench_rows(results: list[RunResult], deterministic: bool = False) -> list[dict]:
    """Table-3 style rows; speedups are relative to the first result."""
    rows = []
    ref_total = None
    for res in results:
        t = mean_timing(res.timings)
        row = {"label": run_label(res.config)}
        if t is None or deterministic:
            row |= {k: None for k in ("forward_s", "forward_pct", "backward_s", "backward_pct",
                                      "copy_s", "copy_pct", "total_s", "speedup", "accounted_fraction")}
        else:
            total = t["t_total"]
            ref_total = ref_total or total
            row |= {"forward_s": t["t_forward"], "forward_pct": 100 * t["t_forward"] / total,
                    "backward_s": t["t_backward"], "backward_pct": 100 * t["t_backward"] / total,
                    "copy_s": t["t_copy"], "copy_pct": 100 * t["t_copy"] / total,
                    "total_s": total, "speedup": ref_total / total,
                    "accounted_fraction": t["accounted_fraction"]}
        mem = res.memory
        row |= {"peak_active": mem["peak_active"], "peak_reserved": mem["peak_reserved"],
                "utilization": mem["utilization"], "alloc_per_epoch": res.alloc_per_epoch,
                "aggregate_mul_adds": int(res.work_per_epoch["stages"].get("aggregate", 0))}
        rows.append(row)
    return rows


def render_table(rows: list[dict]) -> str:
    """Plain-text table with Forward/Backward/copy/Total/Speedup columns."""
    def cell(s, pct):
        return "n/a" if s is None else f"{s:8.3f}s {pct:5.1f}%"

    head = f"{'run':<22}{'Forward':>17}{'Backward':>17}{'copy':>17}{'Total':>11}{'Speedup':>9}"
    lines = [head, "-" * len(head)]
    for r in rows:
        total = "n/a" if r["total_s"] is None else f"{r['total_s']:9.3f}s"
        speed = "n/a" if r["speedup"] is None else f"{r['speedup']:7.2f}x"
        lines.append(f"{r['label']:<22}{cell(r['forward_s'], r['forward_pct']):>17}"
                     f"{cell(r['backward_s'], r['backward_pct']):>17}"
                     f"{cell(r['copy_s'], r['copy_pct']):>17}{total:>11}{speed:>9}")
    lines.append("")
    lines.append(f"{'run':<22}{'peak_active':>14}{'peak_reserved':>15}{'util':>7}{'allocs/ep':>11}")
    for r in rows:
        lines.append(f"{r['label']:<22}{r['peak_active']:>14}{r['peak_reserved']:>15}"
                     f"{r['utilization']:>7.3f}{r['alloc_per_epoch']:>11.1f}")
    return "\n".join(lines)


def _check_shared_data(cfgs: list[RunConfig]) -> None:
    keys = {c.data_key() for c in cfgs}
    if len(keys) != 1:
        raise ConfigError("benchmark configs must share graph and seed (mismatched graphs)")


def cmd_bench(cfgs: list[RunConfig], writer: ReportWriter | None = None) -> tuple[dict, list[RunResult]]:
    """Train each config for its warmup plus measured epochs and compare them."""
    if not cfgs:
        raise ConfigError("bench needs at least one config")
    _check_shared_data(cfgs)
    results = [train(cfg, writer, arena=Arena()) for cfg in cfgs]
    det = any(c.deterministic for c in cfgs)
    record = {"type": "bench", "version": REPORT_VERSION,
              "measured_epochs": cfgs[0].epochs - cfgs[0].warmup, "rows": bench_rows(results, det)}
    if writer is not None:
        writer.emit(record)
    return record, results


PARITY_TOLERANCE = 0.05


def cmd_compare(cfgs: list[RunConfig], split: str = "test", writer: ReportWriter | None = None,
                tolerance: float = PARITY_TOLERANCE) -> tuple[dict, list[RunResult]]:
    """Train each config and report metric gaps against the first one."""
    if len(cfgs) < 2:
        raise ConfigError("compare needs at least two configs")
    _check_shared_data(cfgs)
    results = [train(cfg, writer) for cfg in cfgs]
    runs = {run_label(r.config): r.summary["metrics"][split] for r in results}
    ref = results[0].summary["metrics"][split]
    diffs = {}
    for res in results[1:]:
        m = res.summary["metrics"][split]
        for metric in ("pearson", "spearman", "kendall"):
            a, b = m[metric], ref[metric]
            diffs[f"{run_label(res.config)}.{metric}"] = None if a is None or b is None else a - b
    ok = all(d is not None and abs(d) <= tolerance for d in diffs.values())
    record = {"type": "compare", "version": REPORT_VERSION, "split": split, "runs": runs,
              "differences": diffs, "tolerance": tolerance, "within_tolerance": ok}
    if writer is not None:
        writer.emit(record)
    return record, results
