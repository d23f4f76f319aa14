"""Command-line entry point: ``gsrgnn {train,bench,compare,verify,gen-graph,gradcheck}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import graph as G
from . import verify as V
from .config import MODELS, OPTIMIZERS, PRECISIONS, SPLITS, RunConfig, load_config
from .errors import GsrError, ResourceError
from .graph import NORM_MODES
from .report import REPORT_VERSION, ReportWriter
from .trainer import PARITY_TOLERANCE, cmd_bench, cmd_compare, render_table, runtime, train

EXIT_OK, EXIT_INVALID, EXIT_VERIFY, EXIT_RESOURCE = 0, 1, 2, 3

# flag name -> (RunConfig field, argparse keyword arguments)
_RUN_FLAGS = {
    "--model": ("model", {"choices": MODELS}),
    "--layers": ("layers", {"type": int}),
    "--hidden": ("hidden", {"type": int}),
    "--k": ("k", {"type": int, "help": "kept activations per row (gsr)"}),
    "--groups": ("groups", {"type": int, "help": "feature groups C (baseline)"}),
    "--norm": ("norm", {"choices": NORM_MODES}),
    "--optimizer": ("optimizer", {"choices": OPTIMIZERS}),
    "--lr": ("lr", {"type": float}),
    "--momentum": ("momentum", {"type": float}),
    "--weight-decay": ("weight_decay", {"type": float}),
    "--epochs": ("epochs", {"type": int}),
    "--warmup": ("warmup", {"type": int, "help": "leading epochs excluded from statistics"}),
    "--seed": ("seed", {"type": int}),
    "--precision": ("precision", {"choices": PRECISIONS}),
    "--init-scale": ("init_scale", {"type": float}),
    "--index-source": ("index_source", {"choices": ("local", "forward")}),
    "--graph": ("graph", {"help": "graph file; node data is read from the same stem with .gsrn"}),
    "--nodes": ("nodes", {"type": int}),
    "--degree": ("degree", {"type": int}),
    "--hub-fraction": ("hub_fraction", {"type": float}),
    "--hub-min": ("hub_min", {"type": int}),
    "--hub-max": ("hub_max", {"type": int}),
    "--metrics-split": ("metrics_split", {"choices": SPLITS}),
    "--threads": ("threads", {"type": int}),
    "--report": ("report", {"help": "write JSON-lines records here"}),
    "--checkpoint": ("checkpoint", {"help": "save trained parameters here"}),
}
_SWITCHES = {"--deterministic": "deterministic", "--churn": "churn", "--use-bias": "use_bias"}


def _run_options() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="key = value file mirroring RunConfig; flags override it")
    for flag, (dest, kw) in _RUN_FLAGS.items():
        p.add_argument(flag, dest=dest, default=None, **kw)
    for flag, dest in _SWITCHES.items():
        p.add_argument(flag, dest=dest, action="store_const", const=True, default=None)
    return p


def _overrides(args) -> dict:
    keys = [dest for dest, _ in _RUN_FLAGS.values()] + list(_SWITCHES.values())
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


def build_parser() -> argparse.ArgumentParser:
    run = _run_options()
    parser = argparse.ArgumentParser(prog="gsrgnn", description=__doc__.split(":")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("train", parents=[run], help="train one model end to end")

    b = sub.add_parser("bench", parents=[run], help="time several configs on a shared graph")
    b.add_argument("configs", nargs="*", help="config files (flags apply to every one)")
    b.add_argument("--sweep-k", help="comma-separated k values; each gsr config runs once per k")

    c = sub.add_parser("compare", parents=[run], help="quality gaps against the first config")
    c.add_argument("configs", nargs="+", help="two or more config files")
    c.add_argument("--split", choices=SPLITS, default="test")
    c.add_argument("--tolerance", type=float, default=PARITY_TOLERANCE)
    c.add_argument("--check", action="store_true", help="exit 2 when a gap exceeds the tolerance")

    v = sub.add_parser("verify", help="run the oracle suites")
    v.add_argument("--suite", action="append", choices=sorted(V.SUITES),
                   help="repeatable; default runs every suite")
    v.add_argument("--cases", type=int, help="fuzz cases per suite (suite default otherwise)")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--checkpoint", help="checkpoint file the checkpoint suite must load")
    v.add_argument("--threads", type=int)
    v.add_argument("--report")

    gg = sub.add_parser("gen-graph", help="write a synthetic graph and its node data")
    gg.add_argument("--out", required=True, help="output stem; writes STEM.gsrg and STEM.gsrn")
    gg.add_argument("--format", choices=("binary", "text"), default="binary")
    gg.add_argument("--nodes", type=int, default=RunConfig.nodes)
    gg.add_argument("--degree", type=int, default=RunConfig.degree)
    gg.add_argument("--hub-fraction", type=float, default=RunConfig.hub_fraction)
    gg.add_argument("--hub-min", type=int, default=RunConfig.hub_min)
    gg.add_argument("--hub-max", type=int, default=RunConfig.hub_max)
    gg.add_argument("--seed", type=int, default=0)
    gg.add_argument("--norm", choices=NORM_MODES, default=RunConfig.norm)
    gg.add_argument("--report")

    gc = sub.add_parser("gradcheck", help="finite differences against the baseline backward")
    gc.add_argument("--layers", type=int, default=2)
    gc.add_argument("--groups", type=int, default=2)
    gc.add_argument("--hidden", type=int, default=4)
    gc.add_argument("--nodes", type=int, default=6)
    gc.add_argument("--step", type=float, default=1e-6)
    gc.add_argument("--tolerance", type=float, default=1e-5)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--report")
    return parser


def _config(path, args) -> RunConfig:
    return load_config(path, _overrides(args)).resolved()


def _bench_configs(args) -> list[RunConfig]:
    paths = args.configs or [args.config]
    cfgs = [_config(p, args) for p in paths]
    if not args.sweep_k:
        return cfgs
    ks = [int(k) for k in args.sweep_k.split(",") if k.strip()]
    out = []
    for cfg in cfgs:
        if cfg.model == "gsr":
            out += [dataclasses.replace(cfg, k=k).resolved() for k in ks]
        else:
            out.append(cfg)
    return out


def _print_metrics(summary: dict) -> None:
    for split, m in summary["metrics"].items():
        vals = " ".join(f"{key}={'undefined' if m[key] is None else format(m[key], '.4f')}"
                        for key in ("pearson", "spearman", "kendall", "r2"))
        print(f"  {split:<5} {vals}")


def run_train(args) -> int:
    cfg = _config(args.config, args)
    writer = ReportWriter(cfg.report)
    res = train(cfg, writer)
    writer.close()
    s = res.summary
    print(f"{s['run']}: {cfg.epochs} epochs, final train loss {s['final_train_loss']:.6g}")
    _print_metrics(s)
    if s["timing_mean"]:
        t = s["timing_mean"]
        print(f"  epoch {t['t_total']:.4f}s (forward {t['t_forward']:.4f}s, backward {t['t_backward']:.4f}s,"
              f" copy {t['t_copy']:.4f}s)")
    mem = s["memory"]
    print(f"  peak_active {mem['peak_active']} B, peak_reserved {mem['peak_reserved']} B,"
          f" utilization {mem['utilization']:.3f}")
    return EXIT_OK


def run_bench(args) -> int:
    writer = ReportWriter(args.report)
    record, _ = cmd_bench(_bench_configs(args), writer)
    writer.close()
    print(render_table(record["rows"]))
    return EXIT_OK


def run_compare(args) -> int:
    cfgs = [_config(p, args) for p in args.configs]
    writer = ReportWriter(args.report)
    record, _ = cmd_compare(cfgs, args.split, writer, args.tolerance)
    writer.close()
    for label, m in record["runs"].items():
        print(f"{label:<22} pearson={m['pearson']} spearman={m['spearman']} kendall={m['kendall']}")
    for key, diff in record["differences"].items():
        print(f"  {key:<30} {'undefined' if diff is None else format(diff, '+.4f')}")
    print("within tolerance" if record["within_tolerance"] else f"gap exceeds {args.tolerance}")
    return EXIT_VERIFY if args.check and not record["within_tolerance"] else EXIT_OK


def _emit_checks(checks: list[V.Check], suites: list[str], path) -> int:
    writer = ReportWriter(path)
    for c in checks:
        print(c.line())
        writer.emit(c.record())
    failed = sum(not c.passed for c in checks)
    writer.emit({"type": "verify", "version": REPORT_VERSION, "passed": len(checks) - failed,
                 "failed": failed, "suites": suites})
    writer.close()
    print(f"{len(checks) - failed} passed, {failed} failed")
    return EXIT_VERIFY if failed else EXIT_OK


def run_verify(args) -> int:
    suites = args.suite or list(V.SUITES)
    with runtime(RunConfig(deterministic=True, threads=args.threads)):
        checks = V.run_suites(suites, args.seed, args.cases, args.checkpoint)
    return _emit_checks(checks, suites, args.report)


def run_gradcheck(args) -> int:
    with runtime(RunConfig(deterministic=True)):
        errors = V.baseline_gradcheck(args.layers, args.groups, args.hidden, args.nodes, args.step,
                                      args.seed)
    checks = [V.Check("gradcheck", key, err <= args.tolerance, err, args.tolerance, args.seed)
              for key, err in errors.items()]
    return _emit_checks(checks, ["gradcheck"], args.report)


def run_gen_graph(args) -> int:
    cfg = RunConfig(nodes=args.nodes, degree=args.degree, hub_fraction=args.hub_fraction,
                    hub_min=args.hub_min, hub_max=args.hub_max, seed=args.seed, norm=args.norm)
    g, data = G.generate_synthetic(cfg.synth_config())
    stem = Path(args.out)
    stem.parent.mkdir(parents=True, exist_ok=True)
    paths = {"graph": str(stem.with_suffix(".gsrg")), "nodes": str(stem.with_suffix(".gsrn"))}
    G.write_graph(paths["graph"], g, args.format)
    G.write_node_data(paths["nodes"], data)
    summary = G.degree_summary(g, hub_min=args.hub_min)
    writer = ReportWriter(args.report)
    writer.emit({"type": "graph", "version": REPORT_VERSION, "paths": paths, "summary": summary})
    writer.close()
    print(f"wrote {paths['graph']} and {paths['nodes']}")
    print(json.dumps(summary, indent=2))
    return EXIT_OK


COMMANDS = {"train": run_train, "bench": run_bench, "compare": run_compare, "verify": run_verify,
            "gen-graph": run_gen_graph, "gradcheck": run_gradcheck}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except GsrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except MemoryError as exc:
        print(f"error: out of memory: {exc}", file=sys.stderr)
        return ResourceError.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
