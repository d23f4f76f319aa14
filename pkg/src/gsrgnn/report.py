"""Line-delimited JSON run reports and their schema."""

from __future__ import annotations

import json
import math
from pathlib import Path

import jsonschema

from .errors import ConfigError

REPORT_VERSION = "1.0"

_num = {"type": "number"}
_int = {"type": "integer", "minimum": 0}
_opt_num = {"type": ["number", "null"]}


def _obj(props: dict, required: list[str] | None = None) -> dict:
    return {"type": "object", "properties": props, "required": required or list(props),
            "additionalProperties": False}


_TIMING_FIELDS = ["t_forward", "t_backward", "t_copy", "t_total", "accounted_fraction"]
# per-epoch records carry their epoch number, the run mean does not
TIMING = {"oneOf": [{"type": "null"}, _obj({"epoch": _int} | {k: _num for k in _TIMING_FIELDS},
                                           _TIMING_FIELDS)]}

MEMORY = _obj({k: _int for k in ("reserved_bytes", "active_bytes", "peak_reserved", "peak_active",
                                 "alloc_count", "reuse_count", "release_count", "destroy_count")}
              | {"utilization": _num})

WORK = _obj({"scalar_mul_adds": _int, "rows_touched": _int,
             "stages": {"type": "object", "additionalProperties": _int}})

CORRELATION = _obj({"pearson": _opt_num, "spearman": _opt_num, "kendall": _opt_num,
                    "r2": _opt_num, "count": _int,
                    "undefined": {"type": "array", "items": {"type": "string"}}})

EPOCH = _obj({
    "type": {"const": "epoch"}, "run": {"type": "string"}, "epoch": _int,
    "warmup": {"type": "boolean"}, "train_loss": _num,
    "timing": TIMING, "memory": MEMORY, "work": WORK,
})

SUMMARY = _obj({
    "type": {"const": "summary"}, "run": {"type": "string"}, "version": {"type": "string"},
    "config": {"type": "object"}, "final_train_loss": _num,
    "metrics": {"type": "object", "additionalProperties": CORRELATION},
    "timing_mean": TIMING, "memory": MEMORY, "work_per_epoch": WORK,
    "cache_bytes": _int, "checkpoint": {"type": ["string", "null"]},
})

BENCH_ROW = _obj({
    "label": {"type": "string"},
    "forward_s": _opt_num, "forward_pct": _opt_num,
    "backward_s": _opt_num, "backward_pct": _opt_num,
    "copy_s": _opt_num, "copy_pct": _opt_num,
    "total_s": _opt_num, "speedup": _opt_num,
    "accounted_fraction": _opt_num,
    "peak_active": _int, "peak_reserved": _int, "utilization": _num,
    "alloc_per_epoch": _num, "aggregate_mul_adds": _int,
})

BENCH = _obj({
    "type": {"const": "bench"}, "version": {"type": "string"}, "measured_epochs": _int,
    "rows": {"type": "array", "items": BENCH_ROW},
})

COMPARE = _obj({
    "type": {"const": "compare"}, "version": {"type": "string"}, "split": {"type": "string"},
    "runs": {"type": "object", "additionalProperties": CORRELATION},
    "differences": {"type": "object", "additionalProperties": _opt_num},
    "tolerance": _num, "within_tolerance": {"type": "boolean"},
})

CHECK = _obj({
    "type": {"const": "check"}, "suite": {"type": "string"}, "name": {"type": "string"},
    "passed": {"type": "boolean"}, "max_deviation": _opt_num, "tolerance": _opt_num,
    "seed": {"type": ["integer", "null"]}, "detail": {"type": "string"},
})

VERIFY = _obj({
    "type": {"const": "verify"}, "version": {"type": "string"}, "passed": _int, "failed": _int,
    "suites": {"type": "array", "items": {"type": "string"}},
})

GRAPH = _obj({
    "type": {"const": "graph"}, "version": {"type": "string"}, "paths": {"type": "object"},
    "summary": {"type": "object"},
})

SCHEMAS = {"epoch": EPOCH, "summary": SUMMARY, "bench": BENCH, "compare": COMPARE,
           "check": CHECK, "verify": VERIFY, "graph": GRAPH}


def clean(value):
    """Replace NaN/inf with ``None`` so records stay valid JSON."""
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {k: clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [clean(v) for v in value]
    return value


def validate(record: dict) -> None:
    kind = record.get("type")
    if kind not in SCHEMAS:
        raise ConfigError(f"unknown report record type {kind!r}")
    try:
        jsonschema.validate(record, SCHEMAS[kind])
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"{kind} record fails schema: {exc.message}") from None


def dumps(record: dict) -> str:
    record = clean(record)
    validate(record)
    return json.dumps(record, sort_keys=True, separators=(",", ":"), allow_nan=False)


class ReportWriter:
    """Collects validated records and writes them as JSON lines."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.lines: list[str] = []

    def emit(self, record: dict) -> str:
        line = dumps(record)
        self.lines.append(line)
        return line

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines)

    def close(self) -> None:
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(self.text(), encoding="utf-8")


def read_report(path) -> list[dict]:
    records = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        rec = json.loads(line)
        try:
            validate(rec)
        except ConfigError as exc:
            raise ConfigError(f"line {n}: {exc}") from None
        records.append(rec)
    return records
