import json
import math

import pytest

from gsrgnn.errors import ConfigError
from gsrgnn.report import REPORT_VERSION, ReportWriter, clean, dumps, read_report

CHECK = {"type": "check", "suite": "s", "name": "n", "passed": True, "max_deviation": 0.0,
         "tolerance": 0.0, "seed": 0, "detail": ""}


def test_clean_replaces_non_finite():
    assert clean({"a": [math.nan, 1.0, math.inf]}) == {"a": [None, 1.0, None]}


def test_dumps_is_canonical_json():
    line = dumps(dict(reversed(list(CHECK.items()))))
    assert line == json.dumps(CHECK, sort_keys=True, separators=(",", ":"))


def test_schema_rejects_unknown_fields_and_types():
    with pytest.raises(ConfigError):
        dumps({**CHECK, "extra": 1})
    with pytest.raises(ConfigError):
        dumps({"type": "nonsense"})


def test_writer_roundtrip(tmp_path):
    path = tmp_path / "sub" / "r.jsonl"
    w = ReportWriter(path)
    w.emit(CHECK)
    w.emit({"type": "verify", "version": REPORT_VERSION, "passed": 1, "failed": 0, "suites": ["s"]})
    w.close()
    assert [r["type"] for r in read_report(path)] == ["check", "verify"]
    path.write_text('{"type": "check"}\n')
    with pytest.raises(ConfigError, match="line 1"):
        read_report(path)
