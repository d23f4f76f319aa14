import dataclasses

import numpy as np
import pytest

from gsrgnn import trainer
from gsrgnn.config import RunConfig
from gsrgnn.errors import ConfigError, NumericalError
from gsrgnn.optim import Adam, Sgd, make_optimizer
from gsrgnn.report import ReportWriter, validate

SMALL = dict(nodes=300, degree=4, hub_fraction=0.02, hub_min=10, hub_max=40, hidden=16,
             layers=3, epochs=4, warmup=1, deterministic=True)


def run(**kw):
    return trainer.train(RunConfig(**{**SMALL, **kw}).resolved())


def test_train_emits_schema_valid_records():
    w = ReportWriter()
    res = trainer.train(RunConfig(**SMALL).resolved(), w)
    kinds = [line.split('"type":"')[1].split('"')[0] for line in w.lines]
    assert kinds == ["epoch"] * 4 + ["summary"]
    for rec in res.records + [res.summary]:
        validate(rec)
    assert res.summary["timing_mean"] is None
    assert res.predictions.shape == (300,)


def test_gsr_allocations_stop_after_warmup_and_pool_is_fully_used():
    res = run(model="gsr")
    assert res.alloc_per_epoch == 0
    assert res.memory["utilization"] >= 0.9
    assert res.memory["reuse_count"] > 0


def test_churn_allocations_grow_with_depth():
    per_epoch = [run(model="baseline", churn=True, layers=layers).alloc_per_epoch
                 for layers in (1, 2, 4)]
    assert per_epoch[0] < per_epoch[1] < per_epoch[2]
    assert run(model="baseline", layers=4).alloc_per_epoch == 0


def test_aggregate_work_is_linear_in_k():
    work = {k: run(model="gsr", hidden=32, k=k).work_per_epoch["stages"]["aggregate"]
            for k in (1, 4, 16)}
    assert work[4] == 4 * work[1] and work[16] == 16 * work[1]


def test_training_reduces_loss():
    res = run(model="gsr", epochs=30)
    losses = [r["train_loss"] for r in res.records]
    assert losses[-1] < 0.5 * losses[0]


def test_divergence_raises_numerical_error():
    with pytest.raises(NumericalError):
        run(model="baseline", lr=1e6, optimizer="sgd", epochs=20)


def test_bench_rows_and_table():
    cfgs = [RunConfig(**{**SMALL, "deterministic": False, "model": m}).resolved()
            for m in ("baseline", "gsr")]
    record, _ = trainer.cmd_bench(cfgs)
    rows = record["rows"]
    assert [r["label"] for r in rows] == ["baseline-c2", "gsr-k4"]
    assert rows[0]["speedup"] == 1.0
    for r in rows:
        assert r["forward_pct"] + r["backward_pct"] <= 100.0 + 1e-9
        assert r["accounted_fraction"] >= 0.95
    table = trainer.render_table(rows)
    for heading in ("Forward", "Backward", "copy", "Total", "Speedup"):
        assert heading in table


def test_bench_rejects_mismatched_graphs():
    a = RunConfig(**SMALL).resolved()
    with pytest.raises(ConfigError, match="mismatched"):
        trainer.cmd_bench([a, dataclasses.replace(a, seed=1)])


def test_compare_reports_gaps():
    cfgs = [RunConfig(**{**SMALL, "model": m}).resolved() for m in ("baseline", "gsr")]
    record, _ = trainer.cmd_compare(cfgs, tolerance=10.0)
    assert record["within_tolerance"]
    assert set(record["differences"]) == {"gsr-k4.pearson", "gsr-k4.spearman", "gsr-k4.kendall"}


def test_sgd_momentum_and_adam_steps():
    p, g = np.array([1.0]), np.array([0.5])
    opt = Sgd(0.1, momentum=0.9)
    opt.update("p", p, g)
    opt.update("p", p, g)
    assert p[0] == pytest.approx(1.0 - 0.05 - 0.1 * (0.9 * 0.5 + 0.5))
    q = np.array([1.0])
    Adam(0.01).update("q", q, np.array([3.0]))
    assert q[0] == pytest.approx(0.99)
    with pytest.raises(ConfigError):
        make_optimizer("rmsprop", 0.1)
