import pytest

from gsrgnn.config import RunConfig, dump_config, load_config, parse_config_text
from gsrgnn.errors import ConfigError


def test_parse_types_comments_and_dashes():
    vals = parse_config_text("model = baseline  # inline\nlayers=3\nlr = 0.5\nchurn = yes\n"
                             "hub-fraction = 0.1\n; comment\ngroups = none\n")
    assert vals == {"model": "baseline", "layers": 3, "lr": 0.5, "churn": True,
                    "hub_fraction": 0.1, "groups": None}


@pytest.mark.parametrize("text", ["bogus = 1\n", "layers = many\n", "churn = maybe\n", "no equals\n"])
def test_malformed_config_text(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_resolved_fills_model_defaults():
    assert RunConfig(model="gsr", hidden=32).resolved().k == 8
    assert RunConfig(model="baseline").resolved().groups == 2


@pytest.mark.parametrize("kwargs, message", [
    ({"model": "gsr", "hidden": 32, "k": 17}, "k must lie"),
    ({"model": "gsr", "k": 0}, "k must lie"),
    ({"model": "gsr", "groups": 2}, "groups applies"),
    ({"model": "gsr", "churn": True}, "churn"),
    ({"model": "baseline", "k": 4}, "k applies"),
    ({"model": "baseline", "hidden": 30, "groups": 4}, "not divisible"),
    ({"model": "baseline", "groups": 1}, "groups must be"),
    ({"hidden": 7}, "even"),
    ({"layers": 201}, "layers"),
    ({"epochs": 2, "warmup": 2}, "warmup"),
    ({"nodes": 100, "hub_fraction": 0.1, "hub_min": 50, "hub_max": 95}, "infeasible"),
    ({"model": "mlp"}, "model must be"),
])
def test_invalid_configs_are_rejected_with_reason(kwargs, message):
    with pytest.raises(ConfigError, match=message):
        RunConfig(**kwargs).resolved()


def test_file_roundtrip_and_overrides(tmp_path):
    cfg = RunConfig(model="baseline", groups=4, hidden=16, churn=True, lr=0.25).resolved()
    path = tmp_path / "run.cfg"
    path.write_text(dump_config(cfg))
    back = load_config(path, {"epochs": 7, "lr": None})
    assert back.resolved().as_dict() == {**cfg.as_dict(), "epochs": 7}
