"""Run configuration: defaults, validation and the key=value config file."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .graph import NORM_MODES, SynthConfig

MODELS = ("baseline", "gsr")
OPTIMIZERS = ("adam", "sgd")
PRECISIONS = ("f64", "f32")
SPLITS = ("train", "val", "test", "all")


@dataclass
class RunConfig:
    model: str = "gsr"
    layers: int = 10
    hidden: int = 32
    groups: int | None = None
    k: int | None = None
    norm: str = "row_mean"
    optimizer: str = "sgd"
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    momentum: float = 0.9
    epochs: int = 100
    warmup: int = 1
    seed: int = 0
    precision: str = "f64"
    deterministic: bool = False
    churn: bool = False
    index_source: str = "local"
    init_scale: float = 0.1
    use_bias: bool = False
    graph: str | None = None
    nodes: int = 2000
    degree: int = 4
    hub_fraction: float = 0.01
    hub_min: int = 50
    hub_max: int = 200
    label_hops: int = 2
    noise: float = 0.02
    metrics_split: str = "test"
    threads: int | None = None
    report: str | None = None
    checkpoint: str | None = None
    extra: dict = field(default_factory=dict, repr=False)

    def resolved(self) -> RunConfig:
        """Copy with model-specific defaults filled in, then validated."""
        cfg = dataclasses.replace(self)
        if cfg.model == "gsr" and cfg.k is None:
            cfg.k = max(1, cfg.hidden // 4)
        if cfg.model == "baseline" and cfg.groups is None:
            cfg.groups = 2
        cfg.validate()
        return cfg

    @property
    def group_count(self) -> int:
        return 2 if self.model == "gsr" else (self.groups or 2)

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.model in MODELS, f"model must be one of {MODELS}, got {self.model!r}")
        if self.model == "gsr":
            need(self.groups is None, "groups applies to the baseline model only")
            need(self.k is not None and 1 <= self.k <= self.hidden // 2,
                 f"k must lie in [1, hidden/2 = {self.hidden // 2}], got {self.k}")
            need(not self.churn, "churn emulation applies to the baseline model only")
        else:
            need(self.k is None, "k applies to the gsr model only")
            need(self.groups is not None and self.groups >= 2, f"groups must be >= 2, got {self.groups}")
            need(self.hidden % self.groups == 0,
                 f"hidden={self.hidden} is not divisible by groups={self.groups}")
        need(0 <= self.layers <= 200, f"layers must lie in [0, 200], got {self.layers}")
        need(self.hidden >= 2 and self.hidden % 2 == 0, f"hidden must be even and >= 2, got {self.hidden}")
        need(self.norm in NORM_MODES, f"norm must be one of {NORM_MODES}, got {self.norm!r}")
        need(self.optimizer in OPTIMIZERS, f"optimizer must be one of {OPTIMIZERS}")
        need(self.lr >= 0, f"lr must be non-negative, got {self.lr}")
        need(0 <= self.beta1 < 1 and 0 <= self.beta2 < 1, "Adam betas must lie in [0, 1)")
        need(self.weight_decay >= 0 and self.momentum >= 0, "weight decay and momentum must be >= 0")
        need(self.epochs >= 1, f"epochs must be >= 1, got {self.epochs}")
        need(0 <= self.warmup < self.epochs, f"warmup must lie in [0, epochs), got {self.warmup}")
        need(self.precision in PRECISIONS, f"precision must be one of {PRECISIONS}")
        need(self.index_source in ("local", "forward"), "index_source must be 'local' or 'forward'")
        need(self.metrics_split in SPLITS, f"metrics_split must be one of {SPLITS}")
        need(self.threads is None or self.threads >= 1, "threads must be >= 1")
        if self.graph is None:
            self.synth_config().validate()

    def synth_config(self) -> SynthConfig:
        return SynthConfig(n=self.nodes, base_degree=self.degree, hub_fraction=self.hub_fraction,
                           hub_degree_range=(self.hub_min, self.hub_max),
                           label_smoothing_hops=self.label_hops, noise_std=self.noise,
                           seed=self.seed, norm_mode=self.norm)

    def data_key(self) -> tuple:
        """Everything that determines the dataset; two runs with equal keys share a graph."""
        return (self.graph, self.nodes, self.degree, self.hub_fraction, self.hub_min, self.hub_max,
                self.label_hops, self.noise, self.seed, self.norm)

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("extra")
        return d


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig) if f.name != "extra"}
_BOOL = {"true": True, "yes": True, "on": True, "1": True,
         "false": False, "no": False, "off": False, "0": False}


def coerce(name: str, raw: str):
    """Parse a config-file string into the field's type."""
    if name not in _FIELDS:
        raise ConfigError(f"unknown config key {name!r}")
    default = _FIELDS[name].default
    typ = _FIELDS[name].type
    raw = raw.strip()
    if raw.lower() in ("none", "") and (default is None or "None" in str(typ)):
        return None
    try:
        if isinstance(default, bool):
            if raw.lower() not in _BOOL:
                raise ValueError(raw)
            return _BOOL[raw.lower()]
        if isinstance(default, int) or "int" in str(typ):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"config key {name!r}: cannot parse {raw!r}") from None
    return raw


def parse_config_text(text: str) -> dict:
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",), delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file: {exc}") from None
    return {key.replace("-", "_"): coerce(key.replace("-", "_"), val)
            for key, val in parser["run"].items()}


def load_config(path, overrides: dict | None = None) -> RunConfig:
    values = parse_config_text(Path(path).read_text(encoding="utf-8")) if path else {}
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig(**values)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for key, val in cfg.as_dict().items():
        if val is not None:
            lines.append(f"{key} = {str(val).lower() if isinstance(val, bool) else val}")
    return "\n".join(lines) + "\n"
