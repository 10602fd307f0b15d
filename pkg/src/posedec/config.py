"""Run configuration: one JSON document with ``skeleton``, ``decode``,
``loss``, ``synth`` and ``score`` sections layered over built-in defaults."""
import json
import os
from dataclasses import asdict, dataclass, field, fields

from posedec.decoder import DecodeConfig
from posedec.losses import LossConfig
from posedec.synth import SceneSpec
from posedec.targets import SkeletonConfig

ENV_VAR = "POSEDEC_CONFIG"


@dataclass
class ScoreConfig:
    hidden: tuple = (64, 64)
    lr: float = 0.01
    epochs: int = 300
    batch_size: int = 32
    train_scenes: int = 24
    noise_sigma: float = 0.05
    offset_noise_sigma: float = 2.0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 1 or self.train_scenes < 1:
            raise ValueError("score hyperparameters must be positive")


@dataclass
class RunConfig:
    skeleton: SkeletonConfig = field(default_factory=SkeletonConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    synth: SceneSpec = field(default_factory=SceneSpec)
    score: ScoreConfig = field(default_factory=ScoreConfig)

    def to_dict(self):
        d = {f.name: asdict(getattr(self, f.name)) for f in fields(self)}
        d["loss"]["lambda"] = d["loss"].pop("lam")
        return _plain(d)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _section(cls, name, values):
    if not isinstance(values, dict):
        raise ValueError(f"config section {name!r} must be an object")
    values = dict(values)
    if cls is LossConfig and "lambda" in values:
        values["lam"] = values.pop("lambda")
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown keys in section {name!r}: {sorted(unknown)}")
    return values


def build_config(overrides=None):
    """Merge a (possibly partial) config dict over the defaults."""
    overrides = overrides or {}
    sections = {f.name: f for f in fields(RunConfig)}
    unknown = set(overrides) - set(sections)
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    defaults = RunConfig()
    parts = {}
    for name in sections:
        cls = type(getattr(defaults, name))
        base = asdict(getattr(defaults, name))
        base.update(_section(cls, name, overrides.get(name, {})))
        parts[name] = cls(**base)
    return RunConfig(**parts)


def load_config(path=None):
    """Read ``path`` (falling back to ``$POSEDEC_CONFIG``) and merge it over
    the defaults; no file means pure defaults."""
    path = path or os.environ.get(ENV_VAR)
    if not path:
        return build_config()
    with open(path) as f:
        return build_config(json.load(f))
