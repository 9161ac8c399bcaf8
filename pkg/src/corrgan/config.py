"""Run configuration: one JSON document, one root seed, JSON-lines logging."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import corruptions
from .errors import InvalidSpec, IoError
from .training import TrainConfig

CONFIG_ENV = "CORRGAN_CONFIG"
STAGES = ("classifier", "noise_classifier", "gan")
PATH_KEYS = ("dataset", "test", "datasets", "nc_test", "out", "classifier", "corrupted", "clean",
             "manifest", "ablation_manifest", "report", "cifar_dir")

# desk-scale stage defaults; any field can be overridden in the config file
STAGE_DEFAULTS = {
    "classifier": {"epochs": 2, "batch_size": 64},
    "noise_classifier": {"epochs": 3, "batch_size": 64},
    "gan": {"epochs": 2, "batch_size": 64},
}


@dataclass
class CorruptionConfig:
    kinds: list = field(default_factory=lambda: ["fog", "brightness"])
    severities: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    params: dict = field(default_factory=dict)

    def apply(self) -> None:
        for kind, params in self.params.items():
            corruptions.set_params(kind, [tuple(p) if isinstance(p, list) else p for p in params])
        for k in self.kinds:
            corruptions.get_kind(k)
        for s in self.severities:
            if s not in corruptions.SEVERITIES:
                raise InvalidSpec(f"severity must be in 1..5, got {s}")


@dataclass
class RunConfig:
    seed: int = 0
    deterministic: bool = True
    classifier: dict = field(default_factory=dict)
    noise_classifier: dict = field(default_factory=dict)
    gan: dict = field(default_factory=dict)
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)
    paths: dict = field(default_factory=dict)

    def __post_init__(self):
        for stage in STAGES:
            self.stage(stage)  # validates keys and values
        unknown = set(self.paths) - set(PATH_KEYS)
        if unknown:
            raise InvalidSpec(f"unknown path keys: {sorted(unknown)}")

    def stage(self, name: str, **overrides) -> TrainConfig:
        """TrainConfig for a stage; its seed is always the root seed."""
        d = {**STAGE_DEFAULTS[name], **getattr(self, name)}
        if "seed" in d:
            raise InvalidSpec(f"{name}.seed: stage seeds derive from the root 'seed'")
        d.update({k: v for k, v in overrides.items() if v is not None})
        d["seed"] = self.seed
        d["deterministic"] = self.deterministic
        return TrainConfig.from_dict(d)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidSpec(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        corr = d.pop("corruption", {})
        cknown = {f.name for f in fields(CorruptionConfig)}
        if set(corr) - cknown:
            raise InvalidSpec(f"unknown corruption keys: {sorted(set(corr) - cknown)}")
        return cls(corruption=CorruptionConfig(**corr), **d)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "deterministic": self.deterministic,
            **{s: dict(getattr(self, s)) for s in STAGES},
            "corruption": {"kinds": list(self.corruption.kinds), "severities": list(self.corruption.severities),
                           "params": dict(self.corruption.params)},
            "paths": dict(self.paths),
        }


def load_config(path: str | Path | None = None) -> RunConfig:
    """Read the config at ``path``, else ``$CORRGAN_CONFIG``, else defaults."""
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise IoError(f"config file not found: {path}")
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidSpec(f"{path}: invalid JSON ({exc})") from exc
    return RunConfig.from_dict(d)


class JsonFormatter(logging.Formatter):
    def format(self, record):
        d = {"ts": self.formatTime(record, "%Y-%m-%dT%H:%M:%S"), "level": record.levelname,
             "logger": record.name, "msg": record.getMessage()}
        return json.dumps(d)


def setup_logging(level: str = "INFO") -> None:
    handler = logging.StreamHandler()
    handler.setFormatter(JsonFormatter())
    root = logging.getLogger("corrgan")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False
