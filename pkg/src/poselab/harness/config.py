"""Experiment configuration and its ``key = value`` file format."""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from ..model import BackboneConfig, HeadConfig
from ..synthetic import SceneConfig, TrajectoryConfig

PREPROCESSING = ("centered_crop", "whole_fov", "random_crop")
LOSSES = ("adaptive", "fixed_beta")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "run"
    # data: "synthetic" renders in memory from the scene.* / trajectory.* keys;
    # otherwise train_manifest and test_manifest name manifest files
    dataset: str = "synthetic"
    train_manifest: str = ""
    test_manifest: str = ""
    data_seed: int = 0
    scene: dict = field(default_factory=dict)
    trajectory: dict = field(default_factory=dict)
    # pipeline
    preprocessing: str = "whole_fov"
    augment: bool = False
    aug_lo: float = -20.0
    aug_hi: float = 20.0
    windows_include_augmented: bool = False
    allow_unordered_windows: bool = False   # force LSTM windows on subsampled (Cambridge) streams
    # model
    backbone: str = "default"        # "default" or "fast"
    inception: bool = False
    head: str = "fc"
    sequence_length: int = 1
    fc_hidden: int = 2048
    lstm_units: int = 64
    lstm_layers: int = 1
    shared_lstm: bool = False
    # optimization
    loss: str = "adaptive"
    beta: float = 500.0
    s_x_init: float = 0.0
    s_q_init: float = -3.0
    lr: float = 1e-4
    batch_size: int = 16
    epochs: int = 100
    seed: int = 0
    max_rejected_steps: int = 10
    # reporting
    eval_every: int = 1
    plot: bool = False
    table_group: str = ""
    table_row: str = ""
    table_column: str = ""

    def __post_init__(self):
        object.__setattr__(self, "scene", dict(self.scene))
        object.__setattr__(self, "trajectory", dict(self.trajectory))
        if self.preprocessing not in PREPROCESSING:
            raise ConfigError(f"preprocessing must be one of {PREPROCESSING}, got {self.preprocessing!r}")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.backbone not in ("default", "fast"):
            raise ConfigError(f"backbone must be 'default' or 'fast', got {self.backbone!r}")
        if self.aug_lo > self.aug_hi:
            raise ConfigError("aug_lo must not exceed aug_hi")
        if self.epochs < 0 or self.batch_size < 1 or self.eval_every < 1:
            raise ConfigError("epochs >= 0, batch_size >= 1 and eval_every >= 1 are required")
        if self.dataset != "synthetic" and not (self.train_manifest and self.test_manifest):
            raise ConfigError("non-synthetic datasets need train_manifest and test_manifest")
        try:
            self.head_config()
            self.scene_config()
            self.trajectory_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    # -------------------------------------------------------------- derived configs

    def backbone_config(self) -> BackboneConfig:
        if self.backbone == "fast":
            return BackboneConfig.fast(inception=self.inception)
        return BackboneConfig(inception=self.inception)

    def head_config(self) -> HeadConfig:
        return HeadConfig(kind=self.head, fc_hidden=self.fc_hidden, lstm_units=self.lstm_units,
                          sequence_length=self.sequence_length, lstm_layers=self.lstm_layers,
                          shared_lstm=self.shared_lstm)

    def scene_config(self) -> SceneConfig:
        return SceneConfig(**self.scene)

    def trajectory_config(self) -> TrajectoryConfig:
        return TrajectoryConfig(**self.trajectory)

    def with_updates(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)

    # -------------------------------------------------------------- text form

    def to_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("scene", "trajectory"):
                for k in sorted(v):
                    lines.append(f"{f.name}.{k} = {_fmt(v[k])}")
            else:
                lines.append(f"{f.name} = {_fmt(v)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "ExperimentConfig":
        kw = parse_key_values(text, source)
        return cls.from_mapping(kw, source)

    @classmethod
    def from_mapping(cls, kw: dict, source: str = "<config>") -> "ExperimentConfig":
        types = {f.name: f for f in fields(cls)}
        defaults = cls()
        out: dict = {"scene": {}, "trajectory": {}}
        sub_defaults = {"scene": asdict(SceneConfig()), "trajectory": asdict(TrajectoryConfig())}
        flat = {}
        for key, raw in kw.items():
            if key in sub_defaults and isinstance(raw, dict):   # the to_dict() form
                flat.update({f"{key}.{k}": v for k, v in raw.items()})
            else:
                flat[key] = raw
        for key, raw in flat.items():
            head, dot, sub = key.partition(".")
            if dot and head in sub_defaults:
                if sub not in sub_defaults[head]:
                    raise ConfigError(f"{source}: unknown key {key!r}")
                out[head][sub] = _coerce(raw, sub_defaults[head][sub], key, source)
            elif key in types and key not in ("scene", "trajectory"):
                out[key] = _coerce(raw, getattr(defaults, key), key, source)
            else:
                raise ConfigError(f"{source}: unknown key {key!r}")
        return cls(**out)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_text(path.read_text(encoding="utf-8"), str(path))


def parse_key_values(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key = key.strip()
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _fmt(v) -> str:
    if v is None:
        return "None"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(raw, default, key: str, source: str):
    if not isinstance(raw, str):
        return raw
    try:
        if raw == "None":
            return None
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float) or default is None:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{source}: bad value {raw!r} for {key}") from None


def experiment_grid(base: ExperimentConfig, lengths=(1, 5, 10, 20)) -> list:
    """{centered_crop, whole_fov} x {no augmentation, augmentation} x {FC, LSTM L...}."""
    out = []
    heads = [("fc", 1)] + [("lstm", L) for L in lengths]
    for prep, aug, (head, L) in itertools.product(("centered_crop", "whole_fov"), (False, True), heads):
        tag = f"{prep}-{'aug' if aug else 'noaug'}-{head}{L if head == 'lstm' else ''}"
        out.append(base.with_updates(name=f"{base.name}-{tag}", preprocessing=prep, augment=aug,
                                     head=head, sequence_length=L))
    return out
