"""Flat ``section.key = value`` experiment config files.

Example::

    # tokens-collapse ablation, three seeds
    experiment.kind = tokens-collapse-ablation
    experiment.seeds = 0, 1, 2
    experiment.dims = 2, 3, 8
    train.codebook_size = 128
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ArtifactError, ConfigError
from .synthdata import MixtureSpec
from .vqvae import TrainConfig

KINDS = ("tokens-collapse-ablation", "codebook-size-sweep", "capacity-sweep", "single-run")

_KIND_DEFAULTS = {
    "tokens-collapse-ablation": {"dims": (2, 3, 8), "sweep": ()},
    "codebook-size-sweep": {"dims": (2,), "sweep": (32, 128, 512, 2048)},
    "capacity-sweep": {"dims": (3,), "sweep": (4, 8, 16, 32)},
    "single-run": {"dims": (2,), "sweep": ()},
}


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    data: MixtureSpec = field(default_factory=MixtureSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: tuple = ()
    seeds: tuple = (0, 1, 2)
    dims: tuple = (2,)
    out_dir: Path = Path("vqc-out")
    experiment_id: str = ""
    test_fraction: float = 0.1
    split_seed: int = 0
    # arm schedules; the single-run kind uses train.epochs / train.pretrain_epochs
    baseline_epochs: int = 200
    pretrain_epochs: int = 100
    finetune_epochs: int = 100
    epsilon: float = 3.0
    threshold: float = 4.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if not self.seeds:
            raise ConfigError("experiment.seeds must not be empty")
        if self.kind in ("codebook-size-sweep", "capacity-sweep") and not self.sweep:
            raise ConfigError(f"{self.kind} needs non-empty experiment.sweep values")
        if self.kind == "codebook-size-sweep" and list(self.sweep) != sorted(self.sweep):
            raise ConfigError("codebook sizes in experiment.sweep must be ascending")
        if not self.experiment_id:
            object.__setattr__(self, "experiment_id", self.kind)

    @classmethod
    def for_kind(cls, kind: str, **kw) -> "ExperimentConfig":
        defaults = dict(_KIND_DEFAULTS.get(kind, {}))
        defaults.update(kw)
        return cls(kind=kind, **defaults)


def parse_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or "." not in key:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {raw!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _convert(value: str, like, key: str):
    try:
        if isinstance(like, bool):
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return value.lower() in ("true", "1", "yes")
        if isinstance(like, int):
            return int(value)
        if isinstance(like, float):
            return float(value)
        if isinstance(like, tuple):
            return tuple(int(v) for v in value.replace(",", " ").split())
        if isinstance(like, Path):
            return Path(value)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {value!r}") from exc
    return value


def _section(cls, entries: dict[str, str], prefix: str, base) -> dict:
    kw = {}
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in entries.items():
        name = key[len(prefix) + 1:]
        if name not in names or name == "cluster_means":
            raise ConfigError(f"unknown key {key!r}")
        like = getattr(base, name)
        if like is None:  # optional ints in TrainConfig
            like = 0
        kw[name] = None if value.lower() == "none" else _convert(value, like, key)
    return kw


def from_mapping(entries: dict[str, str]) -> ExperimentConfig:
    groups: dict[str, dict[str, str]] = {"experiment": {}, "data": {}, "train": {}}
    for key, value in entries.items():
        section = key.split(".", 1)[0]
        if section not in groups:
            raise ConfigError(f"unknown section in key {key!r}")
        groups[section][key] = value
    exp = groups["experiment"]
    kind = exp.pop("experiment.kind", None)
    if kind is None:
        raise ConfigError("experiment.kind is required")
    try:
        data = MixtureSpec(**_section(MixtureSpec, groups["data"], "data", MixtureSpec()))
        train = TrainConfig(**_section(TrainConfig, groups["train"], "train", TrainConfig()))
        probe = ExperimentConfig.for_kind(kind)
        kw = _section(ExperimentConfig, exp, "experiment", probe)
        kw.pop("kind", None)
        return ExperimentConfig.for_kind(kind, data=data, train=train, **kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ArtifactError(f"cannot read config {path}: {exc}") from exc
    return from_mapping(parse_text(text))
