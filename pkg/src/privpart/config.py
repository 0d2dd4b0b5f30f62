"""Experiment configuration: TOML files validated against a strict schema."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Literal, Optional, Union

import tomli
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .nn import SGD, Adam


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field path."""


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class OptimizerConfig(_Section):
    kind: Literal["adam", "sgd"] = "adam"
    lr: float = Field(1e-4, gt=0)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = Field(0.0, ge=0, lt=1)
    weight_decay: float = Field(0.0, ge=0)
    decay_factor: float = 1.0
    decay_every: int = Field(0, ge=0)

    def build(self) -> Adam | SGD:
        if self.kind == "adam":
            return Adam(self.lr, self.beta1, self.beta2, self.eps)
        return SGD(self.lr, self.momentum, self.weight_decay, self.decay_factor, self.decay_every)


class DatasetSection(_Section):
    source: Literal["mnist", "synthetic"]
    path: Optional[str] = None
    seed: int
    train_limit: Optional[int] = Field(None, ge=1)
    test_limit: Optional[int] = Field(None, ge=1)
    # synthetic only
    classes: int = Field(10, ge=2)
    per_class: int = Field(100, ge=2)
    side: int = Field(28, ge=8)
    train_fraction: float = Field(0.8, gt=0, lt=1)

    @model_validator(mode="after")
    def _path_for_mnist(self):
        if self.source == "mnist" and not self.path:
            raise ValueError("path is required when source = 'mnist'")
        return self


class ModelSection(_Section):
    kind: Literal["mnist-mlp", "small-cnn", "layers"] = "mnist-mlp"
    hidden: int = Field(800, ge=1)
    depth: int = Field(3, ge=2)
    dropout: float = Field(0.1, ge=0, lt=1)
    layers: Optional[list[dict[str, Any]]] = None

    @model_validator(mode="after")
    def _layers_for_kind(self):
        if self.kind == "layers" and not self.layers:
            raise ValueError("layers must be given when kind = 'layers'")
        return self


class PartitionSection(_Section):
    cut: Union[int, str] = "fc2"
    cuts: Optional[list[Union[int, str]]] = None


class DefenseSection(_Section):
    lam: float = Field(0.0, ge=0)
    defenders: list[str] = ["relu-800"]
    dissimilarity: Literal["mse", "one-minus-ssim"] = "one-minus-ssim"
    steps: int = Field(1, ge=1)
    epochs: int = Field(10, ge=1)
    batch_size: int = Field(32, ge=1)
    optimizer: OptimizerConfig = OptimizerConfig(kind="adam", lr=1e-4)
    defender_optimizer: OptimizerConfig = OptimizerConfig(kind="adam", lr=1e-3)
    validation_fraction: float = Field(0.0, ge=0, lt=1)
    seed: int

    @field_validator("defenders")
    @classmethod
    def _known(cls, v):
        from .defense import DEFENDER_NAMES
        for name in v:
            if name not in DEFENDER_NAMES:
                raise ValueError(f"unknown defender {name!r}; choose from {sorted(DEFENDER_NAMES)}")
        return v


class AttackSection(_Section):
    partition: Optional[str] = None
    attackers: Union[Literal["all"], list[str]] = "all"
    epochs: int = Field(10, ge=1)
    batch_size: int = Field(32, ge=1)
    lr: float = Field(1e-3, gt=0)
    seed: int


class DPSection(_Section):
    b: int = Field(2, ge=1)
    m: int = Field(1, ge=1)
    epsilons: list[float] = [0.1, 0.5, 1.0, 5.0, 1e6]
    scale: float = 1.0
    seeds: list[int] = Field(min_length=1)
    partition: Optional[str] = None

    @field_validator("epsilons")
    @classmethod
    def _positive(cls, v):
        if not v or any(e <= 0 for e in v):
            raise ValueError("epsilons must be a non-empty list of positive numbers")
        return v


class RuntimeSection(_Section):
    host: str = "127.0.0.1"
    port: int = Field(7878, ge=0, le=65535)
    max_concurrent: int = Field(8, ge=1)
    max_payload: int = Field(64 * 2 ** 20, ge=16)
    timeout: float = Field(10.0, gt=0)
    partition: Optional[str] = None
    count: int = Field(32, ge=1)
    index: int = Field(0, ge=0)


class ExperimentConfig(_Section):
    dataset: DatasetSection
    model: ModelSection = ModelSection()
    partition: PartitionSection = PartitionSection()
    defense: Optional[DefenseSection] = None
    attack: Optional[AttackSection] = None
    dp: Optional[DPSection] = None
    runtime: RuntimeSection = RuntimeSection()

    def canonical(self) -> dict:
        return self.model_dump(mode="json")

    def config_hash(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    def seeds(self) -> dict:
        out = {"dataset": self.dataset.seed}
        if self.defense is not None:
            out["defense"] = self.defense.seed
        if self.attack is not None:
            out["attack"] = self.attack.seed
        if self.dp is not None:
            out["dp"] = list(self.dp.seeds)
        return out


def _parse_value(text: str):
    """Interpret an override value as TOML, falling back to a bare string."""
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def apply_override(data: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form section.key=value")
    key, value = assignment.split("=", 1)
    parts = key.strip().split(".")
    if not all(parts):
        raise ConfigError(f"override key {key!r} is malformed")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{key}: {p} is not a section")
    node[parts[-1]] = _parse_value(value.strip())


def _format_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        msg = "unknown key" if e["type"] == "extra_forbidden" else e["msg"]
        lines.append(f"{path}: {msg}")
    return "; ".join(lines)


def _resolve_paths(cfg: ExperimentConfig, base: Path | None) -> None:
    if base is None:
        return
    for section, field in (("dataset", "path"), ("attack", "partition"), ("dp", "partition"),
                           ("runtime", "partition")):
        sec = getattr(cfg, section)
        if sec is not None and getattr(sec, field):
            p = Path(getattr(sec, field))
            if not p.is_absolute():
                setattr(sec, field, str((base / p).resolve()))


def load_config(path=None, overrides=(), seed: int | None = None, text: str | None = None,
                check_paths: bool = True) -> ExperimentConfig:
    """Read, override and validate a configuration.

    ``seed`` replaces every seed field present. Relative paths are resolved
    against the config file's directory.
    """
    try:
        if text is None:
            if path is None:
                raise ConfigError("no configuration given (use --config PATH)")
            try:
                text = Path(path).read_text(encoding="utf-8")
            except OSError as e:
                raise ConfigError(f"cannot read config {path}: {e.strerror}") from e
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"{path or '<text>'}: {e}") from e
    for o in overrides:
        apply_override(data, o)
    if seed is not None:
        for section in ("dataset", "defense", "attack"):
            if isinstance(data.get(section), dict):
                data[section]["seed"] = seed
        if isinstance(data.get("dp"), dict):
            data["dp"]["seeds"] = [seed]
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_format_errors(e)) from None
    _resolve_paths(cfg, Path(path).resolve().parent if path is not None else None)
    if check_paths and cfg.dataset.source == "mnist" and not Path(cfg.dataset.path).is_dir():
        raise ConfigError(f"dataset.path: directory {cfg.dataset.path} not found")
    return cfg
