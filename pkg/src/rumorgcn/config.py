"""JSON run configuration with field-path error messages."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .data import SynthConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    dataset: str | None = None  # default: <out_dir>/dataset.jsonl
    users: str | None = None
    filter_users: bool = True


@dataclass
class ModelSection:
    branch: str = "full"
    embed_dim: int = 100
    gru_hidden: int = 64
    user_hidden: int = 64
    gcn_hidden: int = 64
    fc_hidden: int = 64
    max_len: int = 40
    min_count: int = 1
    dropout: float = 0.2
    k_hop: int = 2
    lr: float = 5e-3
    batch_size: int = 16
    max_epochs: int = 200
    patience: int = 10
    validation_fraction: float = 0.1
    embeddings_path: str | None = None


@dataclass
class EvalSection:
    protocol: str = "split"  # split | kfold
    ratio: float = 0.8
    k: int = 5


@dataclass
class EarlySection:
    # null stands for "no deadline"
    deadlines: list = field(default_factory=lambda: [0, 15, 30, 60, 120, None])


@dataclass
class AttackSection:
    modes: list = field(default_factory=lambda: ["graph", "comment", "joint"])
    budgets: list = field(default_factory=lambda: [0, 1, 2, 4, 8])
    pool_size: int = 20
    max_targets: int = 20
    templates_per_class: int = 4


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    checkpoint: str | None = None  # default: <out_dir>/model.npz
    data: DataSection = field(default_factory=DataSection)
    synth: dict = field(default_factory=lambda: dataclasses.asdict(SynthConfig()))
    model: ModelSection = field(default_factory=ModelSection)
    eval: EvalSection = field(default_factory=EvalSection)
    early: EarlySection = field(default_factory=EarlySection)
    attack: AttackSection = field(default_factory=AttackSection)

    # -- derived paths --------------------------------------------------
    @property
    def dataset_path(self) -> Path:
        return Path(self.data.dataset) if self.data.dataset else Path(self.out_dir) / "dataset.jsonl"

    @property
    def checkpoint_path(self) -> Path:
        return Path(self.checkpoint) if self.checkpoint else Path(self.out_dir) / "model.npz"

    def synth_config(self) -> SynthConfig:
        known = {f.name for f in dataclasses.fields(SynthConfig)}
        for key in self.synth:
            if key not in known:
                raise ConfigError(f"synth.{key}: unknown field")
        try:
            return SynthConfig.from_dict(self.synth).validate()
        except TypeError as exc:
            raise ConfigError(f"synth: {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"synth: {exc}") from None

    def deadlines(self) -> list[float]:
        return [math.inf if d is None else float(d) for d in self.early.deadlines]

    def to_dict(self) -> dict:
        """Serializable form; ``out_dir`` is a run location, not part of the experiment."""
        d = dataclasses.asdict(self)
        d.pop("out_dir")
        return d

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _check_scalar(path: str, value: Any, default: Any) -> Any:
    if default is None or isinstance(default, (dict, list)):
        if isinstance(default, list) and not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {type(value).__name__}")
        if isinstance(default, dict) and not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object, got {type(value).__name__}")
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def _build(cls, raw: Mapping, prefix: str):
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{prefix or 'config'}: expected an object")
    proto = cls()
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in known:
            raise ConfigError(f"{path}: unknown field")
        default = getattr(proto, key)
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, path)
        else:
            kwargs[key] = _check_scalar(path, value, default)
    return cls(**kwargs)


def config_from_dict(raw: Mapping) -> RunConfig:
    cfg = _build(RunConfig, raw, "")
    if cfg.eval.protocol not in ("split", "kfold"):
        raise ConfigError(f"eval.protocol: expected 'split' or 'kfold', got {cfg.eval.protocol!r}")
    if cfg.model.branch not in ("full", "propagation", "user"):
        raise ConfigError(f"model.branch: unknown branch {cfg.model.branch!r}")
    if not 0.0 < cfg.eval.ratio < 1.0:
        raise ConfigError("eval.ratio: must lie in (0, 1)")
    if cfg.eval.k < 2:
        raise ConfigError("eval.k: must be >= 2")
    for i, d in enumerate(cfg.early.deadlines):
        if d is not None and (isinstance(d, bool) or not isinstance(d, (int, float)) or d < 0):
            raise ConfigError(f"early.deadlines[{i}]: expected a non-negative number or null")
    for i, m in enumerate(cfg.attack.modes):
        if m not in ("graph", "comment", "joint"):
            raise ConfigError(f"attack.modes[{i}]: unknown mode {m!r}")
    if cfg.attack.budgets != sorted(cfg.attack.budgets):
        raise ConfigError("attack.budgets: must be sorted ascending")
    cfg.synth = dataclasses.asdict(cfg.synth_config())
    return cfg


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    # artifacts written by the CLI embed their config under "config"
    if isinstance(raw, dict) and "config_hash" in raw and "config" in raw:
        raw = raw["config"]
    return config_from_dict(raw)
