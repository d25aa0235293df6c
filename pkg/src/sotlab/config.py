"""Run configuration: an INI document with one section per component.

Unknown sections or keys are errors. Values are coerced to the type of the
corresponding dataclass default.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .aed import AedConfig
from .frontend import FrontendConfig
from .trainer import TrainConfig
from .vocab import token_names


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    train_manifest: str = ""
    valid_manifest: str = ""
    out_dir: str = "exp"
    vocab_size: int = 12


@dataclass
class ModelSection:
    model_dim: int = 64
    encoder_layers: int = 6
    shared_encoder_layers: int = 5
    decoder_layers: int = 2
    num_branches: int = 1
    saa: bool = False
    att_dim: int = 0
    att_conv_filters: int = 10
    att_conv_width: int = 15
    init_range: float = 0.05


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    def aed_config(self) -> AedConfig:
        m = dataclasses.asdict(self.model)
        m["att_dim"] = m["att_dim"] or None
        stack = self.frontend.stack
        return AedConfig(words=tuple(token_names(self.data.vocab_size)),
                         input_dim=self.frontend.n_mels * stack, **m)

    def to_dict(self) -> dict:
        return {"data": dataclasses.asdict(self.data), "frontend": dataclasses.asdict(self.frontend),
                "model": dataclasses.asdict(self.model), "train": dataclasses.asdict(self.train),
                "run": {"seed": self.seed}}

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def dumps(self) -> str:
        lines = []
        for sec, vals in self.to_dict().items():
            lines.append(f"[{sec}]")
            lines += [f"{k} = {'' if v is None else v}" for k, v in vals.items()]
            lines.append("")
        return "\n".join(lines)


SECTIONS = {"data": DataConfig, "frontend": FrontendConfig, "model": ModelSection, "train": TrainConfig}


def _coerce(cls, key: str, raw: str):
    hints = typing.get_type_hints(cls)
    tp = hints[key]
    args = typing.get_args(tp)
    optional = type(None) in args
    if optional:
        if raw.strip().lower() in ("", "none"):
            return None
        tp = next(a for a in args if a is not type(None))
    try:
        if tp is bool:
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        return tp(raw.strip())
    except ValueError:
        raise ConfigError(f"{cls.__name__}.{key}: cannot parse {raw!r} as {tp.__name__}") from None


def load_config(path=None, overrides: Sequence[str] = ()) -> RunConfig:
    """Read an INI file (optional) and apply ``section.key=value`` overrides."""
    values: dict[str, dict[str, str]] = {s: {} for s in SECTIONS}
    seed = "0"
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        if not parser.read(path):
            raise ConfigError(f"cannot read config {path}")
        for sec in parser.sections():
            if sec == "run":
                for k, v in parser[sec].items():
                    if k != "seed":
                        raise ConfigError(f"unknown key run.{k}")
                    seed = v
                continue
            if sec not in SECTIONS:
                raise ConfigError(f"unknown section [{sec}]")
            values[sec].update(parser[sec])
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        lhs, v = item.split("=", 1)
        sec, k = lhs.split(".", 1)
        if sec == "run" and k == "seed":
            seed = v
            continue
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section {sec!r} in override {item!r}")
        values[sec][k] = v
    built = {}
    for sec, cls in SECTIONS.items():
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values[sec]) - names
        if unknown:
            raise ConfigError(f"unknown key(s) in [{sec}]: {', '.join(sorted(unknown))}")
        try:
            built[sec] = cls(**{k: _coerce(cls, k, v) for k, v in values[sec].items()})
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"[{sec}]: {exc}") from None
    try:
        seed_val = int(seed)
    except ValueError:
        raise ConfigError(f"run.seed must be an integer, got {seed!r}") from None
    cfg = RunConfig(built["data"], built["frontend"], built["model"], built["train"], seed_val)
    if path is not None:
        base = Path(path).parent
        for key in ("train_manifest", "valid_manifest", "out_dir"):
            p = getattr(cfg.data, key)
            if p and not Path(p).is_absolute():
                setattr(cfg.data, key, str(base / p))
    return cfg
