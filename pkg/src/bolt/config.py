"""Flat ``key=value`` run configuration covering ModelConfig and TrainConfig."""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .model import ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


_BOOL = {"true": True, "1": True, "yes": True, "on": True, "false": False, "0": False, "no": False, "off": False}


def _fields(cls) -> dict[str, type]:
    hints = {"int": int, "float": float, "bool": bool, "int | None": int}
    return {f.name: hints.get(f.type, f.type) for f in dataclasses.fields(cls)}


def _convert(key: str, raw: str, typ):
    if typ is bool:
        try:
            return _BOOL[raw.lower()]
        except KeyError:
            raise ConfigError(f"{key}: expected a boolean, got {raw!r}") from None
    try:
        return typ(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {typ.__name__}, got {raw!r}") from None


def parse_config(text: str, source: str = "<config>") -> tuple[ModelConfig, TrainConfig]:
    mfields, tfields = _fields(ModelConfig), _fields(TrainConfig)
    mvals, tvals = {}, {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, raw = (p.strip() for p in line.split("=", 1))
        if key in mfields:
            mvals[key] = _convert(key, raw, mfields[key])
        elif key in tfields:
            tvals[key] = _convert(key, raw, tfields[key])
        else:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
    try:
        return ModelConfig(**mvals), TrainConfig(**tvals)
    except ValueError as e:
        raise ConfigError(f"{source}: {e}") from None


def read_config(path: str | Path) -> tuple[ModelConfig, TrainConfig]:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def format_config(model_cfg: ModelConfig, train_cfg: TrainConfig) -> str:
    lines = []
    for obj in (model_cfg, train_cfg):
        for k, v in dataclasses.asdict(obj).items():
            lines.append(f"{k}={str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"
