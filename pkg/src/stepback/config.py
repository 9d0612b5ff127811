"""Flat key-value run configuration files.

One `key = value` per line, `#` comments, no nesting. Dotted key prefixes
route values to the model or training dataclass; bare keys name run inputs
and outputs. Unknown keys and malformed lines fail loudly.

    manifest = runs/manifest.txt
    out_dir = runs/exp1
    model.n_bins = 513
    model.clf_channels = 64,128,256,512,512
    train.seed = 7
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigurationError
from .nets import ModelConfig
from .trainer import TrainingConfig


@dataclass
class RunConfig:
    manifest: str
    out_dir: str
    model: ModelConfig
    train: TrainingConfig


def parse_config_text(text: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigurationError(f"line {lineno}: empty key or value in {raw!r}")
        if key in pairs:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        pairs[key] = value
    return pairs


def _coerce(value: str, annotation, key: str):
    if annotation in (int, "int"):
        return int(value)
    if annotation in (float, "float"):
        return float(value)
    if annotation in (bool, "bool"):
        lowered = value.lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ConfigurationError(f"{key}: expected a boolean, got {value!r}")
    if annotation in (str, "str"):
        return value
    # the only structured field is a tuple of ints, written comma separated
    return tuple(int(part) for part in value.split(","))


def _fill_dataclass(cls, values: dict[str, str], prefix: str):
    kwargs = {}
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in values.items():
        if key not in fields:
            raise ConfigurationError(f"unknown key {prefix}{key}")
        kwargs[key] = _coerce(value, fields[key].type, prefix + key)
    return cls(**kwargs)


def load_run_config(path) -> RunConfig:
    pairs = parse_config_text(Path(path).read_text())
    model_pairs: dict[str, str] = {}
    train_pairs: dict[str, str] = {}
    plain: dict[str, str] = {}
    for key, value in pairs.items():
        if key.startswith("model."):
            model_pairs[key[len("model.") :]] = value
        elif key.startswith("train."):
            train_pairs[key[len("train.") :]] = value
        else:
            plain[key] = value
    for required in ("manifest", "out_dir"):
        if required not in plain:
            raise ConfigurationError(f"config is missing required key {required!r}")
    extra = set(plain) - {"manifest", "out_dir"}
    if extra:
        raise ConfigurationError(f"unknown keys: {sorted(extra)}")
    return RunConfig(
        manifest=plain["manifest"],
        out_dir=plain["out_dir"],
        model=_fill_dataclass(ModelConfig, model_pairs, "model."),
        train=_fill_dataclass(TrainingConfig, train_pairs, "train."),
    )


def save_run_config(cfg: RunConfig, path) -> None:
    lines = [f"manifest = {cfg.manifest}", f"out_dir = {cfg.out_dir}"]
    for prefix, dc in (("model", cfg.model), ("train", cfg.train)):
        for f in dataclasses.fields(dc):
            value = getattr(dc, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{prefix}.{f.name} = {value}")
    Path(path).write_text("\n".join(lines) + "\n")
