"""Run configuration: one flat key = value file covering every pipeline stage.

The file format is INI-style sections. Command-line flags override file
values; the file round-trips exactly through load and save.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .training import TrainConfig

__all__ = ["RunConfig", "load_run_config", "save_run_config"]


@dataclass
class RunConfig:
    input: str = ""
    output_dir: str = "out"
    seed: int = 0
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
    include_valid: bool = False
    train: TrainConfig = field(default_factory=TrainConfig)
    eval_kind: str = "full"
    eval_multiplier: int = 1000
    eval_ks: tuple[int, ...] = (100,)
    eval_runs: int = 1
    eval_exclude_valid: bool = True


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return " ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return "none"
    return str(value)


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_like(template, text: str):
    """Parse text into the type of the template value."""
    if isinstance(template, bool):
        return _parse_bool(text)
    if isinstance(template, tuple):
        elem = template[0] if template else 0
        return tuple(_parse_like(elem, part) for part in text.split())
    if isinstance(template, int):
        return int(text)
    if isinstance(template, float):
        return float(text)
    if template is None:
        return None if text.strip().lower() == "none" else int(text)
    return text


_SECTIONS = {
    "run": ("input", "output_dir", "seed"),
    "split": ("ratios",),
    "graph": ("include_valid",),
    "eval": ("eval_kind", "eval_multiplier", "eval_ks", "eval_runs", "eval_exclude_valid"),
}


def save_run_config(cfg: RunConfig, path) -> None:
    parser = configparser.ConfigParser()
    for section, names in _SECTIONS.items():
        parser[section] = {
            name.removeprefix("eval_"): _format(getattr(cfg, name)) for name in names
        }
    parser["train"] = {
        f.name: _format(getattr(cfg.train, f.name)) for f in fields(TrainConfig)
    }
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    cfg = RunConfig()
    try:
        for section, names in _SECTIONS.items():
            if not parser.has_section(section):
                continue
            for name in names:
                key = name.removeprefix("eval_")
                if parser.has_option(section, key):
                    template = getattr(cfg, name)
                    setattr(cfg, name, _parse_like(template, parser.get(section, key)))
        if parser.has_section("train"):
            defaults = TrainConfig()
            values = {}
            for f in fields(TrainConfig):
                if parser.has_option("train", f.name):
                    template = getattr(defaults, f.name)
                    values[f.name] = _parse_like(template, parser.get("train", f.name))
            cfg.train = TrainConfig(**values)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from exc
    return cfg
