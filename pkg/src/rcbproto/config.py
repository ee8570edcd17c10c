"""Run configuration: one INI-style file plus command-line overrides.

File layout (every section and key optional)::

    [model]   H, I, blstm_hidden, stem_channels, kernel_size, L, M, distance
    [train]   episodes, n_way, k_shot, n_query, learning_rate
    [eval]    episodes, n_way, k_shot, n_query, trials
    [synth]   num_speakers, samples_per_speaker, frames, templates, noise_sigma, train_speakers
              (synthetic features have model.H mel rows)
    [paths]   manifest, checkpoint, output_dir
    [run]     seed

Precedence is flags > file > defaults. Unknown sections or keys are errors.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Optional

from .datagen import SynthSpec
from .embedder import ModelConfig
from .episodic import TrainSpec


class ConfigError(ValueError):
    """Invalid configuration; reported before any work starts."""


@dataclass(frozen=True)
class EvalSpec:
    episodes: int = 100
    n_way: int = 5
    k_shot: int = 5
    n_query: Optional[int] = None
    trials: int = 1000

    def __post_init__(self) -> None:
        if min(self.episodes, self.n_way, self.k_shot, self.trials) < 1:
            raise ValueError("eval episodes, n_way, k_shot and trials must be >= 1")
        if self.n_query is not None and self.n_query < 1:
            raise ValueError("n_query must be >= 1")


@dataclass(frozen=True)
class Paths:
    manifest: Optional[str] = None
    checkpoint: Optional[str] = None
    output_dir: str = "out"


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSpec = field(default_factory=TrainSpec)
    eval: EvalSpec = field(default_factory=EvalSpec)
    synth: SynthSpec = field(default_factory=SynthSpec)
    train_speakers: Optional[int] = None
    paths: Paths = field(default_factory=Paths)
    seed: int = 0

    def train_spec(self) -> TrainSpec:
        return replace(self.train, seed=self.seed)

    def synth_spec(self) -> SynthSpec:
        return replace(self.synth, seed=self.seed, n_mels=self.model.H)


def _opt_int(s: str) -> Optional[int]:
    return None if s.strip().lower() in ("", "none") else int(s)


# file key -> (dataclass attribute, string parser)
_MODEL_KEYS = {f.name: (f.name, str if f.name == "distance" else int) for f in fields(ModelConfig)}
_TRAIN_KEYS = {
    "episodes": ("episodes_total", int),
    "n_way": ("N", int),
    "k_shot": ("K", int),
    "n_query": ("n_query", _opt_int),
    "learning_rate": ("learning_rate", float),
}
_EVAL_KEYS = {f.name: (f.name, _opt_int if f.name == "n_query" else int) for f in fields(EvalSpec)}
_SYNTH_KEYS = {
    "num_speakers": ("num_speakers", int),
    "samples_per_speaker": ("samples_per_speaker", int),
    "frames": ("frames_per_sample", int),
    "templates": ("template_count_per_speaker", int),
    "noise_sigma": ("noise_sigma", float),
    "train_speakers": ("train_speakers", _opt_int),
}
_PATH_KEYS = {f.name: (f.name, str) for f in fields(Paths)}
_RUN_KEYS = {"seed": ("seed", int)}

SECTIONS: dict[str, dict] = {
    "model": _MODEL_KEYS,
    "train": _TRAIN_KEYS,
    "eval": _EVAL_KEYS,
    "synth": _SYNTH_KEYS,
    "paths": _PATH_KEYS,
    "run": _RUN_KEYS,
}


def _parse_value(section: str, key: str, raw: Any):
    try:
        attr, conv = SECTIONS[section][key]
    except KeyError:
        raise ConfigError(f"unknown key {key!r} in section [{section}]") from None
    if not isinstance(raw, str):
        return attr, raw
    try:
        return attr, conv(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from None


def read_config_file(path) -> dict[str, dict[str, str]]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    parser = configparser.ConfigParser(interpolation=None, default_section="\0unused")
    parser.optionxform = str  # keys are case-sensitive (H, L, M)
    try:
        parser.read(p, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{p}: {exc}") from None
    out = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}] in {p}")
        out[section] = dict(parser[section])
    return out


def build_run_config(
    file_values: Optional[Mapping[str, Mapping[str, Any]]] = None,
    overrides: Optional[Mapping[str, Mapping[str, Any]]] = None,
) -> RunConfig:
    """Merge defaults, file values, then overrides (``None`` override values are ignored)."""
    merged: dict[str, dict[str, Any]] = {s: {} for s in SECTIONS}
    for source in (file_values or {}, overrides or {}):
        for section, values in source.items():
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]")
            for key, raw in values.items():
                if raw is None:
                    continue
                attr, value = _parse_value(section, key, raw)
                merged[section][attr] = value

    train_speakers = merged["synth"].pop("train_speakers", None)
    try:
        cfg = RunConfig(
            model=ModelConfig(**merged["model"]),
            train=TrainSpec(**merged["train"]),
            eval=EvalSpec(**merged["eval"]),
            synth=SynthSpec(**merged["synth"]),
            train_speakers=train_speakers,
            paths=Paths(**merged["paths"]),
            seed=merged["run"].get("seed", 0),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    validate_run_config(cfg)
    return cfg


def validate_run_config(cfg: RunConfig) -> None:
    if cfg.seed < 0 or cfg.seed >= 1 << 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if cfg.train_speakers is not None and not 0 < cfg.train_speakers < cfg.synth.num_speakers:
        raise ConfigError("train_speakers must be between 1 and num_speakers - 1")
