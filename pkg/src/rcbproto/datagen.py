"""Deterministic synthetic speaker corpus for episodic training and evaluation.

Each speaker owns a few smooth spectral templates (three Gaussian bumps over
the mel axis on a flat floor). A sample walks through that speaker's templates
over time by linear interpolation between waypoints, then gets i.i.d.
Gaussian noise. Speaker ``s`` and sample ``j`` draw from independent seeded
substreams, so generation order does not matter.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frontend import LogMelFeature

N_BUMPS = 3


@dataclass(frozen=True)
class SynthSpec:
    num_speakers: int = 10
    samples_per_speaker: int = 20
    n_mels: int = 80
    frames_per_sample: int = 100
    template_count_per_speaker: int = 3
    noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        for name in (
            "num_speakers",
            "samples_per_speaker",
            "n_mels",
            "frames_per_sample",
            "template_count_per_speaker",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def speaker_id(index: int) -> str:
    return f"spk{index:04d}"


def _speaker_rng(spec: SynthSpec, s: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed, 0, s])


def _sample_rng(spec: SynthSpec, s: int, j: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed, 1, s, j])


def speaker_templates(spec: SynthSpec, s: int) -> np.ndarray:
    """Templates of speaker ``s``, shape ``(template_count, n_mels)``."""
    rng = _speaker_rng(spec, s)
    H = spec.n_mels
    mel = np.arange(H, dtype=np.float64)
    out = np.empty((spec.template_count_per_speaker, H))
    for t in range(spec.template_count_per_speaker):
        centers = rng.uniform(0.0, H, size=N_BUMPS)
        widths = rng.uniform(H / 40.0, H / 10.0, size=N_BUMPS)
        heights = rng.uniform(0.5, 1.5, size=N_BUMPS)
        floor = rng.uniform(-0.5, 0.5)
        bumps = heights[:, None] * np.exp(-0.5 * ((mel[None, :] - centers[:, None]) / widths[:, None]) ** 2)
        out[t] = floor + bumps.sum(axis=0)
    return out


def _walk(templates: np.ndarray, T: int, rng: np.random.Generator) -> np.ndarray:
    """Linear interpolation through randomly chosen templates; returns ``(H, T)``."""
    n_way = len(templates) + 1
    order = rng.integers(0, len(templates), size=n_way)
    anchors = np.linspace(0.0, T - 1, n_way) if T > 1 else np.zeros(1)
    if T == 1:
        return templates[order[0]][:, None].copy()
    pos = np.arange(T, dtype=np.float64)
    seg = np.minimum(np.searchsorted(anchors, pos, side="right") - 1, n_way - 2)
    frac = (pos - anchors[seg]) / (anchors[seg + 1] - anchors[seg])
    frames = (1.0 - frac)[:, None] * templates[order[seg]] + frac[:, None] * templates[order[seg + 1]]
    return frames.T


def synth_corpus(spec: SynthSpec) -> list[LogMelFeature]:
    """All samples, speaker-major order, each labelled with :func:`speaker_id`."""
    corpus = []
    for s in range(spec.num_speakers):
        templates = speaker_templates(spec, s)
        for j in range(spec.samples_per_speaker):
            rng = _sample_rng(spec, s, j)
            values = _walk(templates, spec.frames_per_sample, rng)
            if spec.noise_sigma > 0:
                values = values + rng.normal(0.0, spec.noise_sigma, size=values.shape)
            corpus.append(LogMelFeature(values, speaker_id(s)))
    return corpus
