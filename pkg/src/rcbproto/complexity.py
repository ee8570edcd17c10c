"""Closed-form parameter and MAC accounting for the embedding network.

Counting rules (shared with the instrumented kernels in ``numerics``):

* conv: ``C_in * kh * kw * H_out * W_out * C_out``; depthwise: ``C * kh * kw * H * W``
* BLSTM: ``T * 2 * 4 * (J * hidden + hidden**2)`` per group (gate pre-activations)
* elementwise binary ops: one MAC per output element
* reductions (means, statistics pooling): one MAC per input element and
  statistic; nonlinearities and bias additions are free
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, replace
from typing import Iterable, Sequence

from .embedder import ModelConfig

FRAMES_PER_SECOND = 100  # 10 ms hop

# Reported values for the main configuration (I=4, M/L=2) on 7 s inputs.
REFERENCE_MS_I4 = 54.14e3
REFERENCE_MACS_I4_7S = 38.74e6
REFERENCE_MACS_PER_SECOND = {1: 5.54e6, 3: 16.63e6, 5: 27.71e6}


def frames_for_seconds(seconds: float) -> int:
    """Nominal frame count of ``seconds`` of audio (one frame per hop)."""
    return int(round(seconds * FRAMES_PER_SECOND))


@dataclass(frozen=True)
class LayerCost:
    name: str
    params: int
    macs: int


@dataclass
class ComplexityReport:
    config: ModelConfig
    n_frames: int
    layers: list[LayerCost]

    @property
    def param_count(self) -> int:
        return sum(layer.params for layer in self.layers)

    @property
    def macs(self) -> int:
        return sum(layer.macs for layer in self.layers)

    def to_dict(self) -> dict:
        return {
            "config": self.config.as_dict(),
            "n_frames": self.n_frames,
            "param_count": self.param_count,
            "macs": self.macs,
            "layers": [asdict(layer) for layer in self.layers],
        }


def report(config: ModelConfig, T: int) -> ComplexityReport:
    if T < 1:
        raise ValueError("T must be >= 1")
    I, J, h, S = config.I, config.J, config.blstm_hidden, config.stem_channels
    L, M, E, H = config.L, config.M, config.E, config.H
    k2 = config.kernel_size**2
    hh = config.map_height  # BLSTM output features, the conv image height
    area = hh * T  # spatial size of every RCB feature map

    layers = [
        LayerCost("blstm", 2 * 4 * (J * h + h * h + h), I * T * 2 * 4 * (J * h + h * h)),
        LayerCost("stem_conv", k2 * S + S, I * k2 * area * S),
        LayerCost("drc_conv", S * k2 * L + L, I * S * k2 * area * L),
        LayerCost("drc_depthwise", L * (E - 1) * (k2 + 1), I * L * (E - 1) * k2 * area),
        # mean over groups reads I maps, the addition writes I maps
        LayerCost("interaction", 0, 2 * I * M * area),
        LayerCost("group_height_mean", 0, I * M * area),
        LayerCost("residual_conv", M + M, H * T * M),
        LayerCost("residual_height_mean", 0, M * H * T),
        LayerCost("residual_add", 0, M * T),
        LayerCost("stats_pool", 0, 2 * M * T),
    ]
    return ComplexityReport(config, T, layers)


def param_count(config: ModelConfig) -> int:
    return report(config, 1).param_count


def macs(config: ModelConfig, T: int) -> int:
    return report(config, T).macs


def config_for(config: ModelConfig, axis: str, value: int) -> ModelConfig:
    """``axis`` is ``"I"`` (feature subsets) or ``"ML"`` (M/L ratio at fixed M)."""
    if axis == "I":
        return replace(config, I=value)
    if axis == "ML":
        if value < 1 or config.M % value:
            raise ValueError(f"M={config.M} is not divisible by M/L={value}")
        return replace(config, L=config.M // value)
    raise ValueError(f"unknown sweep axis {axis!r}; use 'I' or 'ML'")


def sweep(config: ModelConfig, axis: str, values: Iterable[int], T: int = FRAMES_PER_SECOND) -> list[tuple[int, ComplexityReport]]:
    return [(v, report(config_for(config, axis, v), T)) for v in values]


def sweep_csv(rows: Sequence[tuple[int, ComplexityReport]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["axis_value", "params", "macs_per_1s"])
    for value, rep in rows:
        per_second = macs(rep.config, frames_for_seconds(1))
        w.writerow([value, rep.param_count, per_second])
    return buf.getvalue()


def sweep_json(axis: str, rows: Sequence[tuple[int, ComplexityReport]]) -> str:
    return json.dumps(
        {"axis": axis, "rows": [dict(axis_value=v, **rep.to_dict()) for v, rep in rows]},
        indent=2,
    )


def reference_comparison(config: ModelConfig = ModelConfig()) -> dict:
    """Relative deviation of this accountant from the reported MS and 7 s MACs.

    ``diverging_terms`` lists layers whose MACs alone exceed 25% of the
    reported total, i.e. the terms that explain a miss.
    """
    rep = report(config, frames_for_seconds(7))
    ms_dev = rep.param_count / REFERENCE_MS_I4 - 1.0
    macs_dev = rep.macs / REFERENCE_MACS_I4_7S - 1.0
    return {
        "param_count": rep.param_count,
        "reference_param_count": REFERENCE_MS_I4,
        "param_deviation": ms_dev,
        "macs_7s": rep.macs,
        "reference_macs_7s": REFERENCE_MACS_I4_7S,
        "macs_deviation": macs_dev,
        "params_within_25pct": abs(ms_dev) <= 0.25,
        "macs_within_25pct": abs(macs_dev) <= 0.25,
        "diverging_terms": [
            layer.name for layer in rep.layers if layer.macs > 0.25 * REFERENCE_MACS_I4_7S
        ],
        "layer_macs_7s": {layer.name: layer.macs for layer in rep.layers},
    }
