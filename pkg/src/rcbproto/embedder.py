"""Speaker embedding network: grouped RCB, feature interaction, residual, stats pooling.

Shapes, for one sample with ``T`` frames:

* input ``F``: ``(H, T)``, split into ``I`` mel groups of ``J = H / I`` rows
* shared RCB per group: BLSTM over time -> ``(2*hidden, T)`` image -> 3x3 stem conv
  + ReLU -> de-redundancy conv -> ``G_i`` of shape ``(M, 2*hidden, T)``
* interaction ``G'_i = G_i + mean_i G_i``; concatenated along height, averaged
  over height -> ``(M, T)``
* residual: 1x1 conv of ``F`` to ``M`` channels, averaged over height -> ``(M, T)``
* statistics pooling of the sum -> embedding of length ``2*M``

Everything is batched over a leading sample axis internally.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional, Sequence, Union

import numpy as np

from . import numerics as nx
from .frontend import LogMelFeature
from .numerics import BlstmParams, ConvKernel, LstmDirection, Tensor

DISTANCES = ("squared_euclidean", "euclidean")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters. Defaults are the full-size setting with 512-d embeddings."""

    H: int = 80
    I: int = 4  # noqa: E741
    blstm_hidden: int = 40
    stem_channels: int = 32
    kernel_size: int = 3
    L: int = 128
    M: int = 256
    distance: str = "squared_euclidean"

    def __post_init__(self) -> None:
        for f in fields(self):
            if f.name != "distance" and getattr(self, f.name) < 1:
                raise ValueError(f"{f.name} must be >= 1, got {getattr(self, f.name)}")
        if self.H % self.I:
            raise ValueError(f"H={self.H} is not divisible by I={self.I}")
        if self.M % self.L:
            raise ValueError(f"M={self.M} is not divisible by L={self.L}")
        if self.distance not in DISTANCES:
            raise ValueError(f"distance must be one of {DISTANCES}, got {self.distance!r}")

    @property
    def J(self) -> int:
        return self.H // self.I

    @property
    def E(self) -> int:
        return self.M // self.L

    @property
    def embedding_dim(self) -> int:
        return 2 * self.M

    @property
    def map_height(self) -> int:
        return 2 * self.blstm_hidden

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        kwargs = {k: (str(v) if k == "distance" else int(v)) for k, v in d.items()}
        return cls(**kwargs)


@dataclass
class Embedding:
    values: np.ndarray
    speaker_label: Optional[str] = None


@dataclass
class ModelParams:
    """All trainable tensors. The RCB set is shared by every feature group."""

    blstm: BlstmParams
    stem: ConvKernel
    drc_conv: ConvKernel
    residual: ConvKernel
    drc_dw_weight: Optional[Tensor] = None  # (L*(E-1), k, k), absent when E == 1
    drc_dw_bias: Optional[Tensor] = None

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = [
            ("rcb.blstm.fwd.w_ih", self.blstm.forward.w_ih),
            ("rcb.blstm.fwd.w_hh", self.blstm.forward.w_hh),
            ("rcb.blstm.fwd.b", self.blstm.forward.b),
            ("rcb.blstm.bwd.w_ih", self.blstm.backward.w_ih),
            ("rcb.blstm.bwd.w_hh", self.blstm.backward.w_hh),
            ("rcb.blstm.bwd.b", self.blstm.backward.b),
            ("rcb.stem.w", self.stem.weight),
            ("rcb.stem.b", self.stem.bias),
            ("rcb.drc.conv.w", self.drc_conv.weight),
            ("rcb.drc.conv.b", self.drc_conv.bias),
        ]
        if self.drc_dw_weight is not None:
            out += [("rcb.drc.dw.w", self.drc_dw_weight), ("rcb.drc.dw.b", self.drc_dw_bias)]
        out += [("residual.w", self.residual.weight), ("residual.b", self.residual.bias)]
        return out

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]

    def param_count(self) -> int:
        return sum(t.size for t in self.tensors())

    def zero_grad(self) -> None:
        for t in self.tensors():
            t.grad = None

    def copy(self) -> "ModelParams":
        return params_from_arrays({n: t.data.copy() for n, t in self.named_tensors()})


def expected_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    h, k = config.blstm_hidden, config.kernel_size
    shapes = {}
    for d in ("fwd", "bwd"):
        shapes[f"rcb.blstm.{d}.w_ih"] = (4 * h, config.J)
        shapes[f"rcb.blstm.{d}.w_hh"] = (4 * h, h)
        shapes[f"rcb.blstm.{d}.b"] = (4 * h,)
    shapes["rcb.stem.w"] = (config.stem_channels, 1, k, k)
    shapes["rcb.stem.b"] = (config.stem_channels,)
    shapes["rcb.drc.conv.w"] = (config.L, config.stem_channels, k, k)
    shapes["rcb.drc.conv.b"] = (config.L,)
    if config.E > 1:
        shapes["rcb.drc.dw.w"] = (config.L * (config.E - 1), k, k)
        shapes["rcb.drc.dw.b"] = (config.L * (config.E - 1),)
    shapes["residual.w"] = (config.M, 1, 1, 1)
    shapes["residual.b"] = (config.M,)
    return shapes


def _fan_in(name: str, config: ModelConfig) -> int:
    k2 = config.kernel_size**2
    if name.endswith("w_ih"):
        return config.J
    if ".blstm." in name:
        return config.blstm_hidden
    if name.startswith("rcb.stem"):
        return k2
    if name.startswith("rcb.drc.conv"):
        return config.stem_channels * k2
    if name.startswith("rcb.drc.dw"):
        return k2
    return 1  # residual 1x1 conv on one input channel


def params_from_arrays(arrays: dict[str, np.ndarray], requires_grad: bool = True) -> ModelParams:
    def t(name):
        return Tensor(np.array(arrays[name], dtype=np.float64), requires_grad=requires_grad, name=name)

    blstm = BlstmParams(
        LstmDirection(t("rcb.blstm.fwd.w_ih"), t("rcb.blstm.fwd.w_hh"), t("rcb.blstm.fwd.b")),
        LstmDirection(t("rcb.blstm.bwd.w_ih"), t("rcb.blstm.bwd.w_hh"), t("rcb.blstm.bwd.b")),
    )
    has_dw = "rcb.drc.dw.w" in arrays
    return ModelParams(
        blstm=blstm,
        stem=ConvKernel(t("rcb.stem.w"), t("rcb.stem.b")),
        drc_conv=ConvKernel(t("rcb.drc.conv.w"), t("rcb.drc.conv.b")),
        residual=ConvKernel(t("residual.w"), t("residual.b")),
        drc_dw_weight=t("rcb.drc.dw.w") if has_dw else None,
        drc_dw_bias=t("rcb.drc.dw.b") if has_dw else None,
    )


def check_params(params: ModelParams, config: ModelConfig) -> None:
    got = {n: t.shape for n, t in params.named_tensors()}
    want = expected_shapes(config)
    if got != want:
        diff = {k: (got.get(k), want.get(k)) for k in set(got) | set(want) if got.get(k) != want.get(k)}
        raise ValueError(f"parameters do not match config: {diff}")


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every tensor, in a fixed order."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in expected_shapes(config).items():
        bound = 1.0 / np.sqrt(_fan_in(name, config))
        arrays[name] = rng.uniform(-bound, bound, size=shape)
    return params_from_arrays(arrays)


def zero_params(config: ModelConfig) -> ModelParams:
    return params_from_arrays({n: np.zeros(s) for n, s in expected_shapes(config).items()})


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

FeatureLike = Union[LogMelFeature, np.ndarray, Tensor]


def _as_feature_tensor(F: FeatureLike) -> Tensor:
    if isinstance(F, LogMelFeature):
        return Tensor(F.values)
    return nx.as_tensor(F)


def split_groups(F: FeatureLike, I: int) -> list[Tensor]:  # noqa: E741
    """Split ``(H, T)`` into ``I`` consecutive mel-row blocks of shape ``(J, T)``."""
    x = _as_feature_tensor(F)
    H = x.shape[-2]
    if H % I:
        raise ValueError(f"H={H} is not divisible by I={I}")
    J = H // I
    return [x[..., i * J : (i + 1) * J, :] for i in range(I)]


def drc_forward(Y: Tensor, params: ModelParams, config: ModelConfig) -> Tensor:
    """De-redundancy conv: ``L`` representative maps plus ``L*(E-1)`` depthwise derivatives.

    Output channel ``l*E + e - 1`` holds derivative ``e`` of map ``l``
    (``e = 1..E-1``); channel ``l*E + E - 1`` is the representative map itself.
    """
    L, E = config.L, config.E
    z = nx.relu(nx.conv2d(Y, params.drc_conv.weight, params.drc_conv.bias, "same"))
    if E == 1:
        return z
    squeeze = z.ndim == 3
    zb = z.reshape((1,) + z.shape) if squeeze else z
    B, _, h, w = zb.shape
    src = nx.repeat(zb, E - 1, axis=1)
    d = nx.depthwise_conv2d(src, params.drc_dw_weight, params.drc_dw_bias, "same")
    blocks = nx.concat([d.reshape(B, L, E - 1, h, w), zb.reshape(B, L, 1, h, w)], axis=2)
    out = blocks.reshape(B, L * E, h, w)
    return out.reshape(out.shape[1:]) if squeeze else out


def rcb_forward(subset: Tensor, params: ModelParams, config: ModelConfig) -> Tensor:
    """``(J, T)`` (or ``(B, J, T)``) -> ``(M, 2*hidden, T)`` (or batched)."""
    x = nx.as_tensor(subset)
    squeeze = x.ndim == 2
    xb = x.reshape((1,) + x.shape) if squeeze else x
    if xb.ndim != 3 or xb.shape[1] != config.J:
        raise ValueError(f"RCB expects (J={config.J}, T) input, got {x.shape}")
    B, J, T = xb.shape
    seq = nx.transpose(xb, (0, 2, 1))  # (B, T, J)
    hid = nx.blstm_forward(seq, params.blstm)  # (B, T, 2h)
    img = nx.transpose(hid, (0, 2, 1)).reshape(B, 1, config.map_height, T)
    y = nx.relu(nx.conv2d(img, params.stem.weight, params.stem.bias, "same"))
    out = drc_forward(y, params, config)
    return out.reshape(out.shape[1:]) if squeeze else out


def feature_interaction(maps: Union[Sequence[Tensor], Tensor], axis: int = 0):
    """``G'_i = G_i + mean_i(G_i)``.

    Accepts a list of same-shape tensors (returns a list) or one tensor whose
    ``axis`` indexes the groups (returns a tensor).
    """
    if isinstance(maps, Tensor):
        return nx.add(maps, nx.mean(maps, axis=axis, keepdims=True))
    maps = list(maps)
    shape = maps[0].shape
    if any(m.shape != shape for m in maps):
        raise ValueError(f"feature maps differ in shape: {[m.shape for m in maps]}")
    g_bar = nx.mean_over_first_axis(maps)
    return [nx.add(m, g_bar) for m in maps]


def embed_batch(features: Union[np.ndarray, Tensor], params: ModelParams, config: ModelConfig) -> Tensor:
    """``(B, H, T)`` log-Mel batch -> ``(B, 2*M)`` embeddings (differentiable)."""
    F = nx.as_tensor(features)
    if F.ndim != 3 or F.shape[1] != config.H:
        raise ValueError(f"expected (B, H={config.H}, T) features, got {F.shape}")
    B, H, T = F.shape
    I, J, M, h = config.I, config.J, config.M, config.map_height

    groups = F.reshape(B * I, J, T)  # group i of sample b is row b*I + i
    G = rcb_forward(groups, params, config).reshape(B, I, M, h, T)
    G2 = feature_interaction(G, axis=1)
    # concatenate groups along height, then collapse height
    G_cat = nx.transpose(G2, (0, 2, 1, 3, 4)).reshape(B, M, I * h, T)
    g_vec = nx.mean(G_cat, axis=2)  # (B, M, T)

    F_res = nx.conv2d(F.reshape(B, 1, H, T), params.residual.weight, params.residual.bias, "same")
    f_vec = nx.mean(F_res, axis=2)  # (B, M, T)
    return nx.stats_pool(nx.add(g_vec, f_vec))


def embed(F: FeatureLike, params: ModelParams, config: ModelConfig) -> Embedding:
    x = _as_feature_tensor(F)
    if x.ndim != 2 or x.shape[0] != config.H:
        raise ValueError(f"expected ({config.H}, T) feature, got {x.shape}")
    out = embed_batch(x.data[None], params, config)
    label = F.speaker_label if isinstance(F, LogMelFeature) else None
    return Embedding(out.data[0].copy(), label)


def embed_all(
    features: Sequence[np.ndarray], params: ModelParams, config: ModelConfig, batch_size: int = 10
) -> np.ndarray:
    """Embeddings of many equal-length features without recording a graph."""
    frozen = params_from_arrays({n: t.data for n, t in params.named_tensors()}, requires_grad=False)
    out = []
    for start in range(0, len(features), batch_size):
        chunk = features[start : start + batch_size]
        if len({f.shape for f in chunk}) == 1:
            out.append(embed_batch(np.stack(chunk), frozen, config).data)
        else:
            out.extend(embed_batch(f[None], frozen, config).data for f in chunk)
    if not out:
        return np.zeros((0, config.embedding_dim))
    return np.concatenate(out, axis=0)
