"""Minimal differentiable tensor kernel used by the embedding network."""
from .conv import ConvKernel, conv2d, depthwise_conv2d, same_padding
from .gradcheck import grad_check
from .ops import (
    add,
    concat,
    exp,
    getitem,
    log,
    log_softmax,
    mean,
    mean_over_first_axis,
    mul,
    relu,
    repeat,
    reshape,
    scale,
    softmax,
    sqrt,
    square,
    squared_euclidean,
    stack,
    stats_pool,
    sub,
    sum_,
    transpose,
)
from .recurrent import BlstmParams, LstmDirection, blstm_forward
from .tensor import (
    GraphError,
    MacCounter,
    NonFiniteError,
    ShapeError,
    Tensor,
    as_tensor,
    backward,
    count_macs,
)

__all__ = [
    "BlstmParams",
    "ConvKernel",
    "GraphError",
    "LstmDirection",
    "MacCounter",
    "NonFiniteError",
    "ShapeError",
    "Tensor",
    "add",
    "as_tensor",
    "backward",
    "blstm_forward",
    "concat",
    "conv2d",
    "count_macs",
    "depthwise_conv2d",
    "exp",
    "getitem",
    "grad_check",
    "log",
    "log_softmax",
    "mean",
    "mean_over_first_axis",
    "mul",
    "relu",
    "repeat",
    "reshape",
    "same_padding",
    "scale",
    "softmax",
    "sqrt",
    "square",
    "squared_euclidean",
    "stack",
    "stats_pool",
    "sub",
    "sum_",
    "transpose",
]
