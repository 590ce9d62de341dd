from plae.autodiff.tensor import Graph, GraphError, ShapeError, Tensor, backward, no_grad, shadow_mode
from plae.autodiff.ops import (
    activation,
    conv2d,
    conv2d_transpose,
    cross_entropy,
    dense,
    flatten,
    maxpool2d,
    mse,
    pad2d,
    relu,
    reshape,
    sigmoid,
)
from plae.autodiff.optim import Adam, adam_step

__all__ = [
    "Adam",
    "Graph",
    "GraphError",
    "ShapeError",
    "Tensor",
    "activation",
    "adam_step",
    "backward",
    "conv2d",
    "conv2d_transpose",
    "cross_entropy",
    "dense",
    "flatten",
    "maxpool2d",
    "mse",
    "no_grad",
    "pad2d",
    "relu",
    "reshape",
    "shadow_mode",
    "sigmoid",
]
