from .gradcheck import check_gradients, numerical_gradient
from .ops import (
    add,
    avg_pool2d,
    batch_norm,
    conv2d,
    div,
    exp,
    global_avg_pool,
    linear,
    log_softmax,
    matmul,
    max_pool2d,
    mean,
    mul,
    neg,
    relu,
    reshape,
    softmax_with_temperature,
    sub,
    sum,
)
from .tensor import Graph, Tensor, as_tensor, backward, grad

__all__ = [
    "Graph",
    "Tensor",
    "add",
    "as_tensor",
    "avg_pool2d",
    "backward",
    "batch_norm",
    "check_gradients",
    "conv2d",
    "div",
    "exp",
    "global_avg_pool",
    "grad",
    "linear",
    "log_softmax",
    "matmul",
    "max_pool2d",
    "mean",
    "mul",
    "neg",
    "numerical_gradient",
    "relu",
    "reshape",
    "softmax_with_temperature",
    "sub",
    "sum",
]
