from .gradcheck import finite_diff_check
from .layers import Conv2d, ReLU, ResidualBlock, SEBlock, Sequential, Sigmoid, residual_block
from .ops import (
    adaptive_avg_pool,
    conv2d,
    conv2d_transpose,
    cosine_sim,
    relu,
    resize_bilinear,
    se_block,
    sigmoid,
    softplus,
    ssim,
    whiten,
)
from .params import AdamState, Param, ParamTree, adam_step, kaiming_uniform

__all__ = [
    "AdamState",
    "Conv2d",
    "Param",
    "ParamTree",
    "ReLU",
    "ResidualBlock",
    "SEBlock",
    "Sequential",
    "Sigmoid",
    "adam_step",
    "adaptive_avg_pool",
    "conv2d",
    "conv2d_transpose",
    "cosine_sim",
    "finite_diff_check",
    "kaiming_uniform",
    "relu",
    "residual_block",
    "resize_bilinear",
    "se_block",
    "sigmoid",
    "softplus",
    "ssim",
    "whiten",
]
