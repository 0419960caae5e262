"""Minimal dense-tensor substrate with reverse-mode differentiation.

Provides exactly the layers the vectorizer and the small MLP operators
need, plus Adam and a finite-difference gradient checker.
"""

from .checkpoint import load_params, save_params
from .layers import (
    affine,
    declare_attention,
    declare_block,
    declare_ffn,
    feed_forward,
    layer_norm,
    multi_head_self_attention,
    pre_ln_block,
)
from .optim import AdamState, adam_step
from .params import GradTape, ParamSet, backward, gradient_check
from .autograd import Tensor, backprop, parameter, tensor

__all__ = [
    "AdamState",
    "GradTape",
    "ParamSet",
    "Tensor",
    "adam_step",
    "affine",
    "backprop",
    "backward",
    "declare_attention",
    "declare_block",
    "declare_ffn",
    "feed_forward",
    "gradient_check",
    "layer_norm",
    "load_params",
    "multi_head_self_attention",
    "parameter",
    "pre_ln_block",
    "save_params",
    "tensor",
]
