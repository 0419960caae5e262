"""Transformer building blocks on top of the tensor engine.

Parameter naming convention: a block at prefix `p` owns
    p.ln1.gain  p.ln1.offset  p.ln2.gain  p.ln2.offset
    p.attn.{wq,bq,wk,bk,wv,bv,wo,bo}
    p.ffn.{w1,b1,w2,b2}
declared by `declare_block`.
"""

import numpy as np

from ..errors import ContractError, DimensionError
from . import autograd as T
from .params import ParamSet
from .autograd import Tensor


def affine(x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """x @ w + bias for 2-D x."""
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise DimensionError(f"affine expects 2-D x and w, got {x.data.shape}, {w.data.shape}")
    if x.data.shape[1] != w.data.shape[0]:
        raise DimensionError(
            f"affine inner dimensions disagree: x {x.data.shape} vs w {w.data.shape}"
        )
    if bias.data.shape != (w.data.shape[1],):
        raise DimensionError(
            f"affine bias must have shape ({w.data.shape[1]},), got {bias.data.shape}"
        )
    return T.add(T.matmul(x, w), bias)


def layer_norm(x: Tensor, gain: Tensor, offset: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise layer normalization."""
    return T.layer_norm_rows(x, gain, offset, eps=eps)


def declare_attention(params: ParamSet, prefix: str, d: int) -> None:
    # No key bias: a uniform shift of every key cancels inside the row
    # softmax, so such a parameter could never receive gradient.
    for name in ("wq", "wk", "wv", "wo"):
        params.add(f"{prefix}.{name}", (d, d))
    for name in ("bq", "bv", "bo"):
        params.add(f"{prefix}.{name}", (d,), init="zeros")


def declare_ffn(params: ParamSet, prefix: str, d: int, hidden: int) -> None:
    params.add(f"{prefix}.w1", (d, hidden))
    params.add(f"{prefix}.b1", (hidden,), init="zeros")
    params.add(f"{prefix}.w2", (hidden, d))
    params.add(f"{prefix}.b2", (d,), init="zeros")


def declare_block(params: ParamSet, prefix: str, d: int, ffn_mult: int = 4) -> None:
    """Declare one pre-LN block's parameters under `prefix`."""
    for ln in ("ln1", "ln2"):
        params.add(f"{prefix}.{ln}.gain", (d,), init="ones")
        params.add(f"{prefix}.{ln}.offset", (d,), init="zeros")
    declare_attention(params, f"{prefix}.attn", d)
    declare_ffn(params, f"{prefix}.ffn", d, ffn_mult * d)


def multi_head_self_attention(x: Tensor, params, heads: int, prefix: str = "attn",
                              return_weights: bool = False):
    """Scaled dot-product self-attention with output projection.

    Output shape equals input shape; each head's attention rows sum to 1.
    """
    if x.data.ndim != 2:
        raise DimensionError(f"attention expects a 2-D input, got {x.data.shape}")
    d = x.data.shape[1]
    if heads < 1 or d % heads != 0:
        raise ContractError(f"model width {d} is not divisible by {heads} heads")
    d_head = d // heads

    q = affine(x, params[f"{prefix}.wq"], params[f"{prefix}.bq"])
    k = T.matmul(x, params[f"{prefix}.wk"])
    v = affine(x, params[f"{prefix}.wv"], params[f"{prefix}.bv"])

    head_outputs = []
    head_weights = []
    inv_scale = 1.0 / np.sqrt(d_head)
    for h in range(heads):
        lo, hi = h * d_head, (h + 1) * d_head
        qh = T.slice_cols(q, lo, hi)
        kh = T.slice_cols(k, lo, hi)
        vh = T.slice_cols(v, lo, hi)
        logits = T.scale(T.matmul(qh, T.transpose(kh)), inv_scale)
        weights = T.softmax_rows(logits)
        head_weights.append(weights)
        head_outputs.append(T.matmul(weights, vh))

    merged = T.concat_cols(head_outputs) if heads > 1 else head_outputs[0]
    out = affine(merged, params[f"{prefix}.wo"], params[f"{prefix}.bo"])
    if return_weights:
        return out, [w.data for w in head_weights]
    return out


def feed_forward(x: Tensor, params, prefix: str = "ffn") -> Tensor:
    """affine -> GELU -> affine."""
    hidden = T.gelu(affine(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"]))
    return affine(hidden, params[f"{prefix}.w2"], params[f"{prefix}.b2"])


def pre_ln_block(x: Tensor, params, heads: int, prefix: str = "block",
                 eps: float = 1e-5) -> Tensor:
    """y = x + attn(LN(x)); out = y + ffn(LN(y))."""
    normed = layer_norm(x, params[f"{prefix}.ln1.gain"], params[f"{prefix}.ln1.offset"], eps)
    y = T.add(x, multi_head_self_attention(normed, params, heads, prefix=f"{prefix}.attn"))
    normed2 = layer_norm(y, params[f"{prefix}.ln2.gain"], params[f"{prefix}.ln2.offset"], eps)
    return T.add(y, feed_forward(normed2, params, prefix=f"{prefix}.ffn"))
