"""Dense float64 tensors with reverse-mode differentiation.

The op set is exactly what the dataset vectorizer and the small MLP
operators need: matrix products, broadcast add/multiply, row softmax,
layer normalization, GELU, softplus, exp, slicing/concatenation and full
reductions. Every op records its inputs and a vector-Jacobian closure on
the value it returns; `backprop` walks that implicit graph.

All arithmetic is float64. Tensors are treated as immutable values once
created; only the optimizer mutates parameter `.data` in place, between
graph constructions.
"""

import numpy as np
from scipy.special import erf

from ..errors import ContractError, DimensionError

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    """A node in the computation graph.

    `parents` holds (input tensor, vjp) pairs, where vjp maps the
    gradient at this node to the gradient contribution for that input.
    Leaf tensors have no parents.
    """

    __slots__ = ("data", "requires_grad", "parents", "op")

    def __init__(self, data, requires_grad=False, parents=(), op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.parents = parents
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.data.shape})"


def tensor(data) -> Tensor:
    """Constant (non-differentiable) tensor."""
    return Tensor(data)


def parameter(data) -> Tensor:
    """Leaf tensor that accumulates gradients."""
    return Tensor(data, requires_grad=True, op="param")


def _track(*inputs) -> bool:
    return any(t.requires_grad for t in inputs)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _binary(a, b, out, vjp_a, vjp_b, op) -> Tensor:
    parents = []
    if a.requires_grad:
        parents.append((a, vjp_a))
    if b.requires_grad:
        parents.append((b, vjp_b))
    return Tensor(out, requires_grad=bool(parents), parents=tuple(parents), op=op)


def _unary(a, out, vjp, op) -> Tensor:
    if a.requires_grad:
        return Tensor(out, requires_grad=True, parents=((a, vjp),), op=op)
    return Tensor(out, op=op)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum with numpy broadcasting (e.g. row + bias)."""
    out = a.data + b.data
    return _binary(
        a, b, out,
        lambda g: _unbroadcast(g, a.data.shape),
        lambda g: _unbroadcast(g, b.data.shape),
        "add",
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data
    return _binary(
        a, b, out,
        lambda g: _unbroadcast(g, a.data.shape),
        lambda g: _unbroadcast(-g, b.data.shape),
        "sub",
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (broadcasting) product."""
    out = a.data * b.data
    return _binary(
        a, b, out,
        lambda g: _unbroadcast(g * b.data, a.data.shape),
        lambda g: _unbroadcast(g * a.data, b.data.shape),
        "mul",
    )


def scale(a: Tensor, s: float) -> Tensor:
    """Multiply by a python float constant."""
    s = float(s)
    return _unary(a, a.data * s, lambda g: g * s, "scale")


def add_const(a: Tensor, c: float) -> Tensor:
    return _unary(a, a.data + float(c), lambda g: g, "add_const")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(
            f"matmul expects 2-D operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.data.shape} vs {b.data.shape}"
        )
    out = a.data @ b.data
    return _binary(
        a, b, out,
        lambda g: g @ b.data.T,
        lambda g: a.data.T @ g,
        "matmul",
    )


def transpose(a: Tensor) -> Tensor:
    return _unary(a, a.data.T, lambda g: g.T, "transpose")


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    out = a.data[:, start:stop]

    def vjp(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return full

    return _unary(a, out, vjp, "slice_cols")


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    out = a.data[start:stop, :]

    def vjp(g):
        full = np.zeros_like(a.data)
        full[start:stop, :] = g
        return full

    return _unary(a, out, vjp, "slice_rows")


def concat_cols(parts) -> Tensor:
    parts = list(parts)
    out = np.concatenate([p.data for p in parts], axis=1)
    parents = []
    offset = 0
    for p in parts:
        width = p.data.shape[1]
        if p.requires_grad:
            lo, hi = offset, offset + width

            def vjp(g, lo=lo, hi=hi):
                return g[:, lo:hi]

            parents.append((p, vjp))
        offset += width
    return Tensor(out, requires_grad=bool(parents), parents=tuple(parents), op="concat_cols")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _unary(a, out, lambda g: g * out, "exp")


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    x = a.data
    phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * phi
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
    return _unary(a, out, lambda g: g * (phi + x * pdf), "gelu")


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), computed stably; derivative is the sigmoid."""
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    sig = 1.0 / (1.0 + np.exp(-x))
    return _unary(a, out, lambda g: g * sig, "softplus")


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction; rows sum to 1."""
    if a.data.ndim != 2:
        raise DimensionError(f"softmax_rows expects a 2-D tensor, got {a.data.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        return (g - dot) * out

    return _unary(a, out, vjp, "softmax_rows")


def layer_norm_rows(x: Tensor, gain: Tensor, offset: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row to zero mean / unit variance, then scale and shift."""
    if eps <= 0.0:
        raise ContractError("layer_norm eps must be > 0")
    if x.data.ndim != 2:
        raise DimensionError(f"layer_norm expects a 2-D input, got {x.data.shape}")
    d = x.data.shape[1]
    if gain.data.shape != (d,) or offset.data.shape != (d,):
        raise DimensionError(
            f"layer_norm gain/offset must have shape ({d},), got "
            f"{gain.data.shape} and {offset.data.shape}"
        )
    mean = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv_std
    out = xhat * gain.data + offset.data

    def vjp_x(g):
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
        return inv_std * (dxhat - m1 - xhat * m2)

    parents = []
    if x.requires_grad:
        parents.append((x, vjp_x))
    if gain.requires_grad:
        parents.append((gain, lambda g: (g * xhat).sum(axis=0)))
    if offset.requires_grad:
        parents.append((offset, lambda g: g.sum(axis=0)))
    return Tensor(out, requires_grad=bool(parents), parents=tuple(parents), op="layer_norm")


def sum_all(a: Tensor) -> Tensor:
    out = a.data.sum()
    return _unary(a, out, lambda g: np.full_like(a.data, float(g)), "sum_all")


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.data.size)


def square(a: Tensor) -> Tensor:
    return _unary(a, a.data * a.data, lambda g: g * 2.0 * a.data, "square")


def backprop(loss: Tensor) -> dict:
    """Reverse-mode sweep from a scalar loss.

    Returns a map id(tensor) -> gradient array for every tensor on a
    differentiable path to the loss.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")

    order = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None:
            continue
        for parent, vjp in node.parents:
            if not parent.requires_grad:
                continue
            contribution = vjp(g)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + contribution
            else:
                grads[key] = np.asarray(contribution, dtype=np.float64)
    return grads
