"""Named parameter sets, gradient tapes, and a finite-difference checker."""

import numpy as np

from ..errors import ContractError, DimensionError, EvaluationError
from ..seeding import derive_seed
from .autograd import Tensor, backprop, parameter


class ParamSet:
    """Named float64 parameter tensors initialized deterministically.

    Each parameter is seeded by (set seed, parameter name), so identical
    seed + shapes give bit-identical values regardless of declaration
    order, and adding a parameter never perturbs the others.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, shape, init: str = "xavier") -> Tensor:
        """Declare a parameter. init: xavier | zeros | ones."""
        if name in self._params:
            raise ContractError(f"duplicate parameter name: {name!r}")
        shape = tuple(int(s) for s in shape)
        if init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        elif init == "xavier":
            if len(shape) == 1:
                fan_in = fan_out = shape[0]
            else:
                fan_in, fan_out = shape[0], shape[1]
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            rng = np.random.default_rng(derive_seed(self.seed, "init", name))
            data = rng.uniform(-limit, limit, size=shape)
        else:
            raise ContractError(f"unknown init kind: {init!r}")
        t = parameter(data)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self._params.items()}

    def load_arrays(self, arrays: dict) -> None:
        """Overwrite parameter values in place (shapes must match)."""
        for name, t in self._params.items():
            if name not in arrays:
                raise ContractError(f"missing parameter in checkpoint: {name!r}")
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != t.data.shape:
                raise DimensionError(
                    f"parameter {name!r}: expected shape {t.data.shape}, got {value.shape}"
                )
            t.data[...] = value


class GradTape:
    """Per-parameter gradient accumulators over one or more backward passes."""

    def __init__(self, params):
        self._params = dict(params.items())
        self.grads = {name: np.zeros_like(t.data) for name, t in self._params.items()}

    def reset(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0


def backward(tape: GradTape, loss: Tensor) -> dict:
    """Accumulate d(loss)/d(param) into the tape and return the gradient map.

    Parameters that do not participate in the loss keep exactly-zero
    gradients; repeated calls without reset() accumulate.
    """
    local = backprop(loss)
    for name, p in tape._params.items():
        g = local.get(id(p))
        if g is not None:
            tape.grads[name] += g
    return tape.grads


def gradient_check(f, params, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` maps the ParamSet to a scalar Tensor and is re-evaluated under
    elementwise perturbations; the relative error per component is
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    if step <= 0.0:
        raise ContractError("gradient_check step must be > 0")
    tape = GradTape(params)
    loss = f(params)
    if not np.isfinite(loss.data).all():
        raise EvaluationError("function evaluated to a non-finite value")
    grads = backward(tape, loss)

    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        analytic = grads[name].reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            f_plus = f(params).item()
            flat[i] = original - step
            f_minus = f(params).item()
            flat[i] = original
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise EvaluationError("function evaluated to a non-finite value")
            numeric = (f_plus - f_minus) / (2.0 * step)
            err = abs(analytic[i] - numeric) / max(abs(analytic[i]), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
