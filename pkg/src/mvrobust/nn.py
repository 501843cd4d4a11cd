"""Parameter containers and the small layers the encoders are built from."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .errors import DimensionError
from .tensor import Tensor, as_tensor, matmul, parameter, sigmoid, tanh


class Module:
    """Collects trainable tensors from attributes, sub-modules and dicts of sub-modules.

    Attribute insertion order defines parameter order, which keeps optimiser
    state and finite-difference reports stable across runs.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, dict):
                for key, item in value.items():
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def get_state(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]

    def set_state(self, arrays: list[np.ndarray]) -> None:
        params = self.parameters()
        if len(arrays) != len(params):
            raise DimensionError("state does not match module parameters")
        for p, a in zip(params, arrays):
            p.data = a.copy()


def glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return parameter(rng.uniform(-limit, limit, size=shape))


class Dense(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.weight = glorot(rng, (d_in, d_out), d_in, d_out)
        self.bias = parameter(np.zeros(d_out))

    @property
    def d_in(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x) -> Tensor:
        x = as_tensor(x)
        if x.shape[-1] != self.d_in:
            raise DimensionError(f"dense layer expects width {self.d_in}, got {x.shape[-1]}")
        return matmul(x, self.weight) + self.bias


class GRUParams(Module):
    """Weights of one GRU layer, stored input-major so batches multiply on the left."""

    def __init__(self, d_in: int, d_hidden: int, rng: np.random.Generator):
        self.w_z = glorot(rng, (d_in, d_hidden), d_in, d_hidden)
        self.u_z = glorot(rng, (d_hidden, d_hidden), d_hidden, d_hidden)
        self.b_z = parameter(np.zeros(d_hidden))
        self.w_r = glorot(rng, (d_in, d_hidden), d_in, d_hidden)
        self.u_r = glorot(rng, (d_hidden, d_hidden), d_hidden, d_hidden)
        self.b_r = parameter(np.zeros(d_hidden))
        self.w_h = glorot(rng, (d_in, d_hidden), d_in, d_hidden)
        self.u_h = glorot(rng, (d_hidden, d_hidden), d_hidden, d_hidden)
        self.b_h = parameter(np.zeros(d_hidden))

    @property
    def d_in(self) -> int:
        return self.w_z.shape[0]

    @property
    def d_hidden(self) -> int:
        return self.u_z.shape[0]


def gru_cell(x_t, h_prev, params: GRUParams) -> Tensor:
    """One GRU step: ``h_t = (1 - z) * h_prev + z * candidate``.

    Works on single vectors or on (B, d) batches.
    """
    x_t, h_prev = as_tensor(x_t), as_tensor(h_prev)
    if x_t.shape[-1] != params.d_in or h_prev.shape[-1] != params.d_hidden:
        raise DimensionError(
            f"gru_cell expects input width {params.d_in} and hidden width {params.d_hidden}, "
            f"got {x_t.shape} and {h_prev.shape}"
        )
    z = sigmoid(matmul(x_t, params.w_z) + matmul(h_prev, params.u_z) + params.b_z)
    r = sigmoid(matmul(x_t, params.w_r) + matmul(h_prev, params.u_r) + params.b_r)
    candidate = tanh(matmul(x_t, params.w_h) + matmul(r * h_prev, params.u_h) + params.b_h)
    return h_prev + z * (candidate - h_prev)
