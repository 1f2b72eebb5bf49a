"""Parameter containers and initialisers."""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from .tensor import Tensor


def param(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float = 1.0) -> Tensor:
    limit = gain * np.sqrt(6.0 / (fan_in + fan_out))
    return param(rng.uniform(-limit, limit, size=(fan_in, fan_out)))


def zeros(*shape) -> Tensor:
    return param(np.zeros(shape))


def ones(*shape) -> Tensor:
    return param(np.ones(shape))


class Module:
    """Holds named parameter tensors and child modules.

    Attributes that are :class:`Tensor` with ``requires_grad`` or
    :class:`Module` instances are discovered in assignment order, so
    ``named_parameters`` is stable across runs.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
            elif isinstance(value, dict):
                for sub, item in value.items():
                    if isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{sub}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.data.copy()) for n, p in self.named_parameters())

    def load_state_dict(self, state, strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            if missing:
                raise KeyError(f"missing parameters: {missing}")
        for name, value in state.items():
            if name not in own:
                if strict:
                    raise KeyError(f"unexpected parameter {name!r}")
                continue
            value = np.asarray(value, dtype=np.float64)
            if value.shape != own[name].shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: checkpoint {value.shape} vs model {own[name].shape}")
            own[name].data = value.copy()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, bias: bool = True,
                 gain: float = 1.0):
        self.weight = glorot(rng, d_in, d_out, gain)
        self.bias = zeros(d_out) if bias else None

    def __call__(self, x) -> Tensor:
        out = x @ self.weight
        return out if self.bias is None else out + self.bias


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = ones(dim)
        self.bias = zeros(dim)

    def __call__(self, x) -> Tensor:
        from .functional import layer_norm
        return layer_norm(x, self.gain, self.bias)
