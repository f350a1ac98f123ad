"""Minimal layer containers on top of :mod:`neuroswap.tensor`."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import BatchNormState, Tensor


class Module:
    """Holds parameters and child modules as attributes.

    Parameter order (used for checkpoints and optimizer state) follows
    attribute insertion order, so it is stable across runs.
    """

    training = True

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = []
        for name, val in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(val, Tensor) and val.requires_grad:
                out.append((key, val))
            elif isinstance(val, BatchNormState):
                out.append((f"{key}.gamma", val.gamma))
                out.append((f"{key}.beta", val.beta))
            elif isinstance(val, Module):
                out.extend(val.named_parameters(f"{key}."))
            elif isinstance(val, list) and val and isinstance(val[0], Module):
                for i, m in enumerate(val):
                    out.extend(m.named_parameters(f"{key}.{i}."))
        return out

    def named_buffers(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
        out = []
        for name, val in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(val, BatchNormState):
                out.append((f"{key}.running_mean", val.running_mean))
                out.append((f"{key}.running_var", val.running_var))
            elif isinstance(val, Module):
                out.extend(val.named_buffers(f"{key}."))
            elif isinstance(val, list) and val and isinstance(val[0], Module):
                for i, m in enumerate(val):
                    out.extend(m.named_buffers(f"{key}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def children(self) -> list["Module"]:
        kids = []
        for val in vars(self).values():
            if isinstance(val, Module):
                kids.append(val)
            elif isinstance(val, list) and val and isinstance(val[0], Module):
                kids.extend(val)
        return kids

    def train(self, flag: bool = True) -> "Module":
        self.training = flag
        for c in self.children():
            c.train(flag)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    @property
    def bn_mode(self) -> str:
        return "train" if self.training else "eval"

    def __call__(self, *args, **kw):
        return self.forward(*args, **kw)


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def _kaiming(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float32, bias: bool = True):
        self.weight = _kaiming(rng, (n_in, n_out), n_in, dtype)
        self.bias = _uniform(rng, (n_out,), n_in, dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class ConvBlock(Module):
    """conv -> batch norm -> ReLU, optionally followed by max pooling."""

    def __init__(self, c_in: int, c_out: int, ksize: tuple[int, ...], rng: np.random.Generator,
                 dtype=np.float32, pool: int = 0):
        fan_in = c_in * int(np.prod(ksize))
        self.kernels = _kaiming(rng, (c_out, c_in) + tuple(ksize), fan_in, dtype)
        self.bn = BatchNormState(c_out, dtype=dtype)
        self.padding = tuple(k // 2 for k in ksize)
        self.pool = pool

    def forward(self, x: Tensor) -> Tensor:
        # bias omitted: batch norm's shift makes it redundant
        y = T.conv(x, self.kernels, None, stride=1, padding=self.padding)
        y = T.relu(T.batch_norm(y, self.bn, self.bn_mode))
        if self.pool:
            y = T.pool_max(y, self.pool, self.pool)
        return y


class DenseBlock(Module):
    """linear -> batch norm -> ReLU."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float32):
        self.fc = Linear(n_in, n_out, rng, dtype, bias=False)
        self.bn = BatchNormState(n_out, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return T.relu(T.batch_norm(self.fc(x), self.bn, self.bn_mode))


class MLP(Module):
    """Two linear layers with a ReLU between them (no normalisation)."""

    def __init__(self, n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator, dtype=np.float32):
        self.fc1 = Linear(n_in, n_hidden, rng, dtype)
        self.fc2 = Linear(n_hidden, n_out, rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(x)))
