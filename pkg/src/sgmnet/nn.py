"""Parameter storage, building blocks and the momentum SGD optimizer."""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from .tensor import (
    ShapeError,
    Tensor4,
    concat_channels,
    conv2d,
    global_avg_pool,
    mul,
    relu,
    sigmoid,
    upsample,
)


class ParamStore:
    """Ordered ``name -> (tensor, momentum buffer)`` map with seeded lazy init.

    Each parameter draws from its own generator seeded by ``(seed, crc32(name))``,
    so the values never depend on creation order.
    """

    def __init__(self, seed: int = 0, dtype=np.float64):
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self._tensors: dict[str, Tensor4] = {}
        self._momentum: dict[str, np.ndarray] = {}

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __getitem__(self, name: str) -> Tensor4:
        return self._tensors[name]

    def __len__(self) -> int:
        return len(self._tensors)

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def momentum(self, name: str) -> np.ndarray:
        return self._momentum[name]

    def add(self, name: str, value: np.ndarray, momentum: np.ndarray | None = None) -> Tensor4:
        if name in self._tensors:
            raise KeyError(f"parameter {name!r} already exists")
        value = np.ascontiguousarray(value, dtype=self.dtype)
        if momentum is None:
            momentum = np.zeros_like(value)
        elif momentum.shape != value.shape:
            raise ShapeError(f"momentum for {name!r} has shape {momentum.shape}, expected {value.shape}")
        t = Tensor4(value, requires_grad=True, name=name)
        self._tensors[name] = t
        self._momentum[name] = np.ascontiguousarray(momentum, dtype=self.dtype)
        return t

    def get(self, name: str, shape: tuple, init: str = "he") -> Tensor4:
        """Return parameter ``name``, creating it on first use."""
        shape = tuple(int(s) for s in shape)
        t = self._tensors.get(name)
        if t is not None:
            if t.shape != shape:
                raise ShapeError(f"parameter {name!r} has shape {t.shape}, requested {shape}")
            return t
        return self.add(name, self._initial(name, shape, init))

    def _initial(self, name: str, shape: tuple, init: str) -> np.ndarray:
        if init == "zeros":
            return np.zeros(shape, dtype=self.dtype)
        if init != "he":
            raise ValueError(f"unknown init {init!r}")
        rng = np.random.default_rng([self.seed, zlib.crc32(name.encode())])
        fan_in = int(np.prod(shape[1:]))
        bound = np.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(self.dtype)

    def named_grads(self, grads: Mapping[Tensor4, np.ndarray]) -> dict[str, np.ndarray]:
        """Map tape gradients to parameter names; unused parameters get zeros."""
        return {
            name: grads[t] if t in grads else np.zeros_like(t.data) for name, t in self._tensors.items()
        }

    def state_equal(self, other: "ParamStore") -> bool:
        if self.names() != other.names() or self.dtype != other.dtype or self.seed != other.seed:
            return False
        return all(
            np.array_equal(self[n].data, other[n].data)
            and np.array_equal(self._momentum[n], other._momentum[n])
            for n in self.names()
        )


@dataclass
class SgdConfig:
    lr: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 4.0e-5
    decay_factor: float = 0.1
    decay_every: int = 50

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.decay_every < 1:
            raise ValueError(f"decay_every must be >= 1, got {self.decay_every}")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.decay_factor ** (epoch // self.decay_every)


def sgd_step(params: ParamStore, grads: Mapping[str, np.ndarray], cfg: SgdConfig, epoch: int) -> None:
    """One momentum-SGD update with L2 weight decay folded into the gradient."""
    for name in params.names():
        if name not in grads:
            raise KeyError(f"no gradient for parameter {name!r}")
    dt = params.dtype.type
    lr, mom, wd = dt(cfg.lr_at(epoch)), dt(cfg.momentum), dt(cfg.weight_decay)
    for name, t in params.items():
        g = np.asarray(grads[name], dtype=params.dtype)
        if g.shape != t.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, expected {t.shape}")
        v = params._momentum[name]
        v *= mom
        v += g
        v += wd * t.data
        t.data -= lr * v


# --------------------------------------------------------------------------
# blocks

def conv(x: Tensor4, params: ParamStore, name: str, out_c: int, k: int = 3, stride: int = 1) -> Tensor4:
    """Convolution with bias and "same" zero padding, no activation."""
    w = params.get(f"{name}.weight", (out_c, x.shape[1], k, k))
    b = params.get(f"{name}.bias", (1, out_c, 1, 1), init="zeros")
    return conv2d(x, w, b, stride=stride, padding=k // 2)


def conv_block(x: Tensor4, params: ParamStore, name: str, out_c: int, k: int = 3, stride: int = 1) -> Tensor4:
    return relu(conv(x, params, name, out_c, k, stride))


def se_block(x: Tensor4, params: ParamStore, name: str, reduction: int = 4) -> Tensor4:
    """Squeeze-and-excitation: rescale each channel by a learned gate in (0, 1)."""
    c = x.shape[1]
    if c % reduction:
        raise ShapeError(f"se_block: {c} channels not divisible by reduction {reduction}")
    w1 = params.get(f"{name}.fc1", (c // reduction, c, 1, 1))
    w2 = params.get(f"{name}.fc2", (c, c // reduction, 1, 1))
    gate = sigmoid(conv2d(relu(conv2d(global_avg_pool(x), w1)), w2))
    return mul(x, gate)


def down_stage(x: Tensor4, params: ParamStore, name: str, out_c: int) -> Tensor4:
    return conv_block(x, params, name, out_c, k=3, stride=2)


def up_stage(
    x: Tensor4, params: ParamStore, name: str, out_c: int, skip: Tensor4 | None = None
) -> Tensor4:
    """Bilinear x2 upsample, optional skip concat, then a 3x3 conv block."""
    x = upsample(x, 2, "bilinear")
    if skip is not None:
        if skip.shape[2:] != x.shape[2:]:
            raise ShapeError(f"up_stage {name!r}: skip shape {skip.shape} vs upsampled {x.shape}")
        x = concat_channels([x, skip])
    return conv_block(x, params, name, out_c)
