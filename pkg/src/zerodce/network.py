"""The curve-estimation CNN: plain 3x3 conv stack with mirrored skip concatenations.

For depth ``l = 2m + 1`` the first ``m + 1`` layers form a plain chain and
layer ``m + j`` (j = 1..m) reads ``concat(L[m - j], L[m + j - 1])``. With the
default 7-32-8 configuration this gives

    L1: 3 -> 32      L5: concat(L3, L4) 64 -> 32
    L2: 32 -> 32     L6: concat(L2, L5) 64 -> 32
    L3: 32 -> 32     L7: concat(L1, L6) 64 -> 24, then tanh
    L4: 32 -> 32

All hidden layers use ReLU. Weight init draws kernels from N(0, 0.02^2)
with numpy's PCG64 generator (``np.random.default_rng(seed)``) and sets
biases to zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    DEFAULT_DTYPE,
    ShapeError,
    Tensor,
    as_tensor,
    concat_channels,
    conv2d,
    relu,
    tanh_act,
    zero_grads,
)

SUPPORTED_DEPTHS = (3, 7)
INIT_STD = 0.02


class ConfigError(ValueError):
    """Unsupported architecture or training configuration."""


@dataclass(frozen=True)
class ArchConfig:
    depth: int = 7
    width: int = 32
    n_iter: int = 8

    def __post_init__(self):
        if self.depth not in SUPPORTED_DEPTHS:
            raise ConfigError(f"depth must be one of {SUPPORTED_DEPTHS}, got {self.depth}")
        if self.width < 1:
            raise ConfigError(f"width must be >= 1, got {self.width}")
        if self.n_iter < 1:
            raise ConfigError(f"n_iter must be >= 1, got {self.n_iter}")

    @property
    def triple(self) -> tuple[int, int, int]:
        return (self.depth, self.width, self.n_iter)

    def __str__(self) -> str:
        return "-".join(map(str, self.triple))


@dataclass(frozen=True)
class LayerSpec:
    in_channels: int
    out_channels: int
    # indices of earlier layers whose outputs are concatenated; () means the input image
    sources: tuple[int, ...]


def layer_plan(config: ArchConfig) -> list[LayerSpec]:
    f = config.width
    m = config.depth // 2
    plan = [LayerSpec(3, f, ())]
    for i in range(1, m + 1):
        plan.append(LayerSpec(f, f, (i - 1,)))
    for j in range(1, m + 1):
        out = 3 * config.n_iter if j == m else f
        plan.append(LayerSpec(2 * f, out, (m - j, m + j - 1)))
    return plan


@dataclass
class NetworkWeights:
    """Kernels and biases for every conv layer, as trainable leaf tensors."""

    config: ArchConfig
    kernels: list[Tensor]
    biases: list[Tensor]
    _plan: list[LayerSpec] = field(init=False, repr=False)

    def __post_init__(self):
        self._plan = layer_plan(self.config)
        if len(self.kernels) != len(self._plan) or len(self.biases) != len(self._plan):
            raise ShapeError(f"{self.config} needs {len(self._plan)} layers")
        for i, (spec, k, b) in enumerate(zip(self._plan, self.kernels, self.biases)):
            if k.shape != (spec.out_channels, spec.in_channels, 3, 3):
                raise ShapeError(f"layer {i + 1} kernel {k.shape} does not fit {spec}")
            if b.shape != (spec.out_channels,):
                raise ShapeError(f"layer {i + 1} bias {b.shape} does not fit {spec}")

    @classmethod
    def from_arrays(cls, config: ArchConfig, kernels, biases) -> "NetworkWeights":
        return cls(
            config,
            [Tensor(np.asarray(k), requires_grad=True) for k in kernels],
            [Tensor(np.asarray(b), requires_grad=True) for b in biases],
        )

    @property
    def plan(self) -> list[LayerSpec]:
        return self._plan

    def parameters(self) -> list[Tensor]:
        """Kernel and bias of each layer, interleaved in layer order."""
        out = []
        for k, b in zip(self.kernels, self.biases):
            out.extend((k, b))
        return out

    def arrays(self) -> list[np.ndarray]:
        return [p.data for p in self.parameters()]

    def grads(self) -> list[np.ndarray]:
        return [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.parameters()]

    def zero_grads(self) -> None:
        zero_grads(self.parameters())

    def astype(self, dtype) -> "NetworkWeights":
        return NetworkWeights.from_arrays(
            self.config,
            [k.data.astype(dtype) for k in self.kernels],
            [b.data.astype(dtype) for b in self.biases],
        )


def init_weights(config: ArchConfig | None = None, seed: int = 0, dtype=DEFAULT_DTYPE) -> NetworkWeights:
    config = config or ArchConfig()
    rng = np.random.default_rng(seed)
    kernels, biases = [], []
    for spec in layer_plan(config):
        shape = (spec.out_channels, spec.in_channels, 3, 3)
        kernels.append((rng.standard_normal(shape) * INIT_STD).astype(dtype))
        biases.append(np.zeros(spec.out_channels, dtype=dtype))
    return NetworkWeights.from_arrays(config, kernels, biases)


def forward(weights: NetworkWeights, image) -> Tensor:
    """Estimate the (batch, 3*n_iter, h, w) curve parameter maps for ``image``."""
    image = as_tensor(image)
    if image.data.ndim != 4 or image.shape[1] != 3:
        raise ShapeError(f"expected a 3-channel NCHW image, got {image.shape}")
    outputs: list[Tensor] = []
    last = len(weights.plan) - 1
    for i, spec in enumerate(weights.plan):
        if not spec.sources:
            x = image
        elif len(spec.sources) == 1:
            x = outputs[spec.sources[0]]
        else:
            a, b = spec.sources
            x = concat_channels(outputs[a], outputs[b])
        y = conv2d(x, weights.kernels[i], weights.biases[i])
        outputs.append(tanh_act(y) if i == last else relu(y))
    return outputs[-1]


def param_count(weights: NetworkWeights | ArchConfig) -> int:
    if isinstance(weights, ArchConfig):
        return sum(s.out_channels * s.in_channels * 9 + s.out_channels for s in layer_plan(weights))
    return sum(p.data.size for p in weights.parameters())


def mac_count(config: ArchConfig, height: int, width: int) -> int:
    """Multiply-accumulates for one forward pass, counting each bias add as one."""
    per_pixel = sum(s.in_channels * s.out_channels * 9 + s.out_channels for s in layer_plan(config))
    return height * width * per_pixel
