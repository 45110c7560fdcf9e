"""Binary weight and optimizer-state files.

Weights file, all fields little-endian::

    b"ZDCE"                      magic
    u32 version                  currently 1
    u32 depth, u32 width, u32 n_iter
    u32 layer_count
    per layer:
        u32 out_c, u32 in_c, u32 kh, u32 kw
        f32[out_c*in_c*kh*kw]    kernel, row-major
        u32 bias_len
        f32[bias_len]            bias

The optimizer-state file shares the layout with magic ``b"ZDCO"``. After
the arch triple it stores ``u64 t`` and ``f64 lr, beta1, beta2, eps``,
then ``u32 layer_count`` and the per-layer blocks of the first moments
followed by the same blocks for the second moments.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .network import ArchConfig, ConfigError, NetworkWeights, layer_plan
from .optim import AdamState

WEIGHTS_MAGIC = b"ZDCE"
OPTIM_MAGIC = b"ZDCO"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """A weights or optimizer file could not be decoded."""


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class ShapeMismatchError(FormatError):
    """Declared shapes disagree with the data present or the architecture."""


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ShapeMismatchError(
                f"file truncated: needed {n} bytes at offset {self.pos}, only {len(self.buf) - self.pos} left"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32)

    def finish(self) -> None:
        if self.pos != len(self.buf):
            raise ShapeMismatchError(f"{len(self.buf) - self.pos} unexpected trailing bytes")


def _pack_layers(kernels, biases) -> bytes:
    parts = [struct.pack("<I", len(kernels))]
    for k, b in zip(kernels, biases):
        if k.ndim != 4:
            raise ShapeMismatchError(f"kernel must be 4-D, got shape {k.shape}")
        parts.append(struct.pack("<4I", *k.shape))
        parts.append(np.ascontiguousarray(k, dtype="<f4").tobytes())
        parts.append(struct.pack("<I", b.size))
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    return b"".join(parts)


def _read_layers(r: _Reader, config: ArchConfig):
    (count,) = r.unpack("I")
    plan = layer_plan(config)
    if count != len(plan):
        raise ShapeMismatchError(f"arch {config} has {len(plan)} layers but file declares {count}")
    kernels, biases = [], []
    for i, spec in enumerate(plan):
        dims = r.unpack("4I")
        expect = (spec.out_channels, spec.in_channels, 3, 3)
        if dims != expect:
            raise ShapeMismatchError(f"layer {i + 1}: file declares kernel {dims}, arch needs {expect}")
        kernels.append(r.floats(int(np.prod(dims))).reshape(dims))
        (blen,) = r.unpack("I")
        if blen != spec.out_channels:
            raise ShapeMismatchError(f"layer {i + 1}: bias length {blen}, arch needs {spec.out_channels}")
        biases.append(r.floats(blen))
    return kernels, biases


def _read_header(r: _Reader, magic: bytes) -> ArchConfig:
    got = r.take(4)
    if got != magic:
        raise BadMagicError(f"expected magic {magic!r}, found {got!r}")
    (version,) = r.unpack("I")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"format version {version} is not supported (expected {FORMAT_VERSION})")
    depth, width, n_iter = r.unpack("3I")
    try:
        return ArchConfig(depth, width, n_iter)
    except ConfigError as exc:
        raise ShapeMismatchError(f"invalid architecture in file: {exc}") from exc


def _header(magic: bytes, config: ArchConfig) -> bytes:
    return magic + struct.pack("<4I", FORMAT_VERSION, *config.triple)


def weights_to_bytes(weights: NetworkWeights) -> bytes:
    return _header(WEIGHTS_MAGIC, weights.config) + _pack_layers(
        [k.data for k in weights.kernels], [b.data for b in weights.biases]
    )


def weights_from_bytes(buf: bytes) -> NetworkWeights:
    r = _Reader(buf)
    config = _read_header(r, WEIGHTS_MAGIC)
    kernels, biases = _read_layers(r, config)
    r.finish()
    return NetworkWeights.from_arrays(config, kernels, biases)


def save_weights(weights: NetworkWeights, path) -> None:
    Path(path).write_bytes(weights_to_bytes(weights))


def load_weights(path) -> NetworkWeights:
    return weights_from_bytes(Path(path).read_bytes())


def optimizer_to_bytes(state: AdamState, config: ArchConfig) -> bytes:
    head = _header(OPTIM_MAGIC, config) + struct.pack(
        "<Q4d", state.t, state.lr, state.beta1, state.beta2, state.eps
    )
    return head + _pack_layers(state.m[0::2], state.m[1::2]) + _pack_layers(state.v[0::2], state.v[1::2])


def optimizer_from_bytes(buf: bytes, config: ArchConfig | None = None) -> AdamState:
    r = _Reader(buf)
    file_config = _read_header(r, OPTIM_MAGIC)
    if config is not None and file_config != config:
        raise ShapeMismatchError(f"optimizer state is for arch {file_config}, expected {config}")
    t, lr, beta1, beta2, eps = r.unpack("Q4d")
    mk, mb = _read_layers(r, file_config)
    vk, vb = _read_layers(r, file_config)
    r.finish()
    interleave = lambda ks, bs: [a for pair in zip(ks, bs) for a in pair]
    return AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, t=t, m=interleave(mk, mb), v=interleave(vk, vb))


def save_optimizer(state: AdamState, config: ArchConfig, path) -> None:
    Path(path).write_bytes(optimizer_to_bytes(state, config))


def load_optimizer(path, config: ArchConfig | None = None) -> AdamState:
    return optimizer_from_bytes(Path(path).read_bytes(), config)
