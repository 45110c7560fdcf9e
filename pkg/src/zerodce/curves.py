"""Quadratic light-enhancement curves applied pixel-wise and iteratively.

Parameter maps are laid out iteration-major: channels ``3k, 3k+1, 3k+2``
hold the R, G, B maps used by iteration ``k`` (zero-based).
"""

from __future__ import annotations

import numpy as np

from .numerics import ShapeError, Tensor, as_tensor, curve_step, slice_channels


def le_curve_step(image: Tensor, maps: Tensor) -> Tensor:
    """Apply ``I + A*I*(1-I)`` elementwise; ``image`` and ``maps`` share a shape."""
    return curve_step(as_tensor(image), as_tensor(maps))


def iteration_maps(maps: Tensor, k: int) -> np.ndarray:
    """The (batch, 3, h, w) parameter maps used by iteration ``k``."""
    return maps.data[:, 3 * k : 3 * k + 3]


def apply_curves(image: Tensor, maps: Tensor, n_iter: int | None = None) -> Tensor:
    """Enhance ``image`` by ``n_iter`` curve steps driven by stacked parameter maps.

    ``n_iter`` defaults to ``maps.channels // 3``; when given it must agree.
    No clamping happens here: for ``I`` in [0,1] and ``A`` in [-1,1] the
    output already stays in [0,1].
    """
    image, maps = as_tensor(image), as_tensor(maps)
    if image.data.ndim != 4 or image.shape[1] != 3:
        raise ShapeError(f"expected a 3-channel NCHW image, got {image.shape}")
    if maps.data.ndim != 4:
        raise ShapeError(f"parameter maps must be 4-D, got {maps.shape}")
    channels = maps.shape[1]
    if n_iter is None:
        if channels % 3 or channels == 0:
            raise ShapeError(f"{channels} map channels is not a multiple of 3")
        n_iter = channels // 3
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    if channels != 3 * n_iter:
        raise ShapeError(f"{n_iter} iterations need {3 * n_iter} map channels, got {channels}")
    if (maps.shape[0], maps.shape[2], maps.shape[3]) != (image.shape[0], image.shape[2], image.shape[3]):
        raise ShapeError(f"maps {maps.shape} do not match image {image.shape}")

    out = image
    for k in range(n_iter):
        a_k = maps if n_iter == 1 else slice_channels(maps, 3 * k, 3 * k + 3)
        out = curve_step(out, a_k)
    return out
