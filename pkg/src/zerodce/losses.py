"""Non-reference losses that drive the curve estimator.

Conventions worth knowing:

* "gray intensity" is the unweighted mean of R, G and B;
* spatial consistency sums directed neighbour pairs (each adjacent pair of
  regions is counted twice) and border regions only see neighbours that
  exist;
* illumination smoothness uses forward differences with a zero difference
  past the last row/column, combines them as ``(|dx| + |dy|)^2`` per pixel
  and averages over all ``h*w`` pixels of each map, then over maps per
  iteration. A single 2x2 map ``[[0, 1], [0, 1]]`` therefore scores 0.5.

Every loss is averaged over the batch. Reductions are accumulated in
float64 and the scalar results stay float64 whatever the image dtype.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .numerics import ShapeError, Tensor, as_tensor, abs_sign, custom_op, region_mean, weighted_sum


@dataclass
class LossConfig:
    E: float = 0.6
    spa_region: int = 4
    exp_region: int = 16
    W_col: float = 0.5
    W_tv: float = 20.0
    W_spa: float = 1.0
    W_exp: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.E <= 1.0:
            raise ValueError(f"E must lie in [0, 1], got {self.E}")
        for name in ("W_col", "W_tv", "W_spa", "W_exp"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.spa_region < 1 or self.exp_region < 1:
            raise ValueError("region sizes must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossBreakdown:
    """Scalar loss tensors; ``total`` is the one to differentiate."""

    l_spa: Tensor
    l_exp: Tensor
    l_col: Tensor
    l_tv: Tensor
    total: Tensor

    def floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).data) for k in ("l_spa", "l_exp", "l_col", "l_tv", "total")}


def _check_rgb(x: Tensor, name: str) -> None:
    if x.data.ndim != 4 or x.shape[1] != 3:
        raise ShapeError(f"{name} must be a 3-channel NCHW tensor, got {x.shape}")


def _pair_terms(gy: np.ndarray, gi: np.ndarray, axis: int):
    dy = np.diff(gy, axis=axis)
    di = np.diff(gi, axis=axis)
    sy, si = abs_sign(dy), abs_sign(di)
    r = sy * dy - si * di
    return r, sy, si


def _scatter_diff(grad_d: np.ndarray, axis: int) -> np.ndarray:
    """Adjoint of np.diff along ``axis``."""
    shape = list(grad_d.shape)
    shape[axis] += 1
    out = np.zeros(shape, dtype=grad_d.dtype)
    hi = [slice(None)] * len(shape)
    lo = [slice(None)] * len(shape)
    hi[axis] = slice(1, None)
    lo[axis] = slice(None, -1)
    out[tuple(hi)] += grad_d
    out[tuple(lo)] -= grad_d
    return out


def spatial_consistency(enhanced, original, region: int = 4) -> Tensor:
    """Mean over regions of squared changes in neighbour contrast."""
    y, i = as_tensor(enhanced), as_tensor(original)
    _check_rgb(y, "enhanced")
    if y.shape != i.shape:
        raise ShapeError(f"enhanced {y.shape} and original {i.shape} differ")
    py, pi = region_mean(y, region), region_mean(i, region)
    gy = py.data.mean(axis=1, dtype=np.float64)
    gi = pi.data.mean(axis=1, dtype=np.float64)
    b, h, w = gy.shape
    # 2x: both directions of every adjacent pair
    scale = 2.0 / (b * h * w)
    rx, syx, six = _pair_terms(gy, gi, axis=2)
    ry, syy, siy = _pair_terms(gy, gi, axis=1)
    value = scale * ((rx * rx).sum() + (ry * ry).sum())

    def backward_fn(g):
        c = g * scale * 2
        ggy = _scatter_diff(c * rx * syx, 2) + _scatter_diff(c * ry * syy, 1)
        ggi = -(_scatter_diff(c * rx * six, 2) + _scatter_diff(c * ry * siy, 1))
        spread = lambda gg: np.repeat(gg[:, None] / 3, 3, axis=1).astype(py.dtype)
        return spread(ggy), spread(ggi)

    return custom_op(np.asarray(value, dtype=np.float64), (py, pi), backward_fn)


def exposure_control(enhanced, cfg: LossConfig | None = None) -> Tensor:
    """Mean absolute distance of region gray levels from the target ``E``."""
    cfg = cfg or LossConfig()
    y = as_tensor(enhanced)
    _check_rgb(y, "enhanced")
    py = region_mean(y, cfg.exp_region)
    gray = py.data.mean(axis=1, dtype=np.float64)
    diff = gray - cfg.E
    sign = abs_sign(diff)
    count = diff.size
    value = (sign * diff).sum() / count

    def backward_fn(g):
        gg = g * sign / count
        return (np.repeat(gg[:, None] / 3, 3, axis=1).astype(py.dtype),)

    return custom_op(np.asarray(value, dtype=np.float64), (py,), backward_fn)


def color_constancy(enhanced) -> Tensor:
    """Squared pairwise differences of whole-image channel means."""
    y = as_tensor(enhanced)
    _check_rgb(y, "enhanced")
    b, _, h, w = y.shape
    j = y.data.mean(axis=(2, 3), dtype=np.float64)
    r, gch, bch = j[:, 0], j[:, 1], j[:, 2]
    value = ((r - gch) ** 2 + (r - bch) ** 2 + (gch - bch) ** 2).sum() / b

    def backward_fn(g):
        dj = np.stack(
            [
                2 * (r - gch) + 2 * (r - bch),
                -2 * (r - gch) + 2 * (gch - bch),
                -2 * (r - bch) - 2 * (gch - bch),
            ],
            axis=1,
        )
        dj = dj * (g / (b * h * w))
        return (np.broadcast_to(dj[:, :, None, None], y.shape).astype(y.dtype),)

    return custom_op(np.asarray(value, dtype=np.float64), (y,), backward_fn)


def illumination_smoothness(maps) -> Tensor:
    """Total-variation style penalty on the parameter maps."""
    a = as_tensor(maps)
    if a.data.ndim != 4 or a.shape[1] % 3 or a.shape[1] == 0:
        raise ShapeError(f"maps must have 3*n_iter channels, got {a.shape}")
    b, c, h, w = a.shape
    n_iter = c // 3
    ad = a.data
    wide = ad.astype(np.float64)
    dx = np.zeros_like(wide)
    dy = np.zeros_like(wide)
    dx[..., :, :-1] = wide[..., :, 1:] - wide[..., :, :-1]
    dy[..., :-1, :] = wide[..., 1:, :] - wide[..., :-1, :]
    sx, sy = abs_sign(dx), abs_sign(dy)
    s = sx * dx + sy * dy
    norm = b * n_iter * h * w
    value = (s * s).sum() / norm

    def backward_fn(g):
        gs = g * 2 * s / norm
        gdx = (gs * sx)[..., :, :-1]
        gdy = (gs * sy)[..., :-1, :]
        ga = _scatter_diff(gdx, 3) + _scatter_diff(gdy, 2)
        return (ga.astype(ad.dtype),)

    return custom_op(np.asarray(value, dtype=np.float64), (a,), backward_fn)


def total_loss(enhanced, original, maps, cfg: LossConfig | None = None) -> LossBreakdown:
    cfg = cfg or LossConfig()
    l_spa = spatial_consistency(enhanced, original, cfg.spa_region)
    l_exp = exposure_control(enhanced, cfg)
    l_col = color_constancy(enhanced)
    l_tv = illumination_smoothness(maps)
    total = weighted_sum((l_spa, l_exp, l_col, l_tv), (cfg.W_spa, cfg.W_exp, cfg.W_col, cfg.W_tv))
    return LossBreakdown(l_spa, l_exp, l_col, l_tv, total)
