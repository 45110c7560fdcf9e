"""Inference-side tools: enhancement, parameter-map heatmaps, metrics, benchmarking."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .curves import apply_curves
from .images import quantize, read_image, to_tensor, write_png
from .network import NetworkWeights, forward
from .numerics import ShapeError, Tensor, as_tensor, no_grad

PSNR_CAP_DB = 99.0


@dataclass
class EnhanceReport:
    input_path: str
    output_path: str
    seconds: float
    psnr: float | None = None
    mae: float | None = None


def enhance_tensor(weights: NetworkWeights, image: Tensor) -> tuple[Tensor, Tensor]:
    """Return (enhanced image, parameter maps) without recording a tape."""
    with no_grad():
        maps = forward(weights, image)
        return apply_curves(image, maps), maps


def enhance(weights: NetworkWeights, image_path, out_path, reference=None) -> EnhanceReport:
    """Enhance one image file and write the result as PNG.

    With ``reference`` (a path), PSNR and MAE of the output against it are
    included in the report.
    """
    start = time.perf_counter()
    image = read_image(image_path)
    enhanced, _ = enhance_tensor(weights, image)
    rgb = quantize(enhanced)
    write_png(out_path, rgb)
    elapsed = time.perf_counter() - start
    report = EnhanceReport(str(image_path), str(out_path), max(elapsed, 1e-9))
    if reference is not None:
        ref = read_image(reference)
        out = to_tensor(rgb)
        report.psnr = psnr(out, ref)
        report.mae = mae(out, ref)
    return report


@lru_cache(maxsize=1)
def heatmap_lut() -> np.ndarray:
    """The shipped 256x3 uint8 colour table (jet ramps, blue -> red)."""
    text = resources.files("zerodce").joinpath("data/heatmap_lut.txt").read_text()
    rows = [line.split() for line in text.splitlines() if line and not line.startswith("#")]
    lut = np.array(rows, dtype=np.uint8)
    if lut.shape != (256, 3):
        raise RuntimeError(f"corrupt heatmap table, shape {lut.shape}")
    return lut


def averaged_maps(maps: Tensor) -> np.ndarray:
    """Per-colour mean over iterations: (batch, 3*n, h, w) -> (batch, 3, h, w)."""
    b, c, h, w = maps.shape
    return maps.data.reshape(b, c // 3, 3, h, w).mean(axis=1)


def normalize_map(m: np.ndarray) -> np.ndarray:
    """Min-max scale to [0,1]; a constant map becomes all 0.5."""
    m = m.astype(np.float64)
    lo, hi = m.min(), m.max()
    if hi - lo <= 0:
        return np.full_like(m, 0.5)
    return (m - lo) / (hi - lo)


def colorize(unit: np.ndarray) -> np.ndarray:
    idx = np.rint(np.clip(unit, 0, 1) * 255).astype(np.intp)
    return heatmap_lut()[idx]


def export_heatmaps(weights: NetworkWeights, image_path, out_dir) -> list[Path]:
    """Write ``<stem>_A_R.png``, ``_A_G`` and ``_A_B`` heatmaps of the averaged maps."""
    image = read_image(image_path)
    _, maps = enhance_tensor(weights, image)
    avg = averaged_maps(maps)[0]
    out_dir = Path(out_dir)
    stem = Path(image_path).stem
    paths = []
    for c, name in enumerate("RGB"):
        path = out_dir / f"{stem}_A_{name}.png"
        write_png(path, colorize(normalize_map(avg[c])))
        paths.append(path)
    return paths


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = as_tensor(a).data, as_tensor(b).data
    if a.shape != b.shape:
        raise ShapeError(f"cannot compare {a.shape} with {b.shape}")
    return a.astype(np.float64), b.astype(np.float64)


def psnr(a, b) -> float:
    """PSNR in dB for [0,1] data, capped at 99 dB for (near) identical inputs."""
    x, y = _pair(a, b)
    mse = float(np.mean((x - y) ** 2))
    if mse < 1e-10:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(1.0 / mse))


def mae(a, b) -> float:
    """Mean absolute error expressed in 8-bit levels (x255)."""
    x, y = _pair(a, b)
    return float(np.mean(np.abs(x - y)) * 255.0)


@dataclass
class BenchResult:
    width: int
    height: int
    samples: list[float]

    @property
    def min(self) -> float:
        return min(self.samples)

    @property
    def median(self) -> float:
        return statistics.median(self.samples)

    @property
    def mean(self) -> float:
        return statistics.fmean(self.samples)


def benchmark(weights: NetworkWeights, width: int, height: int, repeats: int = 5, seed: int = 0) -> BenchResult:
    """Time forward + curve application on a random image, one warm-up pass excluded."""
    if repeats < 3:
        raise ValueError("repeats must be >= 3")
    rng = np.random.default_rng(seed)
    image = Tensor(rng.random((1, 3, height, width), dtype=np.float32))
    samples = []
    with threadpool_limits(limits=1):
        enhance_tensor(weights, image)
        for _ in range(repeats):
            t0 = time.perf_counter()
            enhance_tensor(weights, image)
            samples.append(time.perf_counter() - t0)
    return BenchResult(width, height, samples)
