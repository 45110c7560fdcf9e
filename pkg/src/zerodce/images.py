"""8-bit image decode/encode and conversion to (1, 3, H, W) float tensors."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .numerics import Tensor

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


class ImageReadError(OSError):
    pass


def read_rgb(path, size: int | None = None) -> np.ndarray:
    """Decode to an (H, W, 3) uint8 array, dropping alpha; optional bilinear resize to size x size."""
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if size is not None and im.size != (size, size):
                im = im.resize((size, size), Image.BILINEAR)
            return np.asarray(im, dtype=np.uint8).copy()
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ImageReadError(f"cannot decode {path}: {exc}") from exc


def to_tensor(rgb: np.ndarray, dtype=np.float32) -> Tensor:
    arr = rgb.astype(dtype) / dtype(255)
    return Tensor(np.ascontiguousarray(arr.transpose(2, 0, 1)[None]))


def read_image(path, size: int | None = None) -> Tensor:
    return to_tensor(read_rgb(path, size))


def quantize(x) -> np.ndarray:
    """Clamp a (1, 3, H, W) or (3, H, W) image to [0,1] and round to (H, W, 3) uint8."""
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    if arr.ndim == 4:
        if arr.shape[0] != 1:
            raise ValueError("quantize expects a single image")
        arr = arr[0]
    arr = np.clip(arr.astype(np.float64), 0.0, 1.0)
    return np.rint(arr * 255.0).astype(np.uint8).transpose(1, 2, 0)


def write_png(path, rgb: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(rgb).save(path, format="PNG")


def list_images(directory) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())
