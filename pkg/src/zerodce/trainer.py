"""Dataset ingestion, synthetic exposure degradation and the training loop."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, TextIO

import numpy as np

from . import modelio
from .curves import apply_curves
from .images import ImageReadError, read_rgb, to_tensor
from .losses import LossConfig, total_loss
from .network import ArchConfig, ConfigError, NetworkWeights, forward, init_weights
from .numerics import Tensor, backward, no_grad
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

LOSS_KEYS = ("l_spa", "l_exp", "l_col", "l_tv", "total")


class DatasetError(RuntimeError):
    pass


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int, batch: list[int], losses: dict[str, float]):
        self.step = step
        self.batch = batch
        self.losses = losses
        detail = ", ".join(f"{k}={v!r}" for k, v in losses.items())
        super().__init__(f"non-finite loss at step {step} (batch indices {batch}): {detail}")


@dataclass
class OptimizerConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainConfig:
    data_dir: str | None = None
    image_size: int = 512
    batch_size: int = 8
    max_steps: int = 1000
    seed: int = 0
    checkpoint_every: int = 0
    out_dir: str | None = None
    val_fraction: float = 0.2
    # >0: ignore data_dir and train on this many generated gamma-degraded scenes
    synthetic: int = 0
    synthetic_gamma: tuple[float, float] = (0.4, 3.0)
    arch: ArchConfig = field(default_factory=ArchConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.image_size < self.loss.exp_region:
            raise ConfigError(f"image_size {self.image_size} is smaller than exp_region {self.loss.exp_region}")
        if self.max_steps < 0:
            raise ConfigError("max_steps must be >= 0")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        raw = dict(raw)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "arch" in raw:
            raw["arch"] = ArchConfig(**raw["arch"])
        if "loss" in raw:
            raw["loss"] = LossConfig(**raw["loss"])
        if "optimizer" in raw:
            raw["optimizer"] = OptimizerConfig(**raw["optimizer"])
        if "synthetic_gamma" in raw:
            raw["synthetic_gamma"] = tuple(raw["synthetic_gamma"])
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["synthetic_gamma"] = list(self.synthetic_gamma)
        return d


@dataclass
class Checkpoint:
    step: int
    weights: NetworkWeights
    optimizer: AdamState
    running: dict[str, float] = field(default_factory=dict)

    def save(self, prefix) -> None:
        """Write ``<prefix>.zdce``, ``<prefix>.zdco`` and ``<prefix>.json``."""
        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        modelio.save_weights(self.weights, prefix.with_suffix(".zdce"))
        modelio.save_optimizer(self.optimizer, self.weights.config, prefix.with_suffix(".zdco"))
        meta = {"step": self.step, "running": self.running}
        prefix.with_suffix(".json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, prefix) -> "Checkpoint":
        prefix = Path(prefix)
        weights = modelio.load_weights(prefix.with_suffix(".zdce"))
        opt = modelio.load_optimizer(prefix.with_suffix(".zdco"), weights.config)
        meta = json.loads(prefix.with_suffix(".json").read_text())
        return cls(meta["step"], weights, opt, meta.get("running", {}))


# ---------------------------------------------------------------------------
# data


def load_dataset(directory, size: int, workers: int = 4) -> list[Tensor]:
    """Decode every image in ``directory`` (sorted by name), resized to size x size."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"{directory} is not a directory")
    paths = sorted(p for p in directory.iterdir() if p.is_file() and not p.name.startswith("."))

    def decode(p):
        try:
            return read_rgb(p, size)
        except ImageReadError as exc:
            log.warning("skipping %s: %s", p.name, exc)
            return None

    with ThreadPoolExecutor(max_workers=workers) as pool:
        decoded = list(pool.map(decode, paths))
    images = [to_tensor(rgb) for rgb in decoded if rgb is not None]
    if not images:
        raise DatasetError(f"no decodable images in {directory}")
    return images


def synth_degrade(image, seed: int, gamma: float | None = None, gamma_range=(0.4, 3.0)) -> Tensor:
    """Re-expose ``image`` as ``image ** gamma``; gamma > 1 darkens, < 1 brightens.

    ``gamma`` is drawn uniformly from ``gamma_range`` with the given seed
    unless passed explicitly.
    """
    data = image.data if isinstance(image, Tensor) else np.asarray(image)
    if gamma is None:
        lo, hi = gamma_range
        gamma = float(np.random.default_rng(seed).uniform(lo, hi))
    out = np.power(data, data.dtype.type(gamma))
    return Tensor(out)


def synthetic_scene(size: int, rng: np.random.Generator) -> np.ndarray:
    """A smooth, colourful (1, 3, size, size) float32 scene in [0.05, 0.95]."""
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    base = rng.uniform(0.3, 0.7, size=3)
    tilt = rng.uniform(-0.25, 0.25, size=(3, 2))
    img = base[:, None, None] + tilt[:, 0, None, None] * (xx - 0.5) + tilt[:, 1, None, None] * (yy - 0.5)
    for _ in range(rng.integers(3, 7)):
        cx, cy = rng.uniform(0, 1, size=2)
        r = rng.uniform(0.08, 0.3)
        colour = rng.uniform(-0.35, 0.35, size=3)
        blob = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * r * r))
        img = img + colour[:, None, None] * blob
    freq = rng.uniform(2, 8)
    img = img + 0.05 * np.sin(2 * np.pi * freq * (xx + yy))[None]
    return np.clip(img, 0.05, 0.95).astype(np.float32)[None]


def make_synthetic_dataset(count: int, size: int, seed: int, gamma_range=(0.4, 3.0)) -> list[Tensor]:
    """``count`` generated scenes, each re-exposed by :func:`synth_degrade`."""
    rng = np.random.default_rng([seed, 7])
    out = []
    for k in range(count):
        scene = synthetic_scene(size, rng)
        out.append(synth_degrade(scene, seed=seed * 100003 + k, gamma_range=gamma_range))
    return out


def split_holdout(count: int, fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Seeded (train, validation) index split; at least one training image is kept."""
    order = np.random.default_rng([seed, 3]).permutation(count)
    n_val = min(int(round(fraction * count)), count - 1)
    return sorted(order[n_val:].tolist()), sorted(order[:n_val].tolist())


def batch_stream(count: int, batch_size: int, seed: int):
    """Endless batches drawn from successive seeded permutations (epochs)."""
    rng = np.random.default_rng([seed, 5])
    pending: list[int] = []
    while True:
        while len(pending) < batch_size:
            pending.extend(rng.permutation(count).tolist())
        yield pending[:batch_size]
        pending = pending[batch_size:]


# ---------------------------------------------------------------------------
# training


def loss_step(weights: NetworkWeights, batch: Tensor, cfg: LossConfig):
    maps = forward(weights, batch)
    enhanced = apply_curves(batch, maps)
    return total_loss(enhanced, batch, maps, cfg), enhanced


def evaluate(weights: NetworkWeights, images: list[Tensor], cfg: LossConfig | None = None, batch_size: int = 8):
    """Mean loss breakdown and mean gray level of the enhanced images."""
    cfg = cfg or LossConfig()
    sums = dict.fromkeys(LOSS_KEYS, 0.0)
    gray = 0.0
    with no_grad():
        for start in range(0, len(images), batch_size):
            chunk = images[start : start + batch_size]
            batch = Tensor(np.concatenate([t.data for t in chunk]))
            breakdown, enhanced = loss_step(weights, batch, cfg)
            for k, v in breakdown.floats().items():
                sums[k] += v * len(chunk)
            gray += float(enhanced.data.astype(np.float64).mean(axis=(1, 2, 3)).sum())
    n = len(images)
    return {k: v / n for k, v in sums.items()}, gray / n


def _resolve_images(cfg: TrainConfig) -> list[Tensor]:
    if cfg.synthetic > 0:
        return make_synthetic_dataset(cfg.synthetic, cfg.image_size, cfg.seed, cfg.synthetic_gamma)
    if cfg.data_dir is None:
        raise ConfigError("either data_dir or synthetic must be set")
    return load_dataset(cfg.data_dir, cfg.image_size)


def train(
    cfg: TrainConfig,
    images: list[Tensor] | None = None,
    log_file: TextIO | None = None,
    on_step: Callable[[int, dict[str, float]], None] | None = None,
) -> Checkpoint:
    """Run ``cfg.max_steps`` optimisation steps and return the final checkpoint."""
    if images is None:
        images = _resolve_images(cfg)
    if not images:
        raise DatasetError("empty dataset")
    train_idx, _ = split_holdout(len(images), cfg.val_fraction, cfg.seed)
    train_set = [images[i] for i in train_idx]

    weights = init_weights(cfg.arch, cfg.seed)
    state = AdamState.for_arrays(weights.arrays(), **asdict(cfg.optimizer))
    running = dict.fromkeys(LOSS_KEYS, 0.0)
    since = 0
    last_avg: dict[str, float] = {}
    out_dir = Path(cfg.out_dir) if cfg.out_dir else None

    batches = batch_stream(len(train_set), cfg.batch_size, cfg.seed)
    for step in range(1, cfg.max_steps + 1):
        idx = next(batches)
        batch = Tensor(np.concatenate([train_set[i].data for i in idx]))
        breakdown, _ = loss_step(weights, batch, cfg.loss)
        values = breakdown.floats()
        if not all(math.isfinite(v) for v in values.values()):
            raise TrainingDivergedError(step, [train_idx[i] for i in idx], values)
        backward(breakdown.total)
        weights, state = adam_step(weights, weights.grads(), state)

        if log_file is not None:
            log_file.write("\t".join([str(step)] + [f"{values[k]:.6g}" for k in LOSS_KEYS]) + "\n")
            log_file.flush()
        if on_step is not None:
            on_step(step, values)
        for k in LOSS_KEYS:
            running[k] += values[k]
        since += 1
        if out_dir is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            avg = {k: v / since for k, v in running.items()}
            Checkpoint(step, weights, state, avg).save(out_dir / f"step_{step:07d}")
            running = dict.fromkeys(LOSS_KEYS, 0.0)
            since = 0
            last_avg = avg

    avg = {k: v / since for k, v in running.items()} if since else last_avg
    final = Checkpoint(cfg.max_steps, weights, state, avg)
    if out_dir is not None:
        final.save(out_dir / "final")
        (out_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    return final
