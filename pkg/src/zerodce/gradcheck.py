"""Central finite-difference checks of every differentiable piece.

The error for one input is ``||numeric - analytic|| / max(||numeric||, ||analytic||)``
over a sample of its entries, with kink decisions frozen at the base point
(see :func:`input_errors`).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import losses
from .curves import apply_curves
from .network import ArchConfig, NetworkWeights, forward, layer_plan
from .numerics import (
    Tensor,
    backward,
    concat_channels,
    conv2d,
    no_grad,
    record_branches,
    replay_branches,
    region_mean,
    relu,
    tanh_act,
    weighted_total,
)

SETTINGS = {
    # dtype name: (step, threshold)
    "float32": (1e-3, 1e-2),
    "float64": (1e-5, 1e-4),
}


@dataclass
class CheckResult:
    name: str
    error: float
    threshold: float

    @property
    def ok(self) -> bool:
        return bool(np.isfinite(self.error)) and self.error < self.threshold


def relative_error(numeric: np.ndarray, analytic: np.ndarray) -> float:
    scale = max(np.linalg.norm(numeric), np.linalg.norm(analytic))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(numeric - analytic) / scale)


def check_function(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    wrt: Sequence[int],
    step: float,
    rng: np.random.Generator,
    samples: int = 24,
) -> float:
    """Worst relative error of d fn / d inputs[k] for k in ``wrt``."""
    return max(input_errors(fn, inputs, wrt, step, rng, samples))


def input_errors(fn, inputs, wrt, step, rng, samples=24) -> list[float]:
    """Relative error of d fn / d inputs[k], one entry per k in ``wrt``.

    Kink decisions (ReLU gates, signs inside absolute values) are recorded
    at the unperturbed point and replayed for the +/- ``step`` evaluations,
    so the difference quotient stays on the smooth piece whose derivative
    the analytic pass computes.
    """
    tensors = [Tensor(x, requires_grad=(k in wrt)) for k, x in enumerate(inputs)]
    with record_branches() as branches:
        loss = fn(*tensors)
    backward(loss)

    def evaluate(arrays) -> float:
        with no_grad(), replay_branches(branches):
            return float(fn(*[Tensor(x) for x in arrays]).data)

    errors = []
    for k in wrt:
        analytic = tensors[k].grad if tensors[k].grad is not None else np.zeros_like(inputs[k])
        # half the probes on the largest analytic entries (well above float32
        # noise), half at random so entries wrongly reported as ~0 are probed too
        by_size = np.argsort(-np.abs(analytic.ravel()), kind="stable")
        n_top = min(samples // 2, by_size.size)
        rest = rng.permutation(by_size[n_top:])[: samples - n_top]
        picks = np.concatenate([by_size[:n_top], rest])
        num = np.empty(len(picks))
        ana = np.empty(len(picks))
        for j, fi in enumerate(picks):
            idx = np.unravel_index(fi, inputs[k].shape)
            vals = []
            for sign in (1, -1):
                probe = list(inputs)
                probe[k] = inputs[k].copy()
                probe[k][idx] += sign * step
                vals.append(evaluate(probe))
            num[j] = (vals[0] - vals[1]) / (2 * step)
            ana[j] = analytic[idx]
        errors.append(relative_error(num, ana))
    return errors


def _away_from_zero(rng, shape, dtype, lo=0.1):
    x = rng.uniform(lo, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return x.astype(dtype)


def _ramp(shape, dtype, sx, sy, rng, noise=0.005, offset=0.0):
    b, c, h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    base = offset + sx * xx + sy * yy
    return (base[None, None] + noise * rng.standard_normal(shape)).astype(dtype)


def _probe(rng, shape, dtype):
    return rng.standard_normal(shape).astype(dtype)


def _small_network(rng, dtype, config: ArchConfig) -> NetworkWeights:
    """Random weights scaled so that every layer carries a sizeable gradient."""
    plan = layer_plan(config)
    kernels, biases = [], []
    for i, spec in enumerate(plan):
        gain = 1.5
        shape = (spec.out_channels, spec.in_channels, 3, 3)
        kernels.append((rng.standard_normal(shape) * (gain / np.sqrt(spec.in_channels * 9))).astype(dtype))
        biases.append(rng.uniform(0.05, 0.15, size=spec.out_channels).astype(dtype))
    return NetworkWeights.from_arrays(config, kernels, biases)


def component_checks(dtype=np.float32) -> list[tuple[str, Callable[[np.random.Generator, float], float]]]:
    """(name, runner) pairs.

    A runner returns its worst relative error, or a mapping of sub-component
    names to errors (the network check reports one entry per layer).
    """
    dt = np.dtype(dtype).type
    checks = []

    def add(name):
        def deco(f):
            checks.append((name, f))
            return f

        return deco

    @add("conv2d")
    def _(rng, step):
        x = rng.uniform(0, 1, (2, 2, 5, 5)).astype(dt)
        k = rng.standard_normal((3, 2, 3, 3)).astype(dt)
        b = rng.standard_normal(3).astype(dt)
        p = _probe(rng, (2, 3, 5, 5), dt)
        return check_function(lambda x, k, b: weighted_total(conv2d(x, k, b), p), [x, k, b], [0, 1, 2], step, rng)

    @add("relu")
    def _(rng, step):
        x = _away_from_zero(rng, (1, 2, 4, 4), dt)
        p = _probe(rng, x.shape, dt)
        return check_function(lambda x: weighted_total(relu(x), p), [x], [0], step, rng)

    @add("tanh")
    def _(rng, step):
        x = rng.standard_normal((1, 2, 4, 4)).astype(dt)
        p = _probe(rng, x.shape, dt)
        return check_function(lambda x: weighted_total(tanh_act(x), p), [x], [0], step, rng)

    @add("concat")
    def _(rng, step):
        a = rng.standard_normal((1, 2, 3, 3)).astype(dt)
        b = rng.standard_normal((1, 3, 3, 3)).astype(dt)
        p = _probe(rng, (1, 5, 3, 3), dt)
        return check_function(lambda a, b: weighted_total(concat_channels(a, b), p), [a, b], [0, 1], step, rng)

    @add("region_mean")
    def _(rng, step):
        x = rng.standard_normal((1, 2, 9, 7)).astype(dt)
        p = _probe(rng, (1, 2, 4, 3), dt)
        return check_function(lambda x: weighted_total(region_mean(x, 2), p), [x], [0], step, rng)

    @add("curves")
    def _(rng, step):
        img = rng.uniform(0.05, 0.95, (1, 3, 4, 4)).astype(dt)
        maps = rng.uniform(-0.9, 0.9, (1, 12, 4, 4)).astype(dt)
        p = _probe(rng, img.shape, dt)
        return check_function(lambda i, a: weighted_total(apply_curves(i, a), p), [img, maps], [0, 1], step, rng)

    @add("loss_spatial")
    def _(rng, step):
        y = _ramp((1, 3, 12, 12), dt, 0.03, 0.02, rng, offset=0.2)
        i = _ramp((1, 3, 12, 12), dt, 0.01, 0.015, rng, offset=0.1)
        return check_function(lambda y, i: losses.spatial_consistency(y, i, 4), [y, i], [0, 1], step, rng)

    @add("loss_exposure")
    def _(rng, step):
        y = rng.uniform(0.0, 0.4, (2, 3, 8, 8)).astype(dt)
        y[:, :, :4, :4] += dt(0.55)
        cfg = losses.LossConfig(exp_region=4)
        return check_function(lambda y: losses.exposure_control(y, cfg), [y], [0], step, rng)

    @add("loss_color")
    def _(rng, step):
        y = rng.uniform(0, 1, (2, 3, 6, 6)).astype(dt)
        return check_function(losses.color_constancy, [y], [0], step, rng)

    @add("loss_smoothness")
    def _(rng, step):
        a = _ramp((1, 6, 6, 6), dt, 0.05, -0.04, rng)
        return check_function(losses.illumination_smoothness, [a], [0], step, rng)

    @add("network")
    def _(rng, step):
        config = ArchConfig()
        weights = _small_network(rng, dt, config)
        img = rng.uniform(0.05, 0.95, (1, 3, 8, 8)).astype(dt)
        cfg = losses.LossConfig(exp_region=4, spa_region=2)
        n = len(weights.kernels)

        def total(img, *params):
            w = NetworkWeights(config, list(params[0::2]), list(params[1::2]))
            maps = forward(w, img)
            enhanced = apply_curves(img, maps)
            return losses.total_loss(enhanced, img, maps, cfg).total

        inputs = [img] + weights.arrays()
        errs = input_errors(total, inputs, list(range(1, 2 * n + 1)), step, rng, samples=8)
        return {f"layer{i + 1}": max(errs[2 * i], errs[2 * i + 1]) for i in range(n)}

    return checks


def run_gradcheck(dtype=np.float32, seed: int = 0) -> list[CheckResult]:
    name = np.dtype(dtype).name
    step, threshold = SETTINGS[name]
    results = []
    for i, (cname, runner) in enumerate(component_checks(dtype)):
        rng = np.random.default_rng([seed, i])
        err = runner(rng, step)
        if isinstance(err, dict):
            results.extend(CheckResult(f"{cname}.{k}", v, threshold) for k, v in err.items())
        else:
            results.append(CheckResult(cname, err, threshold))
    return results
