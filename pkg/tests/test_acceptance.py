"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected and repeated in the terminal summary.
"""

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from zerodce import modelio
from zerodce.curves import apply_curves, le_curve_step
from zerodce.enhance import benchmark, enhance, enhance_tensor
from zerodce.gradcheck import run_gradcheck
from zerodce.images import read_rgb, to_tensor, write_png, quantize
from zerodce.losses import color_constancy, exposure_control, illumination_smoothness, spatial_consistency
from zerodce.network import ArchConfig, init_weights, mac_count, param_count
from zerodce.numerics import Tensor
from zerodce.optim import AdamState, adam_update
from zerodce.trainer import Checkpoint, TrainConfig, evaluate, make_synthetic_dataset, synth_degrade, train


def report(number, title, ok, detail, elapsed=None, budget=None):
    within = budget is None or elapsed <= budget
    passed = bool(ok) and within
    timing = "" if elapsed is None else f" [{elapsed:.2f}s / {budget:g}s]"
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {title}: {detail}{timing}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line
    assert within, f"time budget exceeded: {line}"


# ---------------------------------------------------------------------------
# shared smoke run


SMOKE_STEPS = 200


def smoke_config(out_dir):
    return TrainConfig(image_size=64, batch_size=8, max_steps=SMOKE_STEPS, seed=0, val_fraction=0.0,
                       out_dir=str(out_dir))


def smoke_images():
    # gamma in [2, 3]: every image is darkened
    return make_synthetic_dataset(16, 64, seed=0, gamma_range=(2.0, 3.0))


def run_smoke(out_dir):
    images = smoke_images()
    cfg = smoke_config(out_dir)
    totals = []
    start = time.perf_counter()
    ckpt = train(cfg, images=images, on_step=lambda step, values: totals.append(values["total"]))
    return {"ckpt": ckpt, "cfg": cfg, "images": images, "totals": totals,
            "seconds": time.perf_counter() - start, "dir": out_dir}


@pytest.fixture(scope="module")
def smoke(tmp_path_factory):
    return run_smoke(tmp_path_factory.mktemp("smoke_a"))


# ---------------------------------------------------------------------------


def test_criterion_01_parameter_count():
    t0 = time.perf_counter()
    n = param_count(init_weights(ArchConfig(), seed=0))
    report(1, "parameter count", n == 79_416, f"{n:,} (expected 79,416)", time.perf_counter() - t0, 1)


def test_criterion_02_mac_count():
    t0 = time.perf_counter()
    macs = mac_count(ArchConfig(), 256, 256)
    rel = abs(macs - 5.21e9) / 5.21e9
    report(2, "MAC count 256x256 (multiply-accumulates + one add per bias)", rel <= 0.01,
           f"{macs:,} ({rel:.2%} from 5.21e9)", time.perf_counter() - t0, 1)


def test_criterion_03_curve_range_and_monotonicity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    n = 100_000
    i = rng.random(n).astype(np.float32)
    a = rng.uniform(-1, 1, n).astype(np.float32)
    shape = (1, 1, n, 1)
    out = le_curve_step(Tensor(i.reshape(shape)), Tensor(a.reshape(shape))).data.ravel()
    range_bad = int(np.sum((out < 0) | (out > 1)))
    i1, i2 = np.sort(rng.random((2, n)).astype(np.float32), axis=0)
    o1 = le_curve_step(Tensor(i1.reshape(shape)), Tensor(a.reshape(shape))).data.ravel()
    o2 = le_curve_step(Tensor(i2.reshape(shape)), Tensor(a.reshape(shape))).data.ravel()
    mono_bad = int(np.sum(o1 > o2 + 1e-6))
    report(3, "curve range & monotonicity", range_bad == 0 and mono_bad == 0,
           f"{range_bad} range violations, {mono_bad} monotonicity violations over {n:,} samples",
           time.perf_counter() - t0, 5)


def test_criterion_04_curve_composition():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    img = rng.random((1, 3, 1, 1000)).astype(np.float32)
    worst = 0.0
    for n in (1, 2, 4, 8):
        maps = np.full((1, 3 * n, 1, 1000), -1.0, np.float32)
        out = apply_curves(Tensor(img), Tensor(maps)).data.astype(np.float64)
        worst = max(worst, float(np.max(np.abs(out - img.astype(np.float64) ** (2**n)))))
    report(4, "composition with maps = -1 gives I^(2^n)", worst <= 1e-5, f"max abs error {worst:.2e}",
           time.perf_counter() - t0, 1)


def test_criterion_05_gradient_suite():
    t0 = time.perf_counter()
    r32 = run_gradcheck(np.float32)
    r64 = run_gradcheck(np.float64)
    elapsed = time.perf_counter() - t0
    worst32 = max(r32, key=lambda r: r.error)
    worst64 = max(r64, key=lambda r: r.error)
    ok = all(r.ok for r in r32 + r64) and worst32.threshold == 1e-2 and worst64.threshold == 1e-4
    report(5, f"finite-difference suite ({len(r32)} checks per build)", ok,
           f"32-bit worst {worst32.error:.1e} ({worst32.name}) < 1e-2; "
           f"64-bit worst {worst64.error:.1e} ({worst64.name}) < 1e-4", elapsed, 60)


def test_criterion_06_loss_zero_cases():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    img = rng.random((2, 3, 32, 32))
    values = {
        "spatial": spatial_consistency(img, img).item(),
        "exposure": exposure_control(np.full((1, 3, 32, 32), 0.6)).item(),
        "color": color_constancy(np.repeat(rng.random((2, 1, 16, 16)), 3, axis=1)).item(),
        "smoothness": illumination_smoothness(np.full((2, 24, 16, 16), -0.37)).item(),
    }
    worst = max(abs(v) for v in values.values())
    report(6, "loss zero cases (64-bit inputs)", worst <= 1e-12,
           ", ".join(f"{k} {v:.1e}" for k, v in values.items()), time.perf_counter() - t0, 1)


def test_criterion_07_hand_computed_losses():
    t0 = time.perf_counter()
    original = np.full((1, 3, 8, 8), 0.2, np.float32)
    original[..., 4:] = 0.4
    spa = spatial_consistency(np.full((1, 3, 8, 8), 0.5, np.float32), original, 4).item()
    y = np.full((1, 3, 16, 32), 0.6, np.float32)
    y[..., 16:] = 0.8
    exp = exposure_control(y).item()
    c = np.empty((1, 3, 4, 4), np.float32)
    c[:, 0], c[:, 1], c[:, 2] = 0.5, 0.3, 0.1
    col = color_constancy(c).item()
    errs = [abs(spa - 0.04), abs(exp - 0.1), abs(col - 0.24)]
    report(7, "worked loss examples (32-bit inputs)", max(errs) <= 1e-6,
           f"spatial {spa:.8f}, exposure {exp:.8f}, color {col:.8f}", time.perf_counter() - t0, 1)


def test_criterion_08_training_smoke(smoke):
    before, _ = evaluate(init_weights(smoke["cfg"].arch, smoke["cfg"].seed), smoke["images"], smoke["cfg"].loss)
    after, gray = evaluate(smoke["ckpt"].weights, smoke["images"], smoke["cfg"].loss)
    ratio = after["total"] / before["total"]
    totals = smoke["totals"]
    trailing_20 = float(np.mean(totals[max(0, 20 - 50):20]))
    trailing_end = float(np.mean(totals[-50:]))
    ok = ratio <= 0.5 and abs(gray - 0.6) <= 0.15 and trailing_end < trailing_20
    report(8, "training smoke run", ok,
           f"total {before['total']:.4f} -> {after['total']:.4f} ({ratio:.0%} of initial); "
           f"mean gray {gray:.3f} (0.6 +/- 0.15); trailing-50 avg {trailing_20:.4f} @20 -> {trailing_end:.4f} @200",
           smoke["seconds"], 600)


def test_criterion_08b_trained_weights_brighten(smoke, tmp_path):
    scene = make_synthetic_dataset(1, 64, seed=99, gamma_range=(1.0, 1.0))[0]
    dark = synth_degrade(scene, seed=0, gamma=2.5)
    src = tmp_path / "dark.png"
    write_png(src, quantize(dark))
    enhance(smoke["ckpt"].weights, src, tmp_path / "bright.png")
    m_in = read_rgb(src).mean() / 255
    m_out = read_rgb(tmp_path / "bright.png").mean() / 255
    ok = m_in < m_out and abs(m_out - 0.6) < abs(m_in - 0.6)
    report(8, "trained weights brighten a gamma-2.5 image toward E", ok, f"mean gray {m_in:.3f} -> {m_out:.3f}")


def test_criterion_09_end_to_end_identity(identity_weights, gradient_png, tmp_path):
    t0 = time.perf_counter()
    enhance(identity_weights, gradient_png, tmp_path / "same.png")
    diff = np.abs(read_rgb(gradient_png).astype(int) - read_rgb(tmp_path / "same.png").astype(int)).max()
    report(9, "zero final layer gives identity PNG", diff <= 1, f"max deviation {diff} levels",
           time.perf_counter() - t0, 5)


def test_criterion_10_serialization(tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    w = init_weights(ArchConfig(), seed=10)
    modelio.save_weights(w, tmp_path / "w.zdce")
    back = modelio.load_weights(tmp_path / "w.zdce")
    weights_ok = all(a.tobytes() == b.tobytes() for a, b in zip(w.arrays(), back.arrays()))

    state = AdamState.for_arrays(w.arrays())
    adam_update(w.arrays(), [rng.standard_normal(a.shape).astype(np.float32) for a in w.arrays()], state)
    Checkpoint(1, w, state, {"total": 0.5}).save(tmp_path / "ck")
    ck = Checkpoint.load(tmp_path / "ck")
    ckpt_ok = ck.step == 1 and all(
        a.tobytes() == b.tobytes() for a, b in zip(w.arrays() + state.m + state.v, ck.weights.arrays() + ck.optimizer.m + ck.optimizer.v)
    )

    blob = (tmp_path / "w.zdce").read_bytes()
    named = {}
    for label, data, err in [
        ("truncated", blob[:1000], modelio.ShapeMismatchError),
        ("bad magic", b"JUNK" + blob[4:], modelio.BadMagicError),
        ("bad version", blob[:4] + (9).to_bytes(4, "little") + blob[8:], modelio.UnsupportedVersionError),
    ]:
        try:
            modelio.weights_from_bytes(data)
            named[label] = False
        except err:
            named[label] = True
    ok = weights_ok and ckpt_ok and all(named.values())
    report(10, "serialization", ok,
           f"weights bit-identical {weights_ok}, checkpoint bit-identical {ckpt_ok}, named errors {named}",
           time.perf_counter() - t0, 1)


def test_criterion_11_determinism(smoke, tmp_path_factory):
    second = run_smoke(tmp_path_factory.mktemp("smoke_b"))
    files = ["final.zdce", "final.zdco", "final.json"]
    same = [(smoke["dir"] / f).read_bytes() == (second["dir"] / f).read_bytes() for f in files]
    elapsed = smoke["seconds"] + second["seconds"]
    report(11, "two seeded smoke runs give identical checkpoints", all(same),
           ", ".join(f"{f} {'identical' if s else 'DIFFERS'}" for f, s in zip(files, same)), elapsed, 1200)


def test_criterion_12_benchmark_scaling():
    t0 = time.perf_counter()
    w = init_weights(ArchConfig(), seed=0)
    small = benchmark(w, 320, 240, repeats=5)
    large = benchmark(w, 640, 480, repeats=5)
    ratio = large.median / small.median
    report(12, "benchmark scaling 640x480 vs 320x240", 3.0 <= ratio <= 5.3,
           f"medians {large.median:.3f}s / {small.median:.3f}s = {ratio:.2f} (needs 3.0-5.3)",
           time.perf_counter() - t0, 60)
