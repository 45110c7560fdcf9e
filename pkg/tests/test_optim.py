import numpy as np
import pytest

from zerodce.network import init_weights
from zerodce.numerics import ContractError
from zerodce.optim import AdamState, adam_step, adam_update


def test_defaults():
    s = AdamState.for_arrays([np.zeros(2)])
    assert (s.lr, s.beta1, s.beta2, s.eps, s.t) == (1e-4, 0.9, 0.999, 1e-8, 0)


def test_hand_step():
    p = [np.array([1.0])]
    s = AdamState.for_arrays(p, lr=0.1)
    (new,) = adam_update(p, [np.array([1.0])], s)
    assert new[0] == pytest.approx(1.0 - 0.1 / (1 + 1e-8), abs=1e-15)
    assert s.t == 1
    assert s.m[0][0] == pytest.approx(0.1) and s.v[0][0] == pytest.approx(0.001)


def test_zero_gradient_leaves_weights(default_weights):
    s = AdamState.for_arrays(default_weights.arrays())
    new, _ = adam_step(default_weights, [np.zeros_like(a) for a in default_weights.arrays()], s)
    for a, b in zip(default_weights.arrays(), new.arrays()):
        assert a.tobytes() == b.tobytes()


def test_identical_gradients_identical_updates():
    p = [np.array([0.3, 0.3]), np.array([0.3])]
    g = [np.array([0.7, 0.7]), np.array([0.7])]
    s = AdamState.for_arrays(p)
    for _ in range(3):
        p = adam_update(p, g, s)
    assert p[0][0] == p[0][1] == p[1][0]


def test_first_step_bounded_by_lr(rng):
    p = [rng.standard_normal(1000)]
    g = [rng.standard_normal(1000) * 10 ** rng.uniform(-6, 3, 1000)]
    s = AdamState.for_arrays(p, lr=1e-3)
    (new,) = adam_update(p, g, s)
    assert np.max(np.abs(new - p[0])) <= 1e-3 * (1 + 1e-12)
    assert np.all(s.v[0] >= 0)


def test_shape_mismatch():
    s = AdamState.for_arrays([np.zeros(3)])
    with pytest.raises(ContractError):
        adam_update([np.zeros(3)], [np.zeros(4)], s)
    with pytest.raises(ContractError):
        adam_update([np.zeros(3), np.zeros(1)], [np.zeros(3), np.zeros(1)], s)


def test_deterministic_and_dtype_preserving():
    w = init_weights(seed=1)
    g = [np.full_like(a, 0.01) for a in w.arrays()]
    a, _ = adam_step(w, g, AdamState.for_arrays(w.arrays()))
    b, _ = adam_step(w, g, AdamState.for_arrays(w.arrays()))
    for x, y in zip(a.arrays(), b.arrays()):
        assert x.tobytes() == y.tobytes() and x.dtype == np.float32
