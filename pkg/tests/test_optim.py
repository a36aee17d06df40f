import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from exactsnn.optim import (OptimState, adam_step, clip_weights, lr_schedule, quantization_levels,
                            quantize_weights, sgd_step)

finite = st.floats(-3, 3, allow_nan=False)


def test_sgd_examples():
    w = [np.array([1.0, -2.0])]
    assert np.array_equal(sgd_step(w, [np.zeros(2)], 0.1)[0], w[0])
    assert sgd_step([np.array([1.0])], [np.array([2.0])], 0.1)[0][0] == pytest.approx(0.8)
    assert np.array_equal(sgd_step(w, [np.ones(2)], 0.0)[0], w[0])


def test_sgd_rejects_bad_gradients():
    with pytest.raises(ValueError):
        sgd_step([np.zeros(2)], [np.zeros(3)], 0.1)
    with pytest.raises(FloatingPointError):
        sgd_step([np.zeros(2)], [np.array([np.nan, 0])], 0.1)


def test_adam_first_step_magnitude():
    w = [np.array([0.5, -0.5, 0.0])]
    g = [np.array([3.0, -0.01, 1e-3])]
    state = OptimState.for_weights(w, 0.003)
    _, out = adam_step(state, w, g)
    np.testing.assert_allclose(out[0] - w[0], -0.003 * np.sign(g[0]), rtol=1e-4)


def test_adam_zero_gradients_fixed():
    w = [np.array([0.5, -0.5])]
    state = OptimState.for_weights(w, 0.01)
    for _ in range(20):
        state, w2 = adam_step(state, w, [np.zeros(2)])
        assert np.array_equal(w2[0], w[0])


def test_adam_deterministic():
    rng = np.random.default_rng(0)
    grads = [[rng.normal(size=(3, 2))] for _ in range(10)]

    def run():
        w = [np.ones((3, 2))]
        state = OptimState.for_weights(w, 0.01)
        for g in grads:
            state, w = adam_step(state, w, g)
        return w[0]

    assert np.array_equal(run(), run())


def test_adam_constants():
    s = OptimState(lr=0.003)
    assert (s.beta1, s.beta2, s.eps) == (0.9, 0.999, 1e-8)


def test_lr_schedule_examples():
    assert lr_schedule(0, 0.003) == 0.003
    assert lr_schedule(10, 0.0005, 0.5, 10) == pytest.approx(0.00025)
    assert lr_schedule(9, 0.0005, 0.5, 10) == 0.0005
    assert lr_schedule(500, 0.0005, 0.5, 10, 0.0001) == 0.0001


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-5, 1.0), st.floats(0.1, 1.0), st.integers(1, 20), st.floats(0, 1e-4))
def test_lr_schedule_monotone(lr0, decay, period, lr_min):
    values = [lr_schedule(e, lr0, decay, period, lr_min) for e in range(100)]
    assert all(b <= a for a, b in zip(values, values[1:]))
    assert min(values) >= lr_min


def test_clip_examples():
    assert clip_weights(np.array([0.7]), 0.5)[0] == 0.5
    assert clip_weights(np.array([-2.0]), 1.5)[0] == -1.5
    w = np.array([0.1, -0.3])
    assert np.array_equal(clip_weights(w, 0.5), w)


def test_quantize_examples():
    levels = quantization_levels(2)
    np.testing.assert_allclose(levels, [-1, -2 / 3, -1 / 3, 0, 1 / 3, 2 / 3, 1])
    assert quantize_weights(np.array([0.3]), 2)[0] == pytest.approx(1 / 3)
    for n in range(1, 9):
        assert quantize_weights(np.array([0.0]), n)[0] == 0
    l5 = quantization_levels(5)
    assert len(l5) == 63
    np.testing.assert_allclose(np.diff(l5), 2 / 62)
    w = [np.array([0.1])]
    assert quantize_weights(w, None) is w


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 50), elements=finite), st.integers(1, 8))
def test_quantize_level_membership(w, n):
    q = quantize_weights(w, n)
    levels = quantization_levels(n)
    assert len(levels) == 2 ** (n + 1) - 1
    dist = np.min(np.abs(q[:, None] - levels[None, :]), axis=1)
    assert np.all(dist < 1e-12)
    half_step = 1.0 / (2 ** n - 1) / 2
    assert np.all(np.abs(q - np.clip(w, -1, 1)) <= half_step + 1e-12)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 50), elements=finite), st.integers(1, 8),
       st.floats(0.1, 2.0))
def test_clip_quantize_idempotent(w, n, c):
    once = clip_weights(w, c)
    assert np.array_equal(clip_weights(once, c), once)
    q = quantize_weights(w, n)
    assert np.array_equal(quantize_weights(q, n), q)
