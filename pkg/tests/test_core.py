import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from exactsnn.core import (ConfigError, EventBatch, LayerSpec, NetworkSpec, NeuronParams,
                           build_network, conv2d, dense, init_weights, pool2d, psp_kernel,
                           refractory_kernel)


def test_tau_is_twice_tau_s():
    p = NeuronParams(0.13, 1.0, 30)
    assert p.tau == 2 * 0.13
    assert p.c == pytest.approx(1.0 / 0.26)


@pytest.mark.parametrize("kw", [dict(tau_s=0, theta=1), dict(tau_s=0.1, theta=0),
                                dict(tau_s=0.1, theta=1, max_spikes=0),
                                dict(tau_s=-1, theta=1)])
def test_bad_params_rejected(kw):
    with pytest.raises(ConfigError):
        NeuronParams(**kw)


def test_tau_cannot_be_passed():
    with pytest.raises(TypeError):
        NeuronParams(0.1, 1.0, 1, tau=0.3)


def test_c_follows_threshold_changes():
    p = NeuronParams(0.1, 0.5)
    q = NeuronParams(0.1, 1.5)
    assert q.c == 3 * p.c


def test_psp_examples():
    p = NeuronParams(0.1, 1.0)
    assert psp_kernel(-0.01, p) == 0
    assert psp_kernel(0.0, p) == 0
    assert psp_kernel(0.2 * math.log(2), p) == pytest.approx(0.05, rel=1e-12)


def test_psp_peak_location():
    p = NeuronParams(0.1, 1.0)
    t = np.linspace(0, 1, 200001)
    eps = psp_kernel(t, p)
    assert t[np.argmax(eps)] == pytest.approx(p.tau * math.log(2), abs=1e-5)


def test_refractory_examples():
    assert refractory_kernel(-1.0, NeuronParams(0.1, 1.0)) == 0
    assert refractory_kernel(1e-15, NeuronParams(0.1, 1.0)) == pytest.approx(1.0)
    p = NeuronParams(0.1, 0.05)
    assert refractory_kernel(p.tau, p) == pytest.approx(0.0183940, abs=5e-8)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 1.0))
def test_psp_equals_two_exponential_form(tau_s):
    p = NeuronParams(tau_s, 1.0)
    tau = p.tau
    t = np.linspace(1e-4, 30 * tau, 500)
    two_exp = tau * tau_s / (tau - tau_s) * (np.exp(-t / tau) - np.exp(-t / tau_s))
    s = np.exp(-t / tau)
    closed = tau * (s - s * s)
    np.testing.assert_allclose(psp_kernel(t, p), two_exp, rtol=1e-12)
    np.testing.assert_allclose(closed, two_exp, rtol=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 1.0))
def test_psp_shape(tau_s):
    p = NeuronParams(tau_s, 1.0)
    t = np.linspace(0, 30 * p.tau, 20001)
    eps = psp_kernel(t, p)
    peak = p.tau / 4
    assert eps.min() >= 0
    assert eps.max() == pytest.approx(peak, rel=1e-6)
    assert psp_kernel(30 * p.tau, p) < 1e-9 * peak
    # unimodal: rises then falls
    i = int(np.argmax(eps))
    assert np.all(np.diff(eps[:i + 1]) >= 0) and np.all(np.diff(eps[i:]) <= 0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 1.0), st.floats(0.01, 5.0))
def test_refractory_decreasing(tau_s, theta):
    p = NeuronParams(tau_s, theta)
    t = np.linspace(1e-9, 10 * p.tau, 1000)
    eta = refractory_kernel(t, p)
    assert np.all(np.diff(eta) < 0)
    assert eta[0] == pytest.approx(theta, rel=1e-6)


@pytest.mark.parametrize("low,high", [(0.0, 1.0), (-1.0, 1.0)])
def test_init_weights_range(low, high):
    spec = dense(50, 40, NeuronParams(0.1, 1.0), init=(low, high))
    for seed in range(5):
        w = init_weights(spec, seed)
        assert w.shape == (50, 40)
        assert w.min() >= low and w.max() < high


def test_init_weights_deterministic():
    spec = conv2d((1, 8, 8), 3, 5, NeuronParams(0.1, 1.0))
    assert np.array_equal(init_weights(spec, 7), init_weights(spec, 7))
    assert not np.array_equal(init_weights(spec, 7), init_weights(spec, 8))


def test_layer_validation():
    p = NeuronParams(0.1, 1.0)
    with pytest.raises(ConfigError):
        dense(3, 2, p, weights=np.zeros((2, 3)))
    with pytest.raises(ConfigError):
        LayerSpec("pool2d", (1, 4, 4), (1, 2, 2), params=p)
    with pytest.raises(ConfigError):
        LayerSpec("bogus", (3,), (2,), params=p)
    with pytest.raises(ConfigError):
        NetworkSpec((dense(3, 2, p), dense(3, 2, p)))


def test_build_network_shapes():
    net = build_network("15C5-P2-40C5-P2-300-10", [1, 28, 28], 0.13, [0.1, 0.2, 0.3, 1.0],
                        [1, 3, 10, 30])
    kinds = [layer.kind for layer in net.layers]
    assert kinds == ["conv2d", "pool2d", "conv2d", "pool2d", "dense", "dense"]
    assert net.layers[0].out_shape == (15, 24, 24)
    assert net.layers[1].out_shape == (15, 12, 12)
    assert net.layers[2].weight_shape == (40, 5, 5, 15)
    assert net.layers[3].out_shape == (40, 4, 4)
    assert net.layers[4].weight_shape == (640, 300)
    assert [net.layers[i].params.max_spikes for i in net.weighted] == [1, 3, 10, 30]
    assert net.output_size == 10


def test_build_network_errors():
    with pytest.raises(ConfigError):
        build_network("800-10", [784], 0.13, [0.3], [30, 30])
    with pytest.raises(ConfigError):
        build_network("800-P2", [784], 0.13, [0.3], [30])


def test_initialized_is_deterministic():
    net = build_network("20-5", [10], 0.1, [0.3, 1.0], [3, 3])
    a, b = net.initialized(3), net.initialized(3)
    for x, y in zip(a.weights(), b.weights()):
        assert np.array_equal(x, y)


def test_event_batch_validation():
    with pytest.raises(ValueError):
        EventBatch(np.array([0, 1]), np.array([0.2, 0.1]), 2)
    with pytest.raises(ValueError):
        EventBatch(np.array([2]), np.array([0.1]), 2)
    with pytest.raises(ValueError):
        EventBatch(np.array([0]), np.array([-0.1]), 2)
    ev = EventBatch.from_unsorted([1, 0, 1], [0.3, 0.1, 0.2], 2)
    assert ev.times.tolist() == [0.1, 0.2, 0.3]
    assert ev.neurons.tolist() == [0, 1, 1]
    assert ev.truncated(0.2) == EventBatch.from_unsorted([0, 1], [0.1, 0.2], 2)


def test_pool_layer_has_no_weights():
    layer = pool2d((2, 4, 4))
    assert layer.out_shape == (2, 2, 2)
    assert not layer.has_weights and layer.params is None
