import math

import numpy as np
import pytest

from exactsnn.core import EventBatch, NetworkSpec, NeuronParams, conv2d, dense, pool2d
from exactsnn.forward import forward, infer_neuron
from exactsnn.oracle import dense_equivalent, euler_membrane, euler_simulate, fd_spike_time_grad

from conftest import random_events

T_STAR = 0.2 * math.log(4 / (2 + math.sqrt(2)))


def test_no_input_no_spikes():
    p = NeuronParams(0.1, 0.05, 5)
    assert euler_simulate(None, ([], []), 1e-6, 0.2, params=p) == [[[]]]
    _, u = euler_membrane([], [], p, 1e-6, 0.2)
    assert np.all(u == 0)


def test_single_input_reference():
    p = NeuronParams(0.1, 0.05, 1)
    spikes = euler_simulate(None, ([0.0], [2.0]), 1e-7, 0.1, params=p)[0][0]
    assert len(spikes) == 1 and abs(spikes[0] - T_STAR) < 1e-5


def test_cap_one_under_strong_drive():
    p = NeuronParams(0.1, 0.05, 1)
    spikes = euler_simulate(None, (np.zeros(20), np.ones(20)), 1e-6, 1.0, params=p)[0][0]
    assert len(spikes) == 1


def test_step_size_guard():
    with pytest.raises(ValueError):
        euler_simulate(None, ([0.0], [1.0]), 1e-4, 0.1, params=NeuronParams(0.1, 0.05))


@pytest.mark.parametrize("inputs,p,t_end", [
    (([0.0], [2.0]), NeuronParams(0.1, 0.05, 1), 0.1),
    ((np.zeros(20), np.ones(20)), NeuronParams(0.1, 0.05, 30), 2.0),
    (([0.0, 0.01, 0.05], [0.8, 0.6, 0.9]), NeuronParams(0.1, 0.05, 30), 0.3),
])
def test_first_order_convergence(inputs, p, t_end):
    exact = infer_neuron(*inputs, p, t_end).times
    errs = []
    for dt in (1e-5, 5e-6, 2.5e-6):
        got = np.array(euler_simulate(None, inputs, dt, t_end, params=p)[0][0])
        assert len(got) == len(exact)
        errs.append(np.max(np.abs(got - exact)))
    for coarse, fine in zip(errs, errs[1:]):
        assert coarse / fine >= 1.99


def test_dense_equivalent_of_conv(rng):
    spec = conv2d((2, 4, 4), 3, 3, NeuronParams(0.1, 1.0), weights=rng.normal(size=(3, 3, 3, 2)))
    M = dense_equivalent(spec)
    x = rng.normal(size=(2, 4, 4))
    direct = np.zeros((3, 2, 2))
    for f in range(3):
        for oy in range(2):
            for ox in range(2):
                patch = x[:, oy:oy + 3, ox:ox + 3]
                direct[f, oy, ox] = np.sum(patch * np.transpose(spec.weights[f], (2, 0, 1)))
    np.testing.assert_allclose(x.reshape(-1) @ M, direct.reshape(-1), rtol=1e-12)


def test_network_with_pooling_matches(rng):
    p1, p2 = NeuronParams(0.1, 0.05, 3), NeuronParams(0.1, 0.1, 5)
    net = NetworkSpec((conv2d((1, 6, 6), 2, 3, p1, weights=rng.uniform(-0.5, 1, (2, 3, 3, 1))),
                       pool2d((2, 4, 4)), dense(8, 3, p2, weights=rng.uniform(-0.5, 1, (8, 3)))))
    ev = random_events(rng, 36, 40, 0.1)
    tr = forward(net, ev, 0.3)
    ref = euler_simulate(net, ev, 1e-6, 0.3)
    assert tr.layers[0].counts.sum() > 0
    for lt, lref in zip(tr.layers, ref):
        for j, want in enumerate(lref):
            got = lt.times[j, :lt.counts[j]]
            assert len(got) == len(want)
            if len(got):
                assert np.max(np.abs(got - np.array(want))) < 1e-4


def test_fd_reports_invalid_probe():
    # weight right at the firing boundary: a tiny nudge toggles the spike
    p = NeuronParams(0.1, 0.05, 1)
    w_crit = 4 * p.c  # single input at t=0: disc = w^2 - 4 w c vanishes at w = 4c
    net = NetworkSpec((dense(1, 1, p, weights=np.array([[w_crit + 1e-9]])),))
    ev = EventBatch.from_unsorted([0], [0.0], 1)
    assert forward(net, ev, 0.3).layers[0].counts[0] == 1
    r = fd_spike_time_grad(net, ev, 0.3, (0, 0, 0), ("weight", 0, (0, 0)), h=1e-7)
    assert not r.valid and "count changed" in r.reason
