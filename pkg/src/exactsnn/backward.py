"""Exact event-based backward pass.

Every spike ``t_k`` of a neuron carries an error ``delta_k = dL/dt_k`` made of
an inter-neuron part ``phi_k`` (through the synapses of downstream neurons)
and an intra-neuron part ``mu_k`` (through the resets of the neuron's own
later spikes). With ``x_k`` the discriminant root stored at emission,

    mu_k = (theta / tau) exp(t_k / tau) * sum_{z > k} delta_z / x_z

so a single descending sweep with a running sum gives all ``mu`` in O(n).
Spike-time sensitivities to the coefficients are

    f_k = dt_k/da_k = (tau / a_k) (1 + (c / x_k) exp(t_k / tau)),
    h_k = -dt_k/db_k = tau / x_k.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .core import ConfigError, ForwardTrace, LayerTrace, NetworkSpec, NeuronParams
from .objectives import TargetSpec, output_errors, ttfs_output_errors, spike_count_loss


@njit(cache=True, nogil=True)
def _mu_sweep(times, phi, x, c, tau, delta, mu):
    beta = 0.0
    for k in range(times.shape[0] - 1, -1, -1):
        mu[k] = c * math.exp(times[k] / tau) * beta
        delta[k] = phi[k] + mu[k]
        beta += delta[k] / x[k]


@njit(cache=True, nogil=True)
def _neuron_errors(times, a, x, counts, phi, tau_s, theta, delta, SF, SH):
    """Resolve deltas and suffix sums of delta*f and delta*h per neuron."""
    tau = 2.0 * tau_s
    c = theta / tau
    n_out = counts.shape[0]
    mu = np.zeros(times.shape[1])
    for j in range(n_out):
        n = counts[j]
        if n == 0:
            continue
        _mu_sweep(times[j, :n], phi[j, :n], x[j, :n], c, tau, delta[j, :n], mu[:n])
        sf = 0.0
        sh = 0.0
        for k in range(n - 1, -1, -1):
            et = math.exp(times[j, k] / tau)
            f = tau / a[j, k] * (1.0 + c / x[j, k] * et)
            h = tau / x[j, k]
            sf += delta[j, k] * f
            sh += delta[j, k] * h
            SF[j, k] = sf
            SH[j, k] = sh


@njit(cache=True, nogil=True)
def _dense_backward(ev_t, ev_i, W, times, counts, tau_s, SF, SH, grad, phi_in):
    tau = 2.0 * tau_s
    n_out = W.shape[1]
    ptr = np.zeros(n_out, dtype=np.int64)
    for e in range(ev_t.shape[0]):
        t = ev_t[e]
        i = ev_i[e]
        ea = math.exp(t / tau_s)
        eb = math.exp(t / tau)
        acc = 0.0
        for j in range(n_out):
            p = ptr[j]
            n = counts[j]
            # only post spikes strictly later than the input depend on it
            while p < n and times[j, p] <= t:
                p += 1
            ptr[j] = p
            if p == n:
                continue
            grad[i, j] += ea * SF[j, p] - eb * SH[j, p]
            acc += W[i, j] * (ea / tau_s * SF[j, p] - eb / tau * SH[j, p])
        phi_in[e] = acc


@njit(cache=True, nogil=True)
def _conv_backward(ev_t, ev_i, K, in_h, in_w, times, counts, tau_s, SF, SH, grad, phi_in):
    tau = 2.0 * tau_s
    n_f, kh, kw, _ = K.shape
    out_h = in_h - kh + 1
    out_w = in_w - kw + 1
    ptr = np.zeros(counts.shape[0], dtype=np.int64)
    for e in range(ev_t.shape[0]):
        t = ev_t[e]
        u = ev_i[e]
        ch = u // (in_h * in_w)
        y = (u // in_w) % in_h
        x = u % in_w
        ea = math.exp(t / tau_s)
        eb = math.exp(t / tau)
        acc = 0.0
        for f in range(n_f):
            for oy in range(max(0, y - kh + 1), min(y, out_h - 1) + 1):
                for ox in range(max(0, x - kw + 1), min(x, out_w - 1) + 1):
                    j = (f * out_h + oy) * out_w + ox
                    p = ptr[j]
                    n = counts[j]
                    while p < n and times[j, p] <= t:
                        p += 1
                    ptr[j] = p
                    if p == n:
                        continue
                    grad[f, y - oy, x - ox, ch] += ea * SF[j, p] - eb * SH[j, p]
                    acc += K[f, y - oy, x - ox, ch] * (ea / tau_s * SF[j, p] - eb / tau * SH[j, p])
        phi_in[e] = acc


def intra_neuron_errors(times, deltas, x_vals, p: NeuronParams) -> np.ndarray:
    """Intra-neuron errors ``mu`` from final per-spike deltas in O(n)."""
    times = np.ascontiguousarray(times, dtype=np.float64)
    deltas = np.ascontiguousarray(deltas, dtype=np.float64)
    x_vals = np.ascontiguousarray(x_vals, dtype=np.float64)
    n = len(times)
    mu = np.zeros(n)
    beta = 0.0
    alpha = p.c * np.exp(times / p.tau)
    for k in range(n - 1, -1, -1):
        mu[k] = alpha[k] * beta
        beta += deltas[k] / x_vals[k]
    return mu


def resolve_deltas(times, phi, x_vals, p: NeuronParams) -> tuple:
    """Interleaved descending sweep: returns (delta, mu) given inter-neuron errors."""
    times = np.ascontiguousarray(times, dtype=np.float64)
    phi = np.ascontiguousarray(phi, dtype=np.float64)
    x_vals = np.ascontiguousarray(x_vals, dtype=np.float64)
    delta = np.zeros(len(times))
    mu = np.zeros(len(times))
    _mu_sweep(times, phi, x_vals, p.c, p.tau, delta, mu)
    return delta, mu


def spike_sensitivities(train, p: NeuronParams) -> tuple:
    """Per-spike ``(f, h)``: derivatives of the spike time w.r.t. ``a`` and ``-b``."""
    t = np.asarray(train.times)
    x = np.asarray(train.x_vals)
    f = p.tau / np.asarray(train.a_coeffs) * (1.0 + p.c / x * np.exp(t / p.tau))
    h = p.tau / x
    return f, h


def inter_neuron_errors(down_trace: LayerTrace, down_weights: np.ndarray, down_params: NeuronParams,
                        down_deltas: np.ndarray, up_neuron: int, up_times) -> np.ndarray:
    """Inter-neuron errors of one upstream neuron's spikes from a dense downstream layer.

    Direct evaluation of the synaptic chain rule, O(n_up * n_down_spikes).
    """
    up_times = np.asarray(up_times, dtype=np.float64)
    phi = np.zeros(len(up_times))
    tau, tau_s = down_params.tau, down_params.tau_s
    for i in range(down_trace.n_neurons):
        n = int(down_trace.counts[i])
        if n == 0:
            continue
        f, h = spike_sensitivities(down_trace.train(i), down_params)
        tz = down_trace.times[i, :n]
        dz = down_deltas[i, :n]
        w = down_weights[up_neuron, i]
        for k, tk in enumerate(up_times):
            gate = tz > tk
            phi[k] += np.sum(gate * w * (f / tau_s * np.exp(tk / tau_s) - h / tau * np.exp(tk / tau)) * dz)
    return phi


class SpikeErrorSet(list):
    """Per-layer ``delta`` arrays shaped like the layer's padded spike times."""


class GradientSet(list):
    """Per weighted layer gradient tensors, aligned with ``NetworkSpec.weights()``."""

    def scaled(self, factor: float) -> "GradientSet":
        return GradientSet(g * factor for g in self)

    def norm(self) -> float:
        return math.sqrt(sum(float(np.sum(g * g)) for g in self))


def backprop(net: NetworkSpec, trace: ForwardTrace, injected: dict, input_errors: bool = False):
    """Propagate injected per-spike errors ``{layer: phi array}`` to all spikes and weights.

    Returns ``(SpikeErrorSet, GradientSet, input_phi)`` where ``input_phi`` is
    the error of every input event (``None`` unless ``input_errors``).
    """
    L = len(net.layers)
    if len(trace.layers) != L:
        raise ConfigError("trace does not belong to this network")
    phi = [np.zeros(lt.times.shape) for lt in trace.layers]
    for l, value in injected.items():
        phi[l] = phi[l] + np.asarray(value, dtype=np.float64)
    deltas = SpikeErrorSet([None] * L)
    grads = {}
    input_phi = None
    for l in range(L - 1, -1, -1):
        spec = net.layers[l]
        lt = trace.layers[l]
        need_in = l > 0 or input_errors
        if spec.kind == "pool2d":
            deltas[l] = phi[l]
            mask = np.arange(lt.times.shape[1])[None, :] < lt.counts[:, None]
            np.add.at(phi[l - 1], (lt.origin_neuron[mask], lt.origin_slot[mask]), phi[l][mask])
            continue
        p = spec.params
        delta = np.zeros(lt.times.shape)
        cap = lt.times.shape[1]
        SF = np.zeros((lt.n_neurons, cap + 1))
        SH = np.zeros((lt.n_neurons, cap + 1))
        _neuron_errors(lt.times, lt.a, lt.x, lt.counts, phi[l], p.tau_s, p.theta, delta, SF, SH)
        deltas[l] = delta
        grad = np.zeros(spec.weight_shape)
        phi_in = np.zeros(len(lt.in_times))
        W = np.ascontiguousarray(spec.weights, dtype=np.float64)
        if spec.kind == "dense":
            _dense_backward(lt.in_times, lt.in_neuron, W, lt.times, lt.counts, p.tau_s, SF, SH,
                            grad, phi_in)
        else:
            _, h, w = spec.in_shape
            _conv_backward(lt.in_times, lt.in_neuron, W, h, w, lt.times, lt.counts, p.tau_s, SF,
                           SH, grad, phi_in)
        grads[l] = grad
        if l > 0:
            np.add.at(phi[l - 1], (lt.in_neuron, lt.in_slot), phi_in)
        elif need_in:
            input_phi = phi_in
    return deltas, GradientSet(grads[l] for l in net.weighted), input_phi


def weight_gradients(net: NetworkSpec, trace: ForwardTrace, injected: dict) -> GradientSet:
    return backprop(net, trace, injected)[1]


MODES = ("spike_count", "ttfs_softmax")


def backward(net: NetworkSpec, trace: ForwardTrace, targets, mode: str = "spike_count",
             target_spec: Optional[TargetSpec] = None, error_sign: str = "target_minus_count"):
    """Loss and weight gradients for one sample.

    ``targets`` is the per-output count vector in spike-count mode and the
    class label in ttfs_softmax mode.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown loss mode {mode!r}")
    out = trace.output
    if mode == "ttfs_softmax":
        if any(layer.params.max_spikes != 1 for layer in net.layers if layer.params is not None):
            raise ConfigError("ttfs_softmax requires max_spikes = 1 in every layer")
        if target_spec is None:
            raise ConfigError("ttfs_softmax needs a TargetSpec")
        loss, phi = ttfs_output_errors(out, int(targets), target_spec)
    else:
        targets = np.asarray(targets)
        loss = spike_count_loss(out.counts, targets)
        phi = output_errors(out, targets, error_sign)
    _, grads, _ = backprop(net, trace, {len(net.layers) - 1: phi})
    return loss, grads


def batch_backward(net: NetworkSpec, traces: Sequence[ForwardTrace], targets: Sequence, mode: str,
                   target_spec: Optional[TargetSpec] = None, error_sign: str = "target_minus_count",
                   workers: int = 1):
    """Mean loss and batch-averaged gradients; reduction order is fixed."""
    def one(args):
        tr, y = args
        return backward(net, tr, y, mode, target_spec, error_sign)

    jobs = list(zip(traces, targets))
    if workers <= 1:
        results = [one(j) for j in jobs]
    else:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, jobs))
    n = len(results)
    total = GradientSet(np.zeros_like(g) for g in results[0][1])
    loss = 0.0
    for l_val, grads in results:
        loss += l_val
        for acc, g in zip(total, grads):
            acc += g
    return loss / n, total.scaled(1.0 / n)
