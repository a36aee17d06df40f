"""Independent reference machinery for checking the event-driven engine.

* ``euler_simulate`` integrates the CuBa LIF ODE system with explicit Euler
  and a subtractive reset. It never touches the closed-form solver.
* ``mu_reference`` evaluates the intra-neuron error double sum literally.
* ``fd_spike_time_grad`` takes central differences of spike times computed
  by the event-driven engine.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import EventBatch, LayerSpec, NetworkSpec, NeuronParams
from .forward import NeuronAccumulator, forward, solve_next_spike


@njit(cache=True)
def _euler_layer(ev_t, ev_i, W, tau_s, theta, cap, dt, t_end, times, counts):
    n_out = W.shape[1]
    tau = 2.0 * tau_s
    u = np.zeros(n_out)
    g = np.zeros(n_out)
    n_steps = int(math.ceil(t_end / dt - 1e-9))
    E = ev_t.shape[0]
    e = 0
    for m in range(n_steps):
        t0 = m * dt
        # inputs that arrived in (t0 - dt, t0] kick the synaptic current now
        while e < E and ev_t[e] <= t0:
            i = ev_i[e]
            for j in range(n_out):
                g[j] += W[i, j]
            e += 1
        for j in range(n_out):
            u_old = u[j]
            u_new = u_old + dt * (-u_old / tau + g[j])
            g[j] += dt * (-g[j] / tau_s)
            while u_new >= theta and counts[j] < cap:
                frac = (theta - u_old) / (u_new - u_old) if u_new != u_old else 1.0
                if frac < 0.0:
                    frac = 0.0
                times[j, counts[j]] = t0 + frac * dt
                counts[j] += 1
                # the reset lands at the interpolated crossing, so it has already
                # decayed for the rest of the step
                u_new -= theta * (1.0 - (1.0 - frac) * dt / tau)
                u_old = u_new
            u[j] = u_new


@njit(cache=True)
def _euler_membrane(ev_t, ev_w, tau_s, theta, cap, dt, n_steps, u_out):
    tau = 2.0 * tau_s
    u = 0.0
    g = 0.0
    e = 0
    fired = 0
    for m in range(n_steps):
        t0 = m * dt
        while e < ev_t.shape[0] and ev_t[e] <= t0:
            g += ev_w[e]
            e += 1
        u_new = u + dt * (-u / tau + g)
        g += dt * (-g / tau_s)
        while u_new >= theta and fired < cap:
            u_new -= theta
            fired += 1
        u = u_new
        u_out[m] = u


def euler_membrane(times, weights, p: NeuronParams, dt: float, t_end: float):
    """Membrane potential of one Euler-integrated neuron; ``u[m]`` is the value at ``(m+1)*dt``."""
    times = np.asarray(times, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    order = np.argsort(times, kind="stable")
    n_steps = int(math.ceil(t_end / dt - 1e-9))
    u = np.zeros(n_steps)
    _euler_membrane(times[order], weights[order], p.tau_s, p.theta, p.max_spikes, dt, n_steps, u)
    return dt * np.arange(1, n_steps + 1), u


def dense_equivalent(spec: LayerSpec) -> np.ndarray:
    """Expand a dense or conv2d layer into a full ``[n_in, n_out]`` weight matrix."""
    if spec.kind == "dense":
        return np.array(spec.weights, dtype=np.float64)
    K = spec.weights
    n_f, kh, kw, n_c = K.shape
    _, h, w = spec.in_shape
    _, oh, ow = spec.out_shape
    M = np.zeros((spec.n_in, spec.n_out))
    for f in range(n_f):
        for oy in range(oh):
            for ox in range(ow):
                j = (f * oh + oy) * ow + ox
                for dy in range(kh):
                    for dx in range(kw):
                        for ch in range(n_c):
                            M[(ch * h + oy + dy) * w + ox + dx, j] = K[f, dy, dx, ch]
    return M


def _pool_lists(spec: LayerSpec, trains: list) -> list:
    c, h, w = spec.in_shape
    out = []
    for ch in range(c):
        for oy in range(h // 2):
            for ox in range(w // 2):
                merged = []
                for dy in range(2):
                    for dx in range(2):
                        merged.extend(trains[(ch * h + 2 * oy + dy) * w + 2 * ox + dx])
                out.append(sorted(merged))
    return out


def euler_simulate(net, inputs, dt: float, t_end: float, params: NeuronParams = None) -> list:
    """Clock-driven simulation; returns per-layer lists of per-neuron spike-time lists.

    ``net`` is a NetworkSpec with an EventBatch input, or a single-neuron
    call with ``inputs=(times, weights)`` and explicit ``params``.
    """
    if dt > 1e-5:
        raise ValueError("oracle step must be at most 1e-5 s")
    if not isinstance(net, NetworkSpec):
        times, weights = (np.asarray(v, dtype=np.float64) for v in inputs)
        p = params
        out_t = np.zeros((1, p.max_spikes))
        counts = np.zeros(1, dtype=np.int64)
        order = np.argsort(times, kind="stable")
        _euler_layer(times[order], np.arange(len(times), dtype=np.int64)[order],
                     weights[:, None].copy(), p.tau_s, p.theta, p.max_spikes, dt, t_end, out_t, counts)
        return [[out_t[0, :counts[0]].tolist()]]

    trains = [[] for _ in range(inputs.size)]
    for n, t in zip(inputs.neurons.tolist(), inputs.times.tolist()):
        trains[n].append(t)
    result = []
    for spec in net.layers:
        if spec.kind == "pool2d":
            trains = _pool_lists(spec, trains)
        else:
            ev = sorted((t, i) for i, tr in enumerate(trains) for t in tr)
            ev_t = np.array([t for t, _ in ev], dtype=np.float64)
            ev_i = np.array([i for _, i in ev], dtype=np.int64)
            p = spec.params
            out_t = np.zeros((spec.n_out, p.max_spikes))
            counts = np.zeros(spec.n_out, dtype=np.int64)
            _euler_layer(ev_t, ev_i, dense_equivalent(spec), p.tau_s, p.theta, p.max_spikes, dt,
                         t_end, out_t, counts)
            trains = [out_t[j, :counts[j]].tolist() for j in range(spec.n_out)]
        result.append(trains)
    return result


def mu_reference(times, deltas, x_vals, p: NeuronParams) -> np.ndarray:
    """Intra-neuron errors by the literal O(n^2) double sum."""
    n = len(times)
    mu = np.zeros(n)
    for k in range(n):
        total = 0.0
        for z in range(k + 1, n):
            total += deltas[z] * p.theta / (p.tau * x_vals[z]) * math.exp(times[k] / p.tau)
        mu[k] = total
    return mu


@dataclass(frozen=True)
class FDResult:
    value: float
    valid: bool
    reason: str = ""


def _all_counts(trace) -> np.ndarray:
    return np.concatenate([layer.counts for layer in trace.layers])


def _spike_time(trace, target) -> float:
    layer, neuron, k = target
    return float(trace.layers[layer].times[neuron, k])


def _replay_neuron(in_t, in_w, p: NeuronParams, t_end: float, shift_k: int, shift: float) -> list:
    """Re-run one neuron with its k-th reset applied at ``t_k + shift``."""
    acc = NeuronAccumulator()
    spikes = []
    e, n = 0, len(in_t)
    t_lo = -math.inf
    while e < n and in_t[e] <= t_end:
        t_now = in_t[e]
        while e < n and in_t[e] == t_now:
            acc.ingest(t_now, in_w[e], p)
            e += 1
        t_lo = t_now
        t_hi = in_t[e] if e < n and in_t[e] <= t_end else t_end
        while len(spikes) < p.max_spikes:
            hit = solve_next_spike(acc, (t_lo, t_hi), p)
            if hit is None:
                break
            t = hit[0]
            spikes.append(t)
            acc.fire(t + shift if len(spikes) - 1 == shift_k else t, p)
            t_lo = t
    return spikes


def fd_spike_time_grad(net: NetworkSpec, inputs: EventBatch, t_end: float, target, wrt, h: float = 1e-7) -> FDResult:
    """Central-difference derivative of the spike ``target = (layer, neuron, k)``.

    ``wrt`` is one of
      ``("weight", layer, index)``  - a weight entry of a weighted layer,
      ``("input_time", event)``     - the time of one input event,
      ``("post_time", k)``          - the reset time of an earlier spike of the
                                       target neuron (dense layers only).
    """
    kind = wrt[0]
    if kind == "post_time":
        layer, neuron, z = target
        k = wrt[1]
        base = forward(net, inputs, t_end)
        lt = base.layers[layer]
        spec = net.layers[layer]
        w = np.asarray(spec.weights)[lt.in_neuron, neuron]
        ref = _replay_neuron(lt.in_times, w, spec.params, t_end, -1, 0.0)
        plus = _replay_neuron(lt.in_times, w, spec.params, t_end, k, h)
        minus = _replay_neuron(lt.in_times, w, spec.params, t_end, k, -h)
        if not (len(plus) == len(minus) == len(ref)) or z >= len(ref):
            return FDResult(math.nan, False, "probe invalid: count changed")
        return FDResult((plus[z] - minus[z]) / (2 * h), True)

    def run(delta):
        if kind == "weight":
            _, layer, index = wrt
            weights = [np.array(w) for w in net.weights()]
            pos = net.weighted.index(layer)
            weights[pos][index] += delta
            return forward(net.with_weights(weights), inputs, t_end)
        if kind == "input_time":
            times = np.array(inputs.times)
            times[wrt[1]] += delta
            return forward(net, EventBatch.from_unsorted(inputs.neurons, times, inputs.size), t_end)
        raise ValueError(f"unknown probe kind {kind!r}")

    base, plus, minus = run(0.0), run(h), run(-h)
    counts = _all_counts(base)
    if not (np.array_equal(counts, _all_counts(plus)) and np.array_equal(counts, _all_counts(minus))):
        return FDResult(math.nan, False, "probe invalid: count changed")
    if kind == "input_time":
        # a shifted input must not change the event order seen by the engine
        for tr in (plus, minus):
            if not np.array_equal(tr.inputs.neurons, base.inputs.neurons):
                return FDResult(math.nan, False, "probe invalid: event order changed")
    return FDResult((_spike_time(plus, target) - _spike_time(minus, target)) / (2 * h), True)
