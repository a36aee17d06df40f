"""Event-driven inference with closed-form spike times.

Between two consecutive input events the membrane of a neuron is

    u(t) = tau * (-a s^2 + b s),   s = exp(-t / tau)

with ``a = sum w exp(t_z / tau_s)`` and ``b = sum w exp(t_z / tau) - c sum
exp(t_hat / tau)`` (``c = theta / tau``, ``t_hat`` the neuron's own earlier
spikes). The threshold crossing is the larger root in ``s`` of
``-a s^2 + b s - c``, i.e. ``t = tau ln(2a / (b + x))`` with
``x = sqrt(b^2 - 4ac)``.

The layer kernels keep ``a`` and the net ``b`` per neuron, ingest events in
time order (simultaneous events together) and solve for spikes inside each
inter-event window, restarting the window after every emitted spike.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from numba import njit

from .core import (ConfigError, EventBatch, ForwardTrace, LayerSpec, LayerTrace, NetworkSpec,
                   NeuronParams, SpikeTrain)

EPS_DISC = 1e-12
MAX_HORIZON = 500.0


@njit(cache=True, nogil=True)
def _solve(a, b, c, tau, t_lo):
    """Earliest threshold crossing after ``t_lo``; returns (t, x) or (inf, 0)."""
    disc = b * b - 4.0 * a * c
    if disc <= EPS_DISC:
        return np.inf, 0.0
    x = math.sqrt(disc)
    den = b + x
    if den <= 0.0 or a <= 0.0:
        return np.inf, 0.0
    t = tau * math.log(2.0 * a / den)
    if t <= t_lo:
        return np.inf, 0.0
    return t, x


@njit(cache=True, nogil=True)
def _emit(j, t_lo, t_hi, hi_is_event, A, B, c, tau, cap, counts, times, a_out, b_out, x_out):
    """Emit every spike of neuron ``j`` inside ``(t_lo, t_hi]``.

    Returns (next pending crossing time, last change time, exact ties seen).
    """
    ties = 0
    while counts[j] < cap:
        t, x = _solve(A[j], B[j], c, tau, t_lo)
        if t > t_hi:
            return t, t_lo, ties
        k = counts[j]
        times[j, k] = t
        a_out[j, k] = A[j]
        b_out[j, k] = B[j]
        x_out[j, k] = x
        counts[j] = k + 1
        B[j] -= c * math.exp(t / tau)
        if hi_is_event and t == t_hi:
            ties += 1
        t_lo = t
    return np.inf, t_lo, ties


@njit(cache=True, nogil=True)
def _run_windows(n_out, ev_t, E, t_end, A, B, c, tau, cap, counts, times, a_out, b_out, x_out,
                 dirty, pend, last, e, t_now):
    """Solve all neurons for the window that starts at ``t_now``."""
    if e < E and ev_t[e] <= t_end:
        t_hi = ev_t[e]
        is_event = True
    else:
        t_hi = t_end
        is_event = False
    ties = 0
    for j in range(n_out):
        if counts[j] >= cap:
            continue
        if dirty[j] or pend[j] <= t_hi:
            pend[j], last[j], n = _emit(j, last[j], t_hi, is_event, A, B, c, tau, cap, counts,
                                        times, a_out, b_out, x_out)
            ties += n
            dirty[j] = False
    return ties


@njit(cache=True, nogil=True)
def _dense_forward(ev_t, ev_i, W, tau_s, theta, cap, t_end, times, a_out, b_out, x_out, counts):
    n_out = W.shape[1]
    tau = 2.0 * tau_s
    c = theta / tau
    A = np.zeros(n_out)
    B = np.zeros(n_out)
    pend = np.full(n_out, np.inf)
    last = np.full(n_out, -np.inf)
    dirty = np.zeros(n_out, dtype=np.bool_)
    E = ev_t.shape[0]
    e = 0
    ties = 0
    while e < E and ev_t[e] <= t_end:
        t_now = ev_t[e]
        while e < E and ev_t[e] == t_now:
            i = ev_i[e]
            ea = math.exp(t_now / tau_s)
            eb = math.exp(t_now / tau)
            for j in range(n_out):
                w = W[i, j]
                if w != 0.0 and counts[j] < cap:
                    A[j] += w * ea
                    B[j] += w * eb
                    dirty[j] = True
                    last[j] = t_now
            e += 1
        ties += _run_windows(n_out, ev_t, E, t_end, A, B, c, tau, cap, counts, times, a_out,
                             b_out, x_out, dirty, pend, last, e, t_now)
    return ties


@njit(cache=True, nogil=True)
def _conv_forward(ev_t, ev_i, K, in_h, in_w, tau_s, theta, cap, t_end, times, a_out, b_out,
                  x_out, counts):
    n_f, kh, kw, _ = K.shape
    out_h = in_h - kh + 1
    out_w = in_w - kw + 1
    n_out = n_f * out_h * out_w
    tau = 2.0 * tau_s
    c = theta / tau
    A = np.zeros(n_out)
    B = np.zeros(n_out)
    pend = np.full(n_out, np.inf)
    last = np.full(n_out, -np.inf)
    dirty = np.zeros(n_out, dtype=np.bool_)
    E = ev_t.shape[0]
    e = 0
    ties = 0
    while e < E and ev_t[e] <= t_end:
        t_now = ev_t[e]
        while e < E and ev_t[e] == t_now:
            u = ev_i[e]
            ch = u // (in_h * in_w)
            y = (u // in_w) % in_h
            x = u % in_w
            ea = math.exp(t_now / tau_s)
            eb = math.exp(t_now / tau)
            for f in range(n_f):
                for oy in range(max(0, y - kh + 1), min(y, out_h - 1) + 1):
                    for ox in range(max(0, x - kw + 1), min(x, out_w - 1) + 1):
                        j = (f * out_h + oy) * out_w + ox
                        w = K[f, y - oy, x - ox, ch]
                        if w != 0.0 and counts[j] < cap:
                            A[j] += w * ea
                            B[j] += w * eb
                            dirty[j] = True
                            last[j] = t_now
            e += 1
        ties += _run_windows(n_out, ev_t, E, t_end, A, B, c, tau, cap, counts, times, a_out,
                             b_out, x_out, dirty, pend, last, e, t_now)
    return ties


@njit(cache=True, nogil=True)
def _pool_forward(in_times, in_counts, channels, in_h, in_w, times, counts, origin_neuron,
                  origin_slot):
    out_h = in_h // 2
    out_w = in_w // 2
    for ch in range(channels):
        for oy in range(out_h):
            for ox in range(out_w):
                j = (ch * out_h + oy) * out_w + ox
                n = 0
                for dy in range(2):
                    for dx in range(2):
                        src = (ch * in_h + 2 * oy + dy) * in_w + 2 * ox + dx
                        for k in range(in_counts[src]):
                            t = in_times[src, k]
                            # insertion keeps equal times in source order
                            p = n
                            while p > 0 and times[j, p - 1] > t:
                                times[j, p] = times[j, p - 1]
                                origin_neuron[j, p] = origin_neuron[j, p - 1]
                                origin_slot[j, p] = origin_slot[j, p - 1]
                                p -= 1
                            times[j, p] = t
                            origin_neuron[j, p] = src
                            origin_slot[j, p] = k
                            n += 1
                counts[j] = n


def _check_horizon(t_end: float, params: NeuronParams):
    if t_end / params.tau_s > MAX_HORIZON:
        raise ConfigError(f"t_end / tau_s = {t_end / params.tau_s:.1f} exceeds {MAX_HORIZON}; "
                          "exp(t / tau_s) would lose precision")


def input_events(upstream: Union[EventBatch, LayerTrace]):
    """Merge an upstream source into one time-sorted stream of (t, neuron, slot)."""
    if isinstance(upstream, EventBatch):
        t = np.asarray(upstream.times, dtype=np.float64)
        i = np.asarray(upstream.neurons, dtype=np.int64)
        slot = np.zeros(len(i), dtype=np.int64)
        if len(i):
            seen = {}
            for e, n in enumerate(i.tolist()):
                slot[e] = seen.get(n, 0)
                seen[n] = slot[e] + 1
        return t, i, slot
    cap = upstream.times.shape[1]
    mask = np.arange(cap)[None, :] < upstream.counts[:, None]
    j, k = np.nonzero(mask)
    t = upstream.times[j, k]
    order = np.lexsort((k, j, t))
    return (np.ascontiguousarray(t[order]), np.ascontiguousarray(j[order]),
            np.ascontiguousarray(k[order]))


def _upstream_size(upstream) -> int:
    return upstream.size if isinstance(upstream, EventBatch) else upstream.n_neurons


def infer_layer(spec: LayerSpec, upstream: Union[EventBatch, LayerTrace], t_end: float) -> LayerTrace:
    if _upstream_size(upstream) != spec.n_in:
        raise ConfigError(f"{spec.kind} layer expects {spec.n_in} inputs, upstream has "
                          f"{_upstream_size(upstream)}")
    in_t, in_i, in_k = input_events(upstream)
    n = spec.n_out
    if spec.kind == "pool2d":
        if isinstance(upstream, EventBatch):
            raise ConfigError("pool2d cannot consume raw input events")
        cap = 4 * upstream.times.shape[1]
        times = np.full((n, cap), np.inf)
        counts = np.zeros(n, dtype=np.int64)
        on = np.full((n, cap), -1, dtype=np.int64)
        os_ = np.full((n, cap), -1, dtype=np.int64)
        c, h, w = spec.in_shape
        _pool_forward(upstream.times, upstream.counts, c, h, w, times, counts, on, os_)
        return LayerTrace(times, counts, None, None, None, in_t, in_i, in_k, on, os_)

    p = spec.params
    if spec.weights is None:
        raise ConfigError(f"{spec.kind} layer has no weights")
    _check_horizon(t_end, p)
    cap = p.max_spikes
    times = np.full((n, cap), np.inf)
    a = np.full((n, cap), np.nan)
    b = np.full((n, cap), np.nan)
    x = np.full((n, cap), np.nan)
    counts = np.zeros(n, dtype=np.int64)
    W = np.ascontiguousarray(spec.weights, dtype=np.float64)
    if spec.kind == "dense":
        ties = _dense_forward(in_t, in_i, W, p.tau_s, p.theta, cap, t_end, times, a, b, x, counts)
    else:
        _, h, w = spec.in_shape
        ties = _conv_forward(in_t, in_i, W, h, w, p.tau_s, p.theta, cap, t_end, times, a, b, x,
                             counts)
    return LayerTrace(times, counts, a, b, x, in_t, in_i, in_k, exact_ties=int(ties))


def forward(net: NetworkSpec, inputs: EventBatch, t_end: float) -> ForwardTrace:
    if inputs.size != net.input_size:
        raise ConfigError(f"input has {inputs.size} neurons, network expects {net.input_size}")
    layers = []
    upstream = inputs
    for spec in net.layers:
        upstream = infer_layer(spec, upstream, t_end)
        layers.append(upstream)
    return ForwardTrace(inputs, tuple(layers), float(t_end))


def forward_many(net: NetworkSpec, batches: Sequence[EventBatch], t_end: float, workers: int = 1) -> list:
    if workers <= 1:
        return [forward(net, b, t_end) for b in batches]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(lambda b: forward(net, b, t_end), batches))


@dataclass
class NeuronAccumulator:
    """Running coefficient sums of one neuron."""

    A: float = 0.0
    B_syn: float = 0.0
    B_reset: float = 0.0
    last_event_time: float = 0.0

    @property
    def a(self) -> float:
        return self.A

    @property
    def b(self) -> float:
        return self.B_syn - self.B_reset

    def ingest(self, t: float, w: float, p: NeuronParams):
        self.A += w * math.exp(t / p.tau_s)
        self.B_syn += w * math.exp(t / p.tau)
        self.last_event_time = t

    def fire(self, t: float, p: NeuronParams):
        self.B_reset += p.c * math.exp(t / p.tau)
        self.last_event_time = t


def solve_next_spike(acc: NeuronAccumulator, window, p: NeuronParams) -> Optional[tuple]:
    """Closed-form spike in ``(t_lo, t_hi]`` as ``(t, a, b, x)``, or None."""
    t_lo, t_hi = window
    a, b = acc.a, acc.b
    t, x = _solve(a, b, p.c, p.tau, t_lo)
    if t > t_hi:
        return None
    return t, a, b, x


def infer_neuron(times, weights, p: NeuronParams, t_end: float) -> SpikeTrain:
    """Spike train of a single neuron driven by a weighted, time-sorted event stream."""
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if times.shape != weights.shape:
        raise ValueError("times and weights must have equal length")
    if np.any(np.diff(times) < 0):
        raise ValueError("input stream must be sorted by time")
    _check_horizon(t_end, p)
    cap = p.max_spikes
    out_t = np.full((1, cap), np.inf)
    a = np.full((1, cap), np.nan)
    b = np.full((1, cap), np.nan)
    x = np.full((1, cap), np.nan)
    counts = np.zeros(1, dtype=np.int64)
    _dense_forward(times, np.arange(len(times), dtype=np.int64), weights[:, None].copy(),
                   p.tau_s, p.theta, cap, t_end, out_t, a, b, x, counts)
    n = counts[0]
    return SpikeTrain(out_t[0, :n], a[0, :n], b[0, :n], x[0, :n])
