"""Losses, output error injection and class decoding."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ConfigError


@dataclass(frozen=True)
class TargetSpec:
    mode: str = "spike_count"
    count_true: int = 15
    count_false: int = 3
    softmax_tau: float = 0.26
    no_spike_time: float = 0.4

    def __post_init__(self):
        if self.mode not in ("spike_count", "ttfs_softmax"):
            raise ConfigError(f"unknown target mode {self.mode!r}")
        if self.mode == "spike_count" and not self.count_true > self.count_false >= 0:
            raise ConfigError("need count_true > count_false >= 0")
        if not self.softmax_tau > 0:
            raise ConfigError("softmax_tau must be positive")

    def count_targets(self, label: int, n_classes: int) -> np.ndarray:
        y = np.full(n_classes, self.count_false, dtype=np.int64)
        y[label] = self.count_true
        return y


def spike_count_loss(counts, targets) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if counts.shape != targets.shape:
        raise ValueError("counts and targets differ in length")
    return 0.5 * float(np.sum((targets - counts) ** 2))


def output_errors(out_trace, targets, error_sign: str = "target_minus_count") -> np.ndarray:
    """Per-spike output errors: every spike of neuron j gets ``y_j - n_j``.

    ``error_sign="count_minus_target"`` flips this to ``n_j - y_j``.
    """
    counts = out_trace.counts
    targets = np.asarray(targets)
    if len(targets) != len(counts):
        raise ValueError(f"{len(targets)} targets for {len(counts)} output neurons")
    per_neuron = (targets - counts).astype(np.float64)
    if error_sign == "count_minus_target":
        per_neuron = -per_neuron
    elif error_sign != "target_minus_count":
        raise ConfigError(f"unknown error_sign {error_sign!r}")
    cap = out_trace.times.shape[1]
    mask = np.arange(cap)[None, :] < counts[:, None]
    return np.where(mask, per_neuron[:, None], 0.0)


def first_spikes(out_trace) -> list:
    return [float(out_trace.times[j, 0]) if out_trace.counts[j] > 0 else None
            for j in range(out_trace.n_neurons)]


def ttfs_softmax_loss(first, label: int, spec: TargetSpec):
    """Cross-entropy of a softmax over negative first-spike times.

    Returns ``(loss, dloss/dt_j)``; silent neurons sit at ``no_spike_time``.
    """
    n = len(first)
    if not 0 <= label < n:
        raise ConfigError(f"label {label} outside 0..{n - 1}")
    t = np.array([spec.no_spike_time if v is None else v for v in first], dtype=np.float64)
    z = -t / spec.softmax_tau
    z -= z.max()
    p = np.exp(z)
    p /= p.sum()
    loss = -float(np.log(p[label]))
    onehot = np.zeros(n)
    onehot[label] = 1.0
    return loss, (onehot - p) / spec.softmax_tau


def ttfs_output_errors(out_trace, label: int, spec: TargetSpec):
    loss, dt = ttfs_softmax_loss(first_spikes(out_trace), label, spec)
    phi = np.zeros(out_trace.times.shape)
    fired = out_trace.counts > 0
    phi[fired, 0] = dt[fired]
    return loss, phi


def predict_counts(counts) -> int:
    # argmax already breaks ties towards the lowest index
    return int(np.argmax(np.asarray(counts)))


def predict_first(first) -> int:
    best, best_t = 0, None
    for j, t in enumerate(first):
        if t is not None and (best_t is None or t < best_t):
            best, best_t = j, t
    return best


def predict(trace, mode: str = "spike_count", t: Optional[float] = None) -> int:
    """Class decision from the output layer, optionally using only spikes <= t."""
    out = trace.output
    times = out.times
    if t is None:
        counts = out.counts
    else:
        counts = np.sum(times <= t, axis=1)
    if mode == "spike_count":
        return predict_counts(counts)
    if mode == "ttfs_softmax":
        return predict_first([float(times[j, 0]) if counts[j] > 0 else None
                              for j in range(len(counts))])
    raise ConfigError(f"unknown decode mode {mode!r}")
