"""Domain types, response kernels and weight initialisation.

All times are in seconds. The membrane time constant is always twice the
synaptic one; this is what turns the threshold-crossing condition into a
quadratic in ``exp(-t / tau)``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

LAYER_KINDS = ("dense", "conv2d", "pool2d")


class ConfigError(ValueError):
    """Invalid network, layer or run configuration."""


@dataclass(frozen=True)
class NeuronParams:
    tau_s: float
    theta: float
    max_spikes: int = 1
    tau: float = field(init=False)

    def __post_init__(self):
        if not self.tau_s > 0:
            raise ConfigError(f"tau_s must be positive, got {self.tau_s}")
        if not self.theta > 0:
            raise ConfigError(f"theta must be positive, got {self.theta}")
        if int(self.max_spikes) != self.max_spikes or self.max_spikes < 1:
            raise ConfigError(f"max_spikes must be a positive integer, got {self.max_spikes}")
        object.__setattr__(self, "max_spikes", int(self.max_spikes))
        object.__setattr__(self, "tau", 2.0 * float(self.tau_s))

    @property
    def c(self) -> float:
        # recomputed on every access so threshold changes are always picked up
        return self.theta / self.tau


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_shape: tuple
    out_shape: tuple
    params: Optional[NeuronParams] = None
    init: Optional[tuple] = None
    weights: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        object.__setattr__(self, "in_shape", tuple(int(s) for s in self.in_shape))
        object.__setattr__(self, "out_shape", tuple(int(s) for s in self.out_shape))
        if self.kind == "pool2d":
            if self.params is not None or self.weights is not None:
                raise ConfigError("pool2d layers carry no weights and no neuron parameters")
            c, h, w = self.in_shape
            if self.out_shape != (c, h // 2, w // 2):
                raise ConfigError(f"pool2d output shape {self.out_shape} does not match input {self.in_shape}")
            return
        if self.params is None:
            raise ConfigError(f"{self.kind} layer needs NeuronParams")
        if self.init is not None:
            a, b = self.init
            if not a < b:
                raise ConfigError(f"uniform init needs a < b, got ({a}, {b})")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            if w.shape != self.weight_shape:
                raise ConfigError(f"{self.kind} weights have shape {w.shape}, expected {self.weight_shape}")
            w = w.copy()
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    @property
    def n_in(self) -> int:
        return int(np.prod(self.in_shape))

    @property
    def n_out(self) -> int:
        return int(np.prod(self.out_shape))

    @property
    def has_weights(self) -> bool:
        return self.kind != "pool2d"

    @property
    def weight_shape(self) -> Optional[tuple]:
        if self.kind == "dense":
            return (self.n_in, self.n_out)
        if self.kind == "conv2d":
            filters, oh, ow = self.out_shape
            channels, h, w = self.in_shape
            return (filters, h - oh + 1, w - ow + 1, channels)
        return None

    def with_weights(self, weights) -> "LayerSpec":
        return replace(self, weights=weights)

    def with_params(self, **changes) -> "LayerSpec":
        p = self.params
        fields = {"tau_s": p.tau_s, "theta": p.theta, "max_spikes": p.max_spikes}
        fields.update(changes)
        return replace(self, params=NeuronParams(**fields))


def dense(n_in: int, n_out: int, params: NeuronParams, init=(-1.0, 1.0), weights=None) -> LayerSpec:
    return LayerSpec("dense", (n_in,), (n_out,), params, init, weights)


def conv2d(in_shape, filters: int, kernel: int, params: NeuronParams, init=(-1.0, 1.0), weights=None) -> LayerSpec:
    c, h, w = in_shape
    if kernel > h or kernel > w:
        raise ConfigError(f"kernel {kernel} larger than input {in_shape}")
    return LayerSpec("conv2d", (c, h, w), (filters, h - kernel + 1, w - kernel + 1), params, init, weights)


def pool2d(in_shape) -> LayerSpec:
    c, h, w = in_shape
    return LayerSpec("pool2d", (c, h, w), (c, h // 2, w // 2))


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise ConfigError("network has no layers")
        if layers[-1].kind == "pool2d":
            raise ConfigError("the output layer must be a spiking layer")
        for up, down in zip(layers, layers[1:]):
            if up.n_out != down.n_in:
                raise ConfigError(f"layer size mismatch: {up.out_shape} feeds {down.in_shape}")
            if down.kind != "dense" and up.out_shape != down.in_shape:
                raise ConfigError(f"{down.kind} expects input {down.in_shape}, upstream gives {up.out_shape}")

    @property
    def input_size(self) -> int:
        return self.layers[0].n_in

    @property
    def output_size(self) -> int:
        return self.layers[-1].n_out

    @property
    def weighted(self) -> list:
        return [i for i, layer in enumerate(self.layers) if layer.has_weights]

    def weights(self) -> list:
        return [layer.weights for layer in self.layers if layer.has_weights]

    def with_weights(self, weights: Sequence) -> "NetworkSpec":
        it = iter(weights)
        return NetworkSpec(tuple(layer.with_weights(next(it)) if layer.has_weights else layer
                                 for layer in self.layers))

    def with_output_threshold(self, theta: float) -> "NetworkSpec":
        layers = list(self.layers)
        layers[-1] = layers[-1].with_params(theta=theta)
        return NetworkSpec(tuple(layers))

    def initialized(self, seed: int) -> "NetworkSpec":
        seeds = np.random.SeedSequence(seed).spawn(len(self.layers))
        return NetworkSpec(tuple(
            layer.with_weights(init_weights(layer, seeds[i])) if layer.has_weights else layer
            for i, layer in enumerate(self.layers)))


_CONV = re.compile(r"^(\d+)C(\d+)$")
_POOL = re.compile(r"^P2$")


def build_network(arch: str, input_shape, tau_s: float, thresholds: Sequence[float],
                  max_spikes: Sequence[int], init=(-1.0, 1.0)) -> NetworkSpec:
    """Build an uninitialised network from an architecture string.

    ``arch`` lists the layers after the input, e.g. ``"800-10"`` or
    ``"15C5-P2-40C5-P2-300-10"``. ``thresholds`` and ``max_spikes`` give one
    value per spiking (non-pooling) layer.
    """
    tokens = [t for t in arch.split("-") if t]
    n_spiking = sum(1 for t in tokens if not _POOL.match(t))
    if len(thresholds) != n_spiking or len(max_spikes) != n_spiking:
        raise ConfigError(f"architecture {arch!r} has {n_spiking} spiking layers; got "
                          f"{len(thresholds)} thresholds and {len(max_spikes)} spike caps")
    shape = tuple(int(s) for s in input_shape)
    layers = []
    k = 0
    for token in tokens:
        if _POOL.match(token):
            if len(shape) != 3:
                raise ConfigError("pooling needs a (channels, height, width) input")
            layers.append(pool2d(shape))
        else:
            params = NeuronParams(tau_s=tau_s, theta=thresholds[k], max_spikes=max_spikes[k])
            k += 1
            m = _CONV.match(token)
            if m:
                if len(shape) != 3:
                    raise ConfigError("convolution needs a (channels, height, width) input")
                layers.append(conv2d(shape, int(m.group(1)), int(m.group(2)), params, init))
            elif token.isdigit():
                layers.append(dense(int(np.prod(shape)), int(token), params, init))
            else:
                raise ConfigError(f"cannot parse layer token {token!r}")
        shape = layers[-1].out_shape
    return NetworkSpec(tuple(layers))


def init_weights(spec: LayerSpec, seed) -> np.ndarray:
    """Draw i.i.d. weights uniformly on ``[a, b)`` for a weighted layer."""
    if not spec.has_weights:
        raise ConfigError("pool2d layers have no weights")
    if spec.init is None:
        raise ConfigError("layer has no init distribution")
    a, b = spec.init
    if not a < b:
        raise ConfigError(f"uniform init needs a < b, got ({a}, {b})")
    rng = np.random.default_rng(seed)
    return rng.uniform(a, b, size=spec.weight_shape)


def psp_kernel(t, p: NeuronParams):
    """Membrane response to one unit-weight input spike arriving at time 0."""
    t = np.asarray(t, dtype=np.float64)
    scale = p.tau * p.tau_s / (p.tau - p.tau_s)
    out = scale * (np.exp(-t / p.tau) - np.exp(-t / p.tau_s))
    return np.where(t > 0, out, 0.0)[()]


def refractory_kernel(t, p: NeuronParams):
    """Potential removed by the soft reset of a spike emitted at time 0."""
    t = np.asarray(t, dtype=np.float64)
    return np.where(t > 0, p.theta * np.exp(-t / p.tau), 0.0)[()]


@dataclass(frozen=True)
class SpikeTrain:
    times: np.ndarray
    a_coeffs: np.ndarray
    b_coeffs: np.ndarray
    x_vals: np.ndarray

    def __len__(self):
        return len(self.times)


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EventBatch:
    """Input spikes of one sample, sorted by time then neuron index."""

    neurons: np.ndarray
    times: np.ndarray
    size: int

    def __post_init__(self):
        neurons = _frozen(self.neurons, np.int64).reshape(-1)
        times = _frozen(self.times, np.float64).reshape(-1)
        if neurons.shape != times.shape:
            raise ValueError("neurons and times must have the same length")
        if len(times):
            if neurons.min() < 0 or neurons.max() >= self.size:
                raise ValueError(f"neuron index out of range for input size {self.size}")
            if not np.all(np.isfinite(times)) or times.min() < 0:
                raise ValueError("event times must be finite and non-negative")
            dt = np.diff(times)
            if np.any(dt < 0) or np.any((dt == 0) & (np.diff(neurons) < 0)):
                raise ValueError("events must be sorted by time, ties by neuron index")
        object.__setattr__(self, "neurons", neurons)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "size", int(self.size))

    @classmethod
    def from_unsorted(cls, neurons, times, size: int) -> "EventBatch":
        neurons = np.asarray(neurons, dtype=np.int64).reshape(-1)
        times = np.asarray(times, dtype=np.float64).reshape(-1)
        order = np.lexsort((neurons, times))
        return cls(neurons[order], times[order], size)

    def __len__(self):
        return len(self.times)

    def __eq__(self, other):
        return (isinstance(other, EventBatch) and self.size == other.size
                and np.array_equal(self.neurons, other.neurons)
                and np.array_equal(self.times, other.times))

    def truncated(self, t: float) -> "EventBatch":
        keep = self.times <= t
        return EventBatch(self.neurons[keep], self.times[keep], self.size)


@dataclass(frozen=True, eq=False)
class LayerTrace:
    """Spikes of one layer for one sample, padded to the layer's spike cap.

    ``times[j, k]`` is the k-th spike of neuron j (``inf`` past ``counts[j]``);
    ``a``, ``b``, ``x`` hold the solver state captured at each emission.
    ``in_*`` are the merged, time-sorted input events the layer consumed,
    each tagged with the upstream neuron and spike slot it came from. Pooling
    layers store the origin of every merged spike instead of solver state.
    """

    times: np.ndarray
    counts: np.ndarray
    a: Optional[np.ndarray]
    b: Optional[np.ndarray]
    x: Optional[np.ndarray]
    in_times: np.ndarray
    in_neuron: np.ndarray
    in_slot: np.ndarray
    origin_neuron: Optional[np.ndarray] = None
    origin_slot: Optional[np.ndarray] = None
    exact_ties: int = 0

    def __post_init__(self):
        for name in ("times", "counts", "a", "b", "x", "in_times", "in_neuron", "in_slot",
                     "origin_neuron", "origin_slot"):
            arr = getattr(self, name)
            if arr is not None:
                arr.setflags(write=False)

    @property
    def n_neurons(self) -> int:
        return len(self.counts)

    def train(self, j: int) -> SpikeTrain:
        n = int(self.counts[j])
        nan = np.full(n, np.nan)
        return SpikeTrain(
            self.times[j, :n],
            self.a[j, :n] if self.a is not None else nan,
            self.b[j, :n] if self.b is not None else nan,
            self.x[j, :n] if self.x is not None else nan,
        )

    def spike_lists(self) -> list:
        return [self.times[j, :self.counts[j]].tolist() for j in range(self.n_neurons)]


@dataclass(frozen=True, eq=False)
class ForwardTrace:
    inputs: EventBatch
    layers: tuple
    t_end: float

    @property
    def output(self) -> LayerTrace:
        return self.layers[-1]
