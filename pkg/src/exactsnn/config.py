"""Flat run configuration, presets and network construction."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .core import ConfigError, NetworkSpec, build_network
from .objectives import TargetSpec

MNIST_DIR = "data/mnist-1k"


@dataclass
class RunConfig:
    name: str = "run"
    arch: str = "800-10"
    input_shape: list = field(default_factory=lambda: [784])
    tau_s: float = 0.13
    thresholds: list = field(default_factory=lambda: [0.3, 1.0])
    max_spikes: list = field(default_factory=lambda: [30, 30])
    init_low: float = -1.0
    init_high: float = 1.0
    loss: str = "spike_count"
    count_true: int = 15
    count_false: int = 3
    softmax_tau: Optional[float] = None
    no_spike_time: Optional[float] = None
    error_sign: str = "target_minus_count"
    optimizer: str = "adam"
    lr: float = 0.003
    lr_decay: float = 1.0
    lr_decay_period: int = 10
    lr_min: float = 0.0
    batch_size: int = 50
    epochs: int = 10
    seed: int = 0
    t_sim: float = 0.2
    t_enc: float = 0.1
    train_images: Optional[str] = f"{MNIST_DIR}/train-images-idx3-ubyte.gz"
    train_labels: Optional[str] = f"{MNIST_DIR}/train-labels-idx1-ubyte.gz"
    test_images: Optional[str] = f"{MNIST_DIR}/test-images-idx3-ubyte.gz"
    test_labels: Optional[str] = f"{MNIST_DIR}/test-labels-idx1-ubyte.gz"
    train_events: Optional[str] = None
    test_events: Optional[str] = None
    n_train: Optional[int] = None
    n_test: Optional[int] = None
    n_classes: int = 10
    w_clip: Optional[float] = None
    quantize_bits: Optional[int] = None
    quantize_when: str = "eval"
    jitter_sigma: float = 0.0
    grad_clip_norm: Optional[float] = None
    workers: int = 1
    out_dir: Optional[str] = None

    def validate(self) -> "RunConfig":
        if self.loss not in ("spike_count", "ttfs_softmax"):
            raise ConfigError(f"loss: unknown value {self.loss!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer: unknown value {self.optimizer!r}")
        if self.quantize_when not in ("train", "eval"):
            raise ConfigError(f"quantize_when: unknown value {self.quantize_when!r}")
        if self.error_sign not in ("target_minus_count", "count_minus_target"):
            raise ConfigError(f"error_sign: unknown value {self.error_sign!r}")
        if self.loss == "ttfs_softmax" and any(m != 1 for m in self.max_spikes):
            raise ConfigError("max_spikes: ttfs_softmax needs 1 for every layer")
        if self.batch_size < 1:
            raise ConfigError("batch_size: must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers: must be >= 1")
        if self.jitter_sigma < 0:
            raise ConfigError("jitter_sigma: must be >= 0")
        if self.w_clip is not None and self.w_clip <= 0:
            raise ConfigError("w_clip: must be positive")
        if self.quantize_bits is not None and self.quantize_bits < 1:
            raise ConfigError("quantize_bits: must be >= 1")
        if not self.init_low < self.init_high:
            raise ConfigError("init_low: must be below init_high")
        self.network()
        self.targets()
        return self

    def network(self) -> NetworkSpec:
        return build_network(self.arch, self.input_shape, self.tau_s, self.thresholds,
                             self.max_spikes, (self.init_low, self.init_high))

    def targets(self) -> TargetSpec:
        return TargetSpec(
            mode=self.loss, count_true=self.count_true, count_false=self.count_false,
            softmax_tau=self.softmax_tau if self.softmax_tau is not None else 2.0 * self.tau_s,
            no_spike_time=self.no_spike_time if self.no_spike_time is not None else 2.0 * self.t_sim)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    def replace(self, **changes) -> "RunConfig":
        return from_dict({**self.to_dict(), **changes})


_KEYS = {f.name for f in fields(RunConfig)}


def from_dict(values: dict) -> RunConfig:
    unknown = sorted(set(values) - _KEYS)
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    return RunConfig(**values).validate()


def parse_override(text: str):
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if key not in _KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


PRESETS = {
    "mnist-800-10-unconstrained": dict(
        name="mnist-800-10-unconstrained", arch="800-10", input_shape=[784],
        thresholds=[0.2, 1.0], max_spikes=[30, 30], init_low=-1.0, init_high=1.0,
        loss="spike_count", count_true=15, count_false=3, lr=0.003, batch_size=50),
    "mnist-800-10-ttfs": dict(
        name="mnist-800-10-ttfs", arch="800-10", input_shape=[784],
        thresholds=[1.0, 5.0], max_spikes=[1, 1], init_low=0.0, init_high=1.0,
        loss="ttfs_softmax", softmax_tau=0.005, lr=0.01, batch_size=50),
    "mnist-conv-net3": dict(
        name="mnist-conv-net3", arch="15C5-P2-40C5-P2-300-10", input_shape=[1, 28, 28],
        thresholds=[0.15, 0.4, 0.4, 1.0], max_spikes=[1, 3, 10, 30], init_low=-1.0,
        init_high=1.0, loss="spike_count", count_true=30, count_false=3, lr=0.003,
        batch_size=20, epochs=100, lr_decay=0.5, lr_decay_period=10, lr_min=0.0001),
    "fmnist-400-400-10": dict(
        name="fmnist-400-400-10", arch="400-400-10", input_shape=[784],
        thresholds=[0.3, 0.3, 1.0], max_spikes=[5, 5, 20], loss="spike_count",
        count_true=15, count_false=3, lr=0.0005, batch_size=5, lr_decay=0.5,
        lr_decay_period=10, lr_min=0.0001, train_images=None, train_labels=None,
        test_images=None, test_labels=None),
    "emnist-800-47": dict(
        name="emnist-800-47", arch="800-47", input_shape=[784], n_classes=47,
        thresholds=[0.3, 1.0], max_spikes=[30, 30], loss="spike_count", count_true=15,
        count_false=3, lr=0.003, batch_size=50, train_images=None, train_labels=None,
        test_images=None, test_labels=None),
    "shd-128-20": dict(
        name="shd-128-20", arch="128-20", input_shape=[128], n_classes=20, tau_s=0.1,
        t_sim=1.0, thresholds=[0.3, 1.0], max_spikes=[30, 30], loss="spike_count",
        count_true=15, count_false=3, lr=0.001, batch_size=50, train_images=None,
        train_labels=None, test_images=None, test_labels=None,
        train_events="data/shd/train.events", test_events="data/shd/test.events"),
}


def load_config(source: str, overrides=()) -> RunConfig:
    """Resolve a preset name or JSON file, then apply ``key=value`` overrides."""
    if source in PRESETS:
        values = dict(PRESETS[source])
    else:
        path = Path(source)
        if not path.exists():
            raise ConfigError(f"{source!r} is neither a preset nor a config file")
        try:
            values = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{source}: invalid JSON ({exc})") from exc
        if not isinstance(values, dict):
            raise ConfigError(f"{source}: config must be a JSON object")
        if "preset" in values:
            preset = values.pop("preset")
            if preset not in PRESETS:
                raise ConfigError(f"unknown preset {preset!r}")
            values = {**PRESETS[preset], **values}
    for item in overrides:
        key, value = parse_override(item) if isinstance(item, str) else item
        values[key] = value
    return from_dict(values)
