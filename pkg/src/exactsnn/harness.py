"""Metrics and sweep protocols: accuracy, sparsity, latency, robustness."""
from __future__ import annotations

import csv
import io
import math
from typing import Optional, Sequence

import numpy as np

from .config import RunConfig
from .core import ConfigError, ForwardTrace, NetworkSpec
from .data import Dataset
from .forward import forward_many
from .objectives import predict
from .optim import quantize_weights

SWEEP_KINDS = ("threshold", "jitter", "clip", "quantize", "sim_time")

SWEEP_COLUMNS = ("kind", "value", "accuracy", "normalized_accuracy", "spike_count",
                 "active_neurons", "output_spike_count", "initial_output_spike_count",
                 "mean_output_error", "mean_weight_change")


def accuracy(net: NetworkSpec, dataset: Dataset, mode: str, t_end: float, workers: int = 1) -> float:
    traces = forward_many(net, [b for b, _ in dataset.samples], t_end, workers)
    preds = np.array([predict(tr, mode) for tr in traces])
    return float(np.mean(preds == dataset.labels)) if len(preds) else 0.0


def hidden_layers(net: NetworkSpec) -> list:
    """Indices of spiking layers other than the output layer (pooling excluded)."""
    last = len(net.layers) - 1
    return [i for i, layer in enumerate(net.layers) if layer.kind != "pool2d" and i != last]


def sparsity_metrics(net: NetworkSpec, traces: Sequence[ForwardTrace]) -> tuple:
    """Mean population spike count and mean active-neuron count over hidden layers."""
    if not traces:
        return 0.0, 0.0
    layers = hidden_layers(net)
    spikes = [sum(int(tr.layers[l].counts.sum()) for l in layers) for tr in traces]
    active = [sum(int(np.count_nonzero(tr.layers[l].counts)) for l in layers) for tr in traces]
    return float(np.mean(spikes)), float(np.mean(active))


def truncate_trace(trace: ForwardTrace, t: float) -> list:
    """Per-layer spike lists keeping only spikes at or before ``t``."""
    out = []
    for lt in trace.layers:
        out.append([[s for s in row if s <= t] for row in lt.spike_lists()])
    return out


def latency_curve(net: NetworkSpec, dataset: Dataset, grid: Sequence[float], mode: str,
                  t_end: float, workers: int = 1, traces=None) -> np.ndarray:
    """Fraction of samples whose prediction from spikes <= t equals the full-run prediction."""
    if traces is None:
        traces = forward_many(net, [b for b, _ in dataset.samples], t_end, workers)
    final = np.array([predict(tr, mode) for tr in traces])
    conf = []
    for t in grid:
        early = np.array([predict(tr, mode, t=t) for tr in traces])
        conf.append(float(np.mean(early == final)) if len(final) else 0.0)
    return np.array(conf)


def parse_grid(text: str) -> np.ndarray:
    """``start:stop:step`` (inclusive stop) or a comma list."""
    if ":" in text:
        start, stop, step = (float(v) for v in text.split(":"))
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return start + step * np.arange(n)
    return np.array([float(v) for v in text.split(",") if v])


def parse_sweep_values(kind: str, text: str) -> list:
    if kind not in SWEEP_KINDS:
        raise ConfigError(f"unknown sweep kind {kind!r}")
    values = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if kind == "quantize":
            values.append(None if tok == "float" else int(tok))
        else:
            values.append(float(tok))
    return values


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    return str(v)


def write_csv(rows: list, columns: Sequence[str], cfg: Optional[RunConfig] = None, path=None) -> str:
    buf = io.StringIO()
    if cfg is not None:
        buf.write(f"# config_sha256={cfg.digest()} config={cfg.to_json()}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt(row.get(c)) for c in columns])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(text)
    return text


def sweep(kind: str, values: Sequence, cfg: RunConfig, train_set: Dataset, test_set: Dataset,
          trained: Optional[NetworkSpec] = None) -> list:
    """One metrics row per swept value.

    threshold / jitter / clip sweeps retrain from the same seed; quantize
    retrains when ``cfg.quantize_when == "train"`` and otherwise quantises a
    trained net; sim_time re-evaluates a trained net at each duration.
    """
    from .training import evaluate, train

    if kind not in SWEEP_KINDS:
        raise ConfigError(f"unknown sweep kind {kind!r}")
    needs_base = kind == "sim_time" or (kind == "quantize" and cfg.quantize_when == "eval")
    if needs_base and trained is None:
        trained = train(cfg.replace(quantize_bits=None), train_set, test_set).net

    rows = []
    for v in values:
        row = {"kind": kind, "value": "float" if v is None else v}
        if kind in ("threshold", "jitter", "clip") or (kind == "quantize" and not needs_base):
            change = {"threshold": lambda: {"thresholds": cfg.thresholds[:-1] + [v]},
                      "jitter": lambda: {"jitter_sigma": v},
                      "clip": lambda: {"w_clip": v},
                      "quantize": lambda: {"quantize_bits": v}}[kind]()
            run_cfg = cfg.replace(**change)
            result = train(run_cfg, train_set, test_set)
            net = result.net
            if run_cfg.quantize_bits is not None:
                net = net.with_weights(quantize_weights(net.weights(), run_cfg.quantize_bits))
            res = evaluate(net, test_set, run_cfg.loss, run_cfg.t_sim, run_cfg.workers,
                           run_cfg.jitter_sigma, run_cfg.seed)
            row.update(result.first_batch)
        elif kind == "quantize":
            net = trained.with_weights(quantize_weights(trained.weights(), v))
            res = evaluate(net, test_set, cfg.loss, cfg.t_sim, cfg.workers)
        else:
            res = evaluate(trained, test_set, cfg.loss, float(v), cfg.workers)
        row.update(accuracy=res.accuracy, spike_count=res.spike_count,
                   active_neurons=res.active_neurons, output_spike_count=res.output_spike_count)
        rows.append(row)
    best = max((r["accuracy"] for r in rows), default=0.0)
    for r in rows:
        r["normalized_accuracy"] = r["accuracy"] / best if best > 0 else 0.0
    return rows
