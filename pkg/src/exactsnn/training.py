"""Mini-batch training and evaluation of event-driven networks."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .backward import GradientSet, batch_backward
from .config import RunConfig
from .core import NetworkSpec
from .data import Dataset, idx_dataset, iter_batches, jitter, load_event_file
from .forward import forward_many
from .objectives import predict
from .optim import OptimState, adam_step, clip_weights, lr_schedule, quantize_weights, sgd_step

log = logging.getLogger(__name__)

# jitter stream used at evaluation, disjoint from the per-epoch training streams
EVAL_STREAM = 1_000_000


def load_datasets(cfg: RunConfig):
    conv = len(cfg.input_shape) == 3

    def one(images, labels, events, n):
        if events:
            return load_event_file(events).subset(n)
        if images and labels:
            return idx_dataset(images, labels, cfg.t_enc, n, cfg.n_classes, channels_first=conv)
        return None

    return (one(cfg.train_images, cfg.train_labels, cfg.train_events, cfg.n_train),
            one(cfg.test_images, cfg.test_labels, cfg.test_events, cfg.n_test))


def sample_seed(seed: int, epoch: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, epoch, index])


def jittered(dataset: Dataset, sigma: float, seed: int, epoch: int = 0) -> list:
    if sigma == 0:
        return [b for b, _ in dataset.samples]
    return [jitter(b, sigma, sample_seed(seed, epoch, i)) for i, (b, _) in enumerate(dataset.samples)]


@dataclass
class EvalResult:
    accuracy: float
    spike_count: float
    active_neurons: float
    output_spike_count: float
    predictions: np.ndarray = field(repr=False, default=None)
    traces: list = field(repr=False, default=None)


def evaluate(net: NetworkSpec, dataset: Dataset, mode: str, t_end: float, workers: int = 1,
             jitter_sigma: float = 0.0, seed: int = 0, keep_traces: bool = False) -> EvalResult:
    from .harness import sparsity_metrics

    inputs = jittered(dataset, jitter_sigma, seed, epoch=EVAL_STREAM)
    traces = forward_many(net, inputs, t_end, workers)
    preds = np.array([predict(tr, mode) for tr in traces], dtype=np.int64)
    acc = float(np.mean(preds == dataset.labels)) if len(traces) else 0.0
    spikes, active = sparsity_metrics(net, traces)
    out = float(np.mean([tr.output.counts.sum() for tr in traces])) if traces else 0.0
    return EvalResult(acc, spikes, active, out, preds, traces if keep_traces else None)


def forward_weights(cfg: RunConfig, weights: list) -> list:
    if cfg.quantize_bits is not None and cfg.quantize_when == "train":
        return quantize_weights(weights, cfg.quantize_bits)
    return weights


def eval_weights(cfg: RunConfig, weights: list) -> list:
    if cfg.quantize_bits is not None:
        return quantize_weights(weights, cfg.quantize_bits)
    return weights


@dataclass
class TrainResult:
    net: NetworkSpec
    best_net: NetworkSpec
    history: list
    first_batch: dict


def train(cfg: RunConfig, train_set: Dataset, test_set: Optional[Dataset] = None,
          on_epoch: Optional[Callable] = None) -> TrainResult:
    """Train from a fresh initialisation; deterministic in ``cfg.seed``.

    The optimizer works on full-precision shadow weights; the forward and
    backward passes see the quantised copy when ``quantize_when == "train"``.
    """
    base = cfg.network().initialized(cfg.seed)
    weights = [np.array(w) for w in base.weights()]
    if cfg.w_clip is not None:
        weights = clip_weights(weights, cfg.w_clip)
    targets_spec = cfg.targets()
    state = OptimState.for_weights(weights, cfg.lr)
    n_out = base.output_size
    history = []
    best_acc, best_weights = -1.0, weights
    first_batch = {}

    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg.lr, cfg.lr_decay, cfg.lr_decay_period, cfg.lr_min)
        state.lr = lr
        inputs = jittered(train_set, cfg.jitter_sigma, cfg.seed, epoch)
        labels = train_set.labels
        losses, correct = [], 0
        for batch in iter_batches(len(train_set), cfg.batch_size, seed=cfg.seed * 1_000_003 + epoch):
            net = base.with_weights(forward_weights(cfg, weights))
            traces = forward_many(net, [inputs[i] for i in batch], cfg.t_sim, cfg.workers)
            if cfg.loss == "spike_count":
                ys = [targets_spec.count_targets(labels[i], n_out) for i in batch]
            else:
                ys = [int(labels[i]) for i in batch]
            loss, grads = batch_backward(net, traces, ys, cfg.loss, targets_spec, cfg.error_sign,
                                         cfg.workers)
            if not first_batch:
                first_batch = _first_batch_stats(traces, ys, grads, cfg)
            if cfg.grad_clip_norm is not None:
                norm = grads.norm()
                if norm > cfg.grad_clip_norm:
                    grads = grads.scaled(cfg.grad_clip_norm / norm)
            losses.append(loss)
            correct += sum(predict(tr, cfg.loss) == labels[i] for tr, i in zip(traces, batch))
            if cfg.optimizer == "adam":
                state, weights = adam_step(state, weights, grads)
            else:
                weights = sgd_step(weights, grads, lr)
            if cfg.w_clip is not None:
                weights = clip_weights(weights, cfg.w_clip)

        row = {"epoch": epoch + 1, "lr": lr, "train_loss": float(np.mean(losses)),
               "train_accuracy": float(correct) / len(train_set)}
        if test_set is not None:
            res = evaluate(base.with_weights(eval_weights(cfg, weights)), test_set, cfg.loss,
                           cfg.t_sim, cfg.workers, cfg.jitter_sigma, cfg.seed)
            row.update(test_accuracy=res.accuracy, spike_count=res.spike_count,
                       active_neurons=res.active_neurons, output_spike_count=res.output_spike_count)
            if res.accuracy > best_acc:
                best_acc, best_weights = res.accuracy, [w.copy() for w in weights]
        history.append(row)
        log.info("epoch %d: %s", epoch + 1, row)
        if on_epoch is not None:
            on_epoch(row)

    if test_set is None:
        best_weights = weights
    return TrainResult(base.with_weights(weights), base.with_weights(best_weights), history,
                       first_batch)


def _first_batch_stats(traces, ys, grads: GradientSet, cfg: RunConfig) -> dict:
    outs = [tr.output.counts for tr in traces]
    stats = {"initial_output_spike_count": float(np.mean([c.sum() for c in outs]))}
    if cfg.loss == "spike_count":
        stats["mean_output_error"] = float(np.mean([np.mean(y - c) for y, c in zip(ys, outs)]))
    else:
        stats["mean_output_error"] = float("nan")
    stats["mean_weight_change"] = float(np.mean(grads[0]))
    return stats
