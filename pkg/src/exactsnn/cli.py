"""Command-line entry points: train, eval, sweep, encode.

Exit codes: 0 success, 1 configuration error, 2 data error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import modelio
from .config import RunConfig, from_dict, load_config
from .core import ConfigError
from .data import DataError, Dataset, idx_dataset, load_event_file, write_event_file
from .harness import (SWEEP_COLUMNS, latency_curve, parse_grid, parse_sweep_values, sweep,
                      write_csv)
from .training import evaluate, load_datasets, train

LOG_COLUMNS = ("epoch", "lr", "train_loss", "train_accuracy", "test_accuracy", "spike_count",
               "active_neurons", "output_spike_count")
EVAL_COLUMNS = ("metric", "t", "value")

# keys that only affect how a run executes, never what it produces
RUNTIME_KEYS = ("workers", "out_dir")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def canonical(cfg: RunConfig) -> RunConfig:
    """Config with runtime-only keys reset, used for model files and log headers."""
    return cfg.replace(**{k: getattr(RunConfig(), k) for k in RUNTIME_KEYS})


def announce(cfg: RunConfig):
    print(f"# config {cfg.to_json()}")
    print(f"# seed {cfg.seed}")


def _emit(text: str, path):
    if path is None:
        sys.stdout.write(text)


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.overrides)
    if args.out_dir is not None:
        cfg = cfg.replace(out_dir=args.out_dir)
    announce(cfg)
    train_set, test_set = load_datasets(cfg)
    if train_set is None:
        raise DataError("no training data configured")
    out_dir = Path(cfg.out_dir or f"runs/{cfg.name}")
    out_dir.mkdir(parents=True, exist_ok=True)
    result = train(cfg, train_set, test_set,
                   on_epoch=lambda row: print(json.dumps(row, sort_keys=True), flush=True))
    stored = canonical(cfg)
    modelio.save(out_dir / "model_final.bin", result.net, stored.to_dict())
    modelio.save(out_dir / "model_best.bin", result.best_net, stored.to_dict())
    write_csv(result.history, LOG_COLUMNS, stored, out_dir / "train_log.csv")
    print(f"# wrote {out_dir / 'model_final.bin'} {out_dir / 'model_best.bin'} "
          f"{out_dir / 'train_log.csv'}")
    return 0


def _eval_dataset(args, cfg: RunConfig) -> Dataset:
    conv = len(cfg.input_shape) == 3
    if args.events:
        return load_event_file(args.events).subset(args.n)
    if args.images or args.labels:
        if not (args.images and args.labels):
            raise ConfigError("--images and --labels must be given together")
        return idx_dataset(args.images, args.labels, cfg.t_enc, args.n, cfg.n_classes,
                           channels_first=conv)
    _, test_set = load_datasets(cfg.replace(n_test=args.n if args.n is not None else cfg.n_test))
    if test_set is None:
        raise DataError("no evaluation data given and the model config names none")
    return test_set


def cmd_eval(args) -> int:
    net, stored = modelio.load(args.model)
    cfg = from_dict(stored) if stored is not None else RunConfig(
        input_shape=list(net.layers[0].in_shape))
    changes = {"workers": args.workers}
    if args.jitter_sigma is not None:
        changes["jitter_sigma"] = args.jitter_sigma
    if args.sim_time is not None:
        changes["t_sim"] = args.sim_time
    if args.mode is not None:
        changes["loss"] = args.mode
        if args.mode == "ttfs_softmax":
            changes["max_spikes"] = [1] * len(cfg.max_spikes)
    cfg = cfg.replace(**changes)
    announce(cfg)
    ds = _eval_dataset(args, cfg)
    if ds.input_size != net.input_size:
        raise DataError(f"dataset input size {ds.input_size} does not match model input "
                        f"size {net.input_size}")
    if args.quantize_bits is not None:
        from .optim import quantize_weights
        net = net.with_weights(quantize_weights(net.weights(), args.quantize_bits))
    res = evaluate(net, ds, cfg.loss, cfg.t_sim, cfg.workers, cfg.jitter_sigma, cfg.seed,
                   keep_traces=args.latency_grid is not None)
    rows = [{"metric": m, "value": getattr(res, m)}
            for m in ("accuracy", "spike_count", "active_neurons", "output_spike_count")]
    if args.latency_grid is not None:
        grid = parse_grid(args.latency_grid)
        conf = latency_curve(net, ds, grid, cfg.loss, cfg.t_sim, cfg.workers, res.traces)
        rows += [{"metric": "latency_confidence", "t": t, "value": c} for t, c in zip(grid, conf)]
    _emit(write_csv(rows, EVAL_COLUMNS, canonical(cfg), args.out), args.out)
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, args.overrides)
    announce(cfg)
    values = parse_sweep_values(args.kind, args.values)
    train_set, test_set = load_datasets(cfg)
    if train_set is None or test_set is None:
        raise DataError("sweeps need both training and test data")
    trained = modelio.load(args.model)[0] if args.model else None
    rows = sweep(args.kind, values, cfg, train_set, test_set, trained)
    _emit(write_csv(rows, SWEEP_COLUMNS, canonical(cfg), args.out), args.out)
    return 0


def cmd_encode(args) -> int:
    print(f"# config {json.dumps({'images': args.images, 'labels': args.labels, 'n': args.n, 't_enc': args.t_enc}, sort_keys=True)}")
    print("# seed 0")
    ds = idx_dataset(args.images, args.labels, args.t_enc, args.n)
    write_event_file(args.out, ds)
    print(f"# wrote {len(ds)} samples to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="exactsnn", description="Event-driven spiking networks with exact gradients.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train from a preset or JSON config")
    t.add_argument("config", help="preset name or JSON file")
    t.add_argument("overrides", nargs="*", metavar="key=value")
    t.add_argument("--out-dir")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a saved model")
    e.add_argument("model")
    e.add_argument("--images")
    e.add_argument("--labels")
    e.add_argument("--events")
    e.add_argument("--n", type=int, help="use only the first N samples")
    e.add_argument("--latency-grid", help="start:stop:step or comma list, seconds")
    e.add_argument("--jitter-sigma", type=float)
    e.add_argument("--sim-time", type=float)
    e.add_argument("--quantize-bits", type=int)
    e.add_argument("--mode", choices=("spike_count", "ttfs_softmax"))
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--out")
    e.set_defaults(fn=cmd_eval)

    s = sub.add_parser("sweep", help="threshold / jitter / clip / quantize / sim_time sweep")
    s.add_argument("config")
    s.add_argument("overrides", nargs="*", metavar="key=value")
    s.add_argument("--kind", required=True)
    s.add_argument("--values", required=True)
    s.add_argument("--model", help="trained model for re-evaluation sweeps")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_sweep)

    c = sub.add_parser("encode", help="convert IDX images to an event file")
    c.add_argument("images")
    c.add_argument("labels")
    c.add_argument("out")
    c.add_argument("--t-enc", type=float, default=0.1)
    c.add_argument("--n", type=int)
    c.set_defaults(fn=cmd_encode)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, modelio.ModelFormatError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
