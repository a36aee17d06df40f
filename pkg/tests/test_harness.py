import numpy as np
import pytest

from exactsnn.config import RunConfig
from exactsnn.core import EventBatch, NetworkSpec, NeuronParams, dense
from exactsnn.data import Dataset
from exactsnn.forward import forward_many
from exactsnn.harness import (accuracy, latency_curve, parse_grid, parse_sweep_values,
                              sparsity_metrics, sweep, truncate_trace, write_csv)
from exactsnn.training import evaluate, load_datasets


def identity_net(n, w=2.0, cap=5):
    p = NeuronParams(0.1, 0.05, cap)
    return NetworkSpec((dense(n, n, p, weights=np.eye(n) * w),))


def one_hot_dataset(n, reps=3):
    samples = [(EventBatch.from_unsorted([c], [0.01 * r], n), c) for r in range(reps)
               for c in range(n)]
    return Dataset(samples, (n,), n)


def test_accuracy_perfect_and_constant():
    ds = one_hot_dataset(10)
    assert accuracy(identity_net(10), ds, "spike_count", 0.3) == 1.0
    silent = identity_net(10, w=0.0)
    assert accuracy(silent, ds, "spike_count", 0.3) == pytest.approx(0.1)


def test_sparsity_silent_and_ttfs(rng):
    p = NeuronParams(0.1, 0.05, 1)
    net = NetworkSpec((dense(6, 8, p, weights=rng.uniform(0, 1, (6, 8))),
                       dense(8, 3, p, weights=rng.uniform(0, 1, (8, 3)))))
    batches = [EventBatch.from_unsorted(rng.integers(0, 6, 10), rng.uniform(0, 0.1, 10), 6)
               for _ in range(5)]
    spikes, active = sparsity_metrics(net, forward_many(net, batches, 0.3))
    assert spikes == active > 0
    silent = net.with_weights([np.zeros((6, 8)), np.zeros((8, 3))])
    assert sparsity_metrics(silent, forward_many(silent, batches, 0.3)) == (0.0, 0.0)


def test_latency_endpoints():
    ds = one_hot_dataset(4)
    net = identity_net(4)
    conf = latency_curve(net, ds, [0.0, 0.3], "spike_count", 0.3)
    assert conf[1] == 1.0
    assert conf[0] == pytest.approx(np.mean(ds.labels == 0))


def test_parse_grid():
    g = parse_grid("0:0.2:0.005")
    assert len(g) == 41 and g[0] == 0 and g[-1] == pytest.approx(0.2)
    assert parse_grid("0.025,0.05").tolist() == [0.025, 0.05]
    assert parse_sweep_values("quantize", "2,3,4,5,float") == [2, 3, 4, 5, None]
    assert parse_sweep_values("threshold", "0.4,0.7") == [0.4, 0.7]
    with pytest.raises(ValueError):
        parse_sweep_values("bogus", "1")


def test_truncate_trace():
    ds = one_hot_dataset(2, reps=1)
    tr = forward_many(identity_net(2), [b for b, _ in ds.samples], 0.3)[0]
    full = tr.layers[0].spike_lists()
    cut = truncate_trace(tr, 0.1)[0]
    assert all(set(c) <= set(f) and all(t <= 0.1 for t in c) for c, f in zip(cut, full))


def test_csv_header_and_determinism():
    cfg = RunConfig()
    rows = [{"a": 0.1, "b": None, "c": 3}]
    text = write_csv(rows, ("a", "b", "c"), cfg)
    assert text.splitlines()[0].startswith(f"# config_sha256={cfg.digest()} config=")
    assert text.splitlines()[1:] == ["a,b,c", "0.1,,3"]
    assert write_csv(rows, ("a", "b", "c"), cfg) == text


@pytest.fixture(scope="module")
def tiny():
    cfg = RunConfig(arch="30-10", thresholds=[0.2, 0.7], n_train=30, n_test=30, epochs=1,
                    batch_size=10)
    train_set, test_set = load_datasets(cfg)
    return cfg, train_set, test_set


def test_sweep_sim_time_full_duration_matches(tiny):
    from exactsnn.training import train
    cfg, train_set, test_set = tiny
    net = train(cfg, train_set, test_set).net
    rows = sweep("sim_time", [cfg.t_sim], cfg, train_set, test_set, net)
    base = evaluate(net, test_set, cfg.loss, cfg.t_sim)
    assert rows[0]["accuracy"] == base.accuracy
    assert rows[0]["spike_count"] == base.spike_count
    assert rows[0]["normalized_accuracy"] == (1.0 if base.accuracy > 0 else 0.0)
    q = sweep("quantize", [None, 2], cfg, train_set, test_set, net)
    assert q[0]["accuracy"] == base.accuracy and q[0]["value"] == "float"


def test_sweep_threshold_retrains(tiny):
    cfg, train_set, test_set = tiny
    rows = sweep("threshold", [1.6, 0.4], cfg, train_set, test_set)
    assert [r["value"] for r in rows] == [1.6, 0.4]
    assert rows[1]["initial_output_spike_count"] >= rows[0]["initial_output_spike_count"]
    assert max(r["normalized_accuracy"] for r in rows) in (0.0, 1.0)
