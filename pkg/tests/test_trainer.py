import json
import os
from dataclasses import asdict

import numpy as np
import pytest

from src.config import ExperimentConfig, SynthConfig, TrainConfig
from src.data import STREAM_INIT, STREAM_SHUFFLE, MultimodalDataset, generate_synthetic, make_rng, split
from src.errors import ArgumentError
from src.model import MultimodalNet
from src.monitor import StatusMonitor
from src.trainer import ArmTrainer, evaluate, run_experiment, train

FIXTURE = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "config", "fixture.yaml")
BASELINE = dict(dff=False, bmml=False, dsr=False, lambda1=0.0, lambda2=0.0)


@pytest.fixture(scope="module")
def fixture_split():
    ds = generate_synthetic(SynthConfig())
    return split(ds, 0.8, SynthConfig().seed)


def small_split(small_dataset):
    return split(small_dataset, 0.8, seed=3)


def baseline_loop(cfg: TrainConfig, ds: MultimodalDataset):
    """Concatenation baseline written directly in numpy: per-step cross-entropy of the fused head."""
    net = MultimodalNet(ds.dims, cfg.hidden_dim, ds.num_classes, rng=make_rng(cfg.seed, STREAM_INIT))
    p = {name: value.copy() for name, value in net.state_dict().items()}
    velocity = {name: None for name in p}
    row_of = {int(s): r for r, s in enumerate(ds.ids)}
    m, c = ds.m, ds.num_classes

    def softmax(z):
        e = np.exp(z - z.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    losses = []
    for epoch in range(cfg.epochs):
        order = make_rng(cfg.seed, STREAM_SHUFFLE, epoch, 0).permutation(np.asarray(ds.ids, dtype=np.int64))
        for start in range(0, len(order), cfg.batch_size):
            rows = [row_of[int(i)] for i in order[start:start + cfg.batch_size]]
            xs, labels = ds.batch(rows)
            n = len(rows)
            onehot = np.eye(c)[labels]

            pre = [x @ p[f"enc{i}.weight"] + p[f"enc{i}.bias"] for i, x in enumerate(xs)]
            hs = [np.maximum(a, 0.0) for a in pre]
            fused_in = np.concatenate(hs, axis=1)
            fused = softmax(fused_in @ p["head.weight"] + p["head.bias"])
            losses.append(float(np.mean(-np.log(np.maximum(fused[np.arange(n), labels], 1e-12)))))

            grads = {}
            dz = (fused - onehot) / n
            grads["head.weight"] = fused_in.T @ dz
            grads["head.bias"] = dz.sum(axis=0, keepdims=True)
            dh = dz @ p["head.weight"].T
            for i in range(m):
                block = dh[:, i * cfg.hidden_dim:(i + 1) * cfg.hidden_dim] * (pre[i] > 0)
                grads[f"enc{i}.weight"] = xs[i].T @ block
                grads[f"enc{i}.bias"] = block.sum(axis=0, keepdims=True)
                probe = softmax(hs[i] @ p[f"probe{i}.weight"] + p[f"probe{i}.bias"])
                dq = (probe - onehot) / n * (cfg.probe_weight / m)
                grads[f"probe{i}.weight"] = hs[i].T @ dq
                grads[f"probe{i}.bias"] = dq.sum(axis=0, keepdims=True)

            for name in p:
                step = grads[name] + cfg.weight_decay * p[name]
                velocity[name] = step if velocity[name] is None else cfg.momentum * velocity[name] + step
                p[name] = p[name] - cfg.lr * velocity[name]
    return losses


def test_toggles_off_match_baseline_loop(fixture_split):
    train_ds, _ = fixture_split
    cfg = TrainConfig(epochs=3, warmup=0, seed=0, **BASELINE)
    _, history = train(cfg, train_ds)
    expected = baseline_loop(cfg, train_ds)
    assert len(history.step_losses) == len(expected) == 3 * (train_ds.n // cfg.batch_size)
    np.testing.assert_allclose(history.step_losses, expected, rtol=0, atol=1e-12)


def test_history_has_one_record_per_epoch(small_dataset):
    train_ds, test_ds = small_split(small_dataset)
    _, history = train(TrainConfig(epochs=4, warmup=2, batch_size=8, hidden_dim=4), train_ds, test_ds)
    assert [r.epoch for r in history.records] == [0, 1, 2, 3]
    assert [r.phase for r in history.records] == ["warmup", "warmup", "arm", "arm"]
    for r in history.records:
        assert r.gap == pytest.approx(max(r.phi_cmi) - min(r.phi_cmi))
        assert 0.0 <= r.test_acc <= 1.0
        assert len(r.probe_acc) == 2


def test_all_warmup_never_weights_or_resamples(small_dataset):
    train_ds, _ = small_split(small_dataset)
    _, history = train(TrainConfig(epochs=3, warmup=3, batch_size=8, hidden_dim=4), train_ds)
    for r in history.records:
        assert r.phase == "warmup"
        assert r.extras == 0
        assert r.epoch_size == train_ds.n
        assert r.fw_mean == [1.0, 1.0]


def test_arm_epochs_add_resampled_visits(small_dataset):
    train_ds, _ = small_split(small_dataset)
    cfg = TrainConfig(epochs=3, warmup=1, batch_size=8, hidden_dim=4, lr=0.05)
    _, history = train(cfg, train_ds)
    for r in history.records[1:]:
        assert r.extras >= 0
        # a lone extra copy is skipped
        assert r.epoch_size == train_ds.n + (r.extras if r.extras != 1 else 0)
        assert r.epoch_size <= cfg.max_epoch_factor * train_ds.n
        assert sum(r.fw_mean) == pytest.approx(2.0, abs=1e-9)


def test_deferred_resampling_trains_extras_next_epoch(small_dataset):
    train_ds, _ = small_split(small_dataset)
    cfg = TrainConfig(epochs=3, warmup=1, batch_size=8, hidden_dim=4, defer_resample=True)
    trainer = ArmTrainer(cfg, train_ds)
    _, history = trainer.run()
    assert history.records[1].extras == 0
    assert trainer.pending_plan is not None


def test_run_is_reproducible(small_dataset):
    train_ds, test_ds = small_split(small_dataset)
    cfg = TrainConfig(epochs=3, warmup=1, batch_size=8, hidden_dim=4, resample_mode="random")
    _, a = train(cfg, train_ds, test_ds)
    _, b = train(cfg, train_ds, test_ds)
    assert json.dumps([asdict(r) for r in a.records]) == json.dumps([asdict(r) for r in b.records])
    assert a.step_losses == b.step_losses


def test_invalid_config_fails_before_training(small_dataset):
    train_ds, _ = small_split(small_dataset)
    with pytest.raises(ArgumentError):
        ArmTrainer(TrainConfig(epochs=2, warmup=5), train_ds)
    with pytest.raises(ArgumentError):
        ArmTrainer(TrainConfig(slope=0.5), train_ds)


def test_trailing_single_sample_batch_is_merged(small_dataset):
    train_ds, _ = small_split(small_dataset)
    trainer = ArmTrainer(TrainConfig(batch_size=29, hidden_dim=4), train_ds)
    chunks = trainer._batches(np.arange(train_ds.n))
    assert train_ds.n == 30
    assert [len(c) for c in chunks] == [30]


def test_evaluate_constant_predictor():
    ds = MultimodalDataset(np.arange(6), np.array([0, 1, 2, 0, 1, 2]), (np.ones((6, 2)),), 3)
    net = MultimodalNet([2], hidden_dim=3, num_classes=3, rng=np.random.default_rng(0))
    net.params["head.weight"].data[:] = 0.0
    net.params["head.bias"].data[:] = [[5.0, 0.0, 0.0]]
    assert evaluate(net, ds).fused_acc == pytest.approx(1 / 3)

    all_zero = MultimodalDataset(np.arange(4), np.zeros(4, dtype=int), (np.ones((4, 2)),), 3)
    assert evaluate(net, all_zero).fused_acc == 1.0


def test_evaluate_empty_dataset():
    empty = MultimodalDataset(np.arange(0), np.arange(0), (np.zeros((0, 2)),), 3)
    with pytest.raises(ArgumentError):
        evaluate(MultimodalNet([2], 3, 3), empty)


def test_run_experiment_updates_monitor(tmp_path, small_config, small_dataset):
    monitor = StatusMonitor(str(tmp_path), seed=5, epochs=small_config.train.epochs)
    _, history, metrics = run_experiment(small_config, small_dataset, seed=5, monitor=monitor)
    status = json.loads((tmp_path / "status_seed5.json").read_text(encoding="utf-8"))
    assert status["stage"] == "COMPLETED"
    assert status["epoch"] == small_config.train.epochs - 1
    assert history.seed == 5
    assert metrics.fused_acc == history.records[-1].test_acc


def test_ablation_lattice_keeps_other_paths_unchanged(small_dataset):
    train_ds, _ = small_split(small_dataset)
    base = dict(epochs=3, warmup=1, batch_size=8, hidden_dim=4, lr=0.05)

    _, no_dff = train(TrainConfig(dff=False, **base), train_ds)
    assert all(r.fw_mean == [1.0, 1.0] for r in no_dff.records)

    _, no_dsr = train(TrainConfig(dsr=False, **base), train_ds)
    assert all(r.epoch_size == train_ds.n and r.extras == 0 for r in no_dsr.records)

    _, no_bmml = train(TrainConfig(bmml=False, **base), train_ds)
    for r in no_bmml.records:
        assert r.total == pytest.approx(r.ce, abs=1e-12)
        assert r.l_phi_cmi >= 0.0


def test_cmi_floor_bounds_the_balanced_loss(small_dataset):
    train_ds, _ = small_split(small_dataset)
    cfg = TrainConfig(epochs=2, warmup=1, batch_size=8, hidden_dim=4, lr=0.05, cmi_floor=1e6)
    _, history = train(cfg, train_ds)
    # the spread is at most m * m = 4
    assert all(0.0 <= r.l_phi_cmi <= 4e-6 for r in history.records)


def test_capped_epochs_are_counted(small_dataset):
    train_ds, _ = small_split(small_dataset)
    cfg = TrainConfig(epochs=2, warmup=0, batch_size=8, hidden_dim=4, max_epoch_factor=1.0)
    _, history = train(cfg, train_ds)
    assert all(r.extras == 0 for r in history.records)
    assert history.counters["capped_epochs"] == 2
    assert history.counters["steps"] == 2 * len(ArmTrainer(cfg, train_ds)._batches(np.arange(train_ds.n)))


@pytest.mark.slow
def test_arm_narrows_the_contribution_gap():
    cfg = ExperimentConfig.load(FIXTURE)
    dataset = generate_synthetic(cfg.synth)
    baseline_cfg = cfg.with_overrides(train=BASELINE)
    arm, base = [], []
    for seed in cfg.run_seeds():
        arm.append(run_experiment(cfg, dataset, seed))
        base.append(run_experiment(baseline_cfg, dataset, seed))

    narrower = sum(a[1].records[-1].gap < b[1].records[-1].gap for a, b in zip(arm, base))
    assert narrower >= 4
    assert np.mean([a[2].fused_acc for a in arm]) >= np.mean([b[2].fused_acc for b in base])
    dominant = int(np.argmax(np.mean([b[2].probe_acc for b in base], axis=0)))
    assert np.mean([a[2].probe_acc[dominant] for a in arm]) >= np.mean([b[2].probe_acc[dominant] for b in base]) - 0.01
