from __future__ import annotations

import numpy as np
import pytest

from adinstall.errors import PipelineMismatchError
from adinstall.network import NetworkConfig, init_network
from adinstall.training import (
    EarlyStopMonitor,
    TrainConfig,
    predict,
    retrain_full,
    split_train_val,
    train_with_early_stopping,
)

from conftest import make_batch


def net_config(**overrides) -> NetworkConfig:
    base = dict(
        cat_columns=("f_2", "f_3"),
        vocab_sizes=(8, 30),
        n_binary=2,
        n_numerical=4,
        binary_width=8,
        numerical_width=8,
        trunk=(16,),
        heads=("is_installed",),
        seed=5,
    )
    base.update(overrides)
    return NetworkConfig(**base)


def train_config(**overrides) -> TrainConfig:
    base = dict(max_epochs=8, patience=2, seed=11, batch_size=256, learning_rate=3e-3)
    base.update(overrides)
    return TrainConfig(**base)


# ---------------------------------------------------------------------------
# early-stop bookkeeping
# ---------------------------------------------------------------------------


def test_early_stop_rule_on_scripted_losses():
    mon = EarlyStopMonitor(patience=2)
    outcomes = [mon.observe(e, loss) for e, loss in enumerate([0.40, 0.35, 0.37, 0.38], start=1)]
    assert outcomes == [False, False, False, True]
    assert mon.best_epoch == 2
    assert mon.best_loss == 0.35


def test_early_stop_improvement_resets_wait():
    mon = EarlyStopMonitor(patience=3)
    for epoch, loss in enumerate([0.5, 0.49, 0.50, 0.48, 0.50, 0.50], start=1):
        stopped = mon.observe(epoch, loss)
    assert not stopped
    assert mon.best_epoch == 4 and mon.wait == 2


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------


def test_split_sizes(small_synth_dataset):
    ds = small_synth_dataset
    tr, va = split_train_val(ds, seed=0)
    assert va.n_rows == round(ds.n_rows / 4)
    assert tr.n_rows + va.n_rows == ds.n_rows


def test_split_four_rows(small_synth_dataset):
    ds = small_synth_dataset.take(np.arange(4))
    tr, va = split_train_val(ds, seed=1)
    assert (tr.n_rows, va.n_rows) == (3, 1)


def test_split_deterministic_disjoint_covering(small_synth_dataset):
    ds = small_synth_dataset
    tr1, va1 = split_train_val(ds, seed=3)
    tr2, va2 = split_train_val(ds, seed=3)
    assert tr1.row_ids == tr2.row_ids and va1.row_ids == va2.row_ids
    assert set(tr1.row_ids).isdisjoint(va1.row_ids)
    assert set(tr1.row_ids) | set(va1.row_ids) == set(ds.row_ids)
    tr3, _ = split_train_val(ds, seed=4)
    assert tr3.row_ids != tr1.row_ids


def test_split_rejects_unlabeled(small_synth_dataset):
    ds = small_synth_dataset
    unlabeled = ds.take(np.arange(ds.n_rows))
    object.__setattr__(unlabeled, "labels", None)
    with pytest.raises(PipelineMismatchError):
        split_train_val(unlabeled, seed=0)


def test_split_label_balance_at_scale():
    rng = np.random.default_rng(0)
    from conftest import make_batch

    cfg = net_config()
    ds = make_batch(rng, cfg, 10_000)
    base = float(ds.labels[:, 0].mean())
    _, va = split_train_val(ds, seed=9)
    val_rate = float(va.labels[:, 0].mean())
    assert abs(val_rate - base) < 0.05


# ---------------------------------------------------------------------------
# the training protocol
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def trained(small_synth_dataset):
    params, history = train_with_early_stopping(
        small_synth_dataset, net_config(), train_config()
    )
    return params, history


def test_history_bookkeeping(trained):
    _, history = trained
    assert 1 <= history.best_epoch <= history.stopped_epoch
    monitored = [rec.val_loss[history.monitor_head] for rec in history.epochs]
    assert history.best_val_loss() == min(monitored)
    assert history.epochs[history.best_epoch - 1].is_best


def test_restored_params_reproduce_best_val_loss(trained, small_synth_dataset):
    params, history = trained
    cfg = train_config()
    _, val = split_train_val(small_synth_dataset, cfg.seed, cfg.val_fraction)
    probs = predict(params, val, cfg.eval_batch_size)
    from adinstall.network import bce_loss

    re_evaluated = float(bce_loss(probs, val.label_matrix(("is_installed",))).per_head[0])
    assert abs(re_evaluated - history.best_val_loss()) < 1e-12


def test_training_is_deterministic(small_synth_dataset):
    a, ha = train_with_early_stopping(small_synth_dataset, net_config(), train_config())
    b, hb = train_with_early_stopping(small_synth_dataset, net_config(), train_config())
    assert ha.best_epoch == hb.best_epoch
    for name in a.blocks:
        assert np.array_equal(a.blocks[name], b.blocks[name])


def test_training_beats_base_rate(trained, small_synth_dataset):
    _, history = trained
    y = small_synth_dataset.label_matrix(("is_installed",))
    q = float(y.mean())
    entropy = -(q * np.log(q) + (1 - q) * np.log(1 - q))
    assert history.best_val_loss() < entropy


def test_overfitting_past_best_epoch(small_synth_dataset):
    # memorization-friendly setup: small data, roomy model, many epochs
    ds = small_synth_dataset.take(np.arange(800))
    cfg = net_config(trunk=(64, 32), seed=2)
    stop_cfg = train_config(max_epochs=40, patience=40, learning_rate=5e-3, batch_size=64)
    _, history = train_with_early_stopping(ds, cfg, stop_cfg)
    best = history.best_epoch
    last = history.epochs[-1]
    at_best = history.epochs[best - 1]
    assert history.stopped_epoch >= best + 5
    assert last.train_loss["is_installed"] < at_best.train_loss["is_installed"]
    assert last.val_loss["is_installed"] > at_best.val_loss["is_installed"]


def test_monitor_head_must_exist(small_synth_dataset):
    with pytest.raises(ValueError, match="monitor head"):
        train_with_early_stopping(
            small_synth_dataset, net_config(), train_config(monitor_head="nope")
        )


def test_divergence_aborts_gracefully(small_synth_dataset, monkeypatch):
    import adinstall.training as training_mod

    real_backward = training_mod.backward
    calls = {"n": 0}

    def poisoned(params, batch, labels, frozen_heads=None):
        calls["n"] += 1
        grads = real_backward(params, batch, labels, frozen_heads=frozen_heads)
        if calls["n"] > 3:
            grads["bin.w"] = grads["bin.w"] * np.nan
        return grads

    monkeypatch.setattr(training_mod, "backward", poisoned)
    params, history = train_with_early_stopping(
        small_synth_dataset, net_config(), train_config()
    )
    assert history.diverged
    assert "bin.w" in history.diagnostic
    params.assert_finite()


def test_per_head_monitoring_duplicated_trunks(small_synth_dataset):
    cfg = net_config(
        heads=("is_clicked", "is_installed"),
        trunk_sharing="duplicated",
        seed=3,
    )
    params, history = train_with_early_stopping(
        small_synth_dataset,
        cfg,
        train_config(monitor_mode="per_head", max_epochs=6, patience=1),
    )
    assert set(history.per_head_best) == {"is_clicked", "is_installed"}
    assert all(1 <= e <= history.stopped_epoch for e in history.per_head_best.values())
    params.assert_finite()


# ---------------------------------------------------------------------------
# full retraining and inference
# ---------------------------------------------------------------------------


def test_retrain_full_deterministic(small_synth_dataset):
    a, _ = retrain_full(small_synth_dataset, net_config(), train_config(), epoch_count=2)
    b, _ = retrain_full(small_synth_dataset, net_config(), train_config(), epoch_count=2)
    for name in a.blocks:
        assert np.array_equal(a.blocks[name], b.blocks[name])


def test_retrain_full_rejects_zero_epochs(small_synth_dataset):
    with pytest.raises(ValueError):
        retrain_full(small_synth_dataset, net_config(), train_config(), epoch_count=0)


def test_retrain_loss_improves_over_first_epoch(small_synth_dataset):
    _, history = retrain_full(small_synth_dataset, net_config(), train_config(), epoch_count=4)
    losses = [rec.train_loss["is_installed"] for rec in history.epochs]
    assert losses[-1] <= losses[0]


def test_predict_properties(small_synth_dataset, rng):
    cfg = net_config()
    params = init_network(cfg)
    ds = small_synth_dataset.take(np.arange(100))
    p1 = predict(params, ds)
    p2 = predict(params, ds)
    assert np.array_equal(p1, p2)
    perm = rng.permutation(100)
    assert np.array_equal(predict(params, ds.take(perm)), p1[perm])
    for arr in params.blocks.values():
        arr[...] = 0.0
    assert np.all(predict(params, ds) == 0.5)


def test_history_files_have_no_timing_columns(trained):
    _, history = trained
    lines = history.record_lines()
    assert lines[0].split("\t") == ["epoch", "train_loss.is_installed", "val_loss.is_installed", "best"]
    assert len(lines) == len(history.epochs) + 1
    assert sum(line.split("\t")[-1] == "1" for line in lines[1:]) >= 1
    table = history.render_table()
    assert "epoch" in table and "time" not in table.lower()
