"""Exclusion schedule, Dice loss, loss ledger and training loop."""
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from rarunet import ops
from rarunet.adl import (
    LossLedger,
    SegData,
    TrainConfig,
    augment_pair,
    dice_loss,
    per_sample_dice_loss,
    rank_and_exclude,
    schedule_n,
    schedule_value,
    train,
    train_epoch,
)
from rarunet.arch import ArchConfig, build_model
from rarunet.optim import Adam
from rarunet.tensor import Tensor, grad_check

TINY = ArchConfig(base_channels=2, use_residual_encoders=False, use_residual_skips=False,
                  use_attention_decoders=False)


def blob_data(n, size=16, seed=0):
    rng = np.random.default_rng(seed)
    images, masks = [], []
    yy, xx = np.mgrid[:size, :size]
    for _ in range(n):
        cy, cx, r = rng.uniform(5, size - 5), rng.uniform(5, size - 5), rng.uniform(2, 4)
        m = ((yy - cy) ** 2 + (xx - cx) ** 2 <= r * r).astype(np.float32)
        images.append(0.2 + 0.6 * m + rng.normal(0, 0.05, m.shape).astype(np.float32))
        masks.append(m)
    return SegData(list(range(n)), np.stack(images)[:, None], np.stack(masks)[:, None])


# ---------------------------------------------------------------- schedule

def test_schedule_hand_values():
    assert schedule_n(1, 0.68, 0.75, 50, 900) == 108
    assert schedule_value(6, 0.68, 0.75, 50, 900) == pytest.approx(21.6)
    assert schedule_n(6, 0.68, 0.75, 50, 900) == 21
    assert schedule_n(7, 0.68, 0.75, 50, 900) == 21
    # middle branch just past the first joint at t = 1.2
    assert schedule_n(2, 0.68, 0.75, 50, 900) == int(-18 * 2 + 0.6 * 0.24 * 900)


def test_schedule_degenerate_noise_is_zero():
    for t in range(1, 51):
        assert schedule_n(t, 1.0, 0.5, 50, 900) == 0
        assert schedule_n(t, 0.5, 0.0, 50, 900) == 0


def test_schedule_rejects_out_of_range_epochs():
    with pytest.raises(ValueError):
        schedule_n(0, 0.5, 0.5, 10, 100)
    with pytest.raises(ValueError):
        schedule_n(11, 0.5, 0.5, 10, 100)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.integers(1, 80), st.integers(1, 1000))
def test_schedule_properties(alpha, beta, x, y):
    values = [schedule_n(t, alpha, beta, x, y) for t in range(1, x + 1)]
    assert all(0 <= v <= max(0, y - 1) for v in values)
    assert all(a >= b for a, b in zip(values, values[1:]))
    for t in range(1, x + 1):
        assert schedule_value(t, alpha, beta, x, y) == pytest.approx(oracles.schedule_by_hand(t, alpha, beta, x, y))


@pytest.mark.parametrize("alpha,beta", list(itertools.product([0.55, 0.68, 0.77, 0.85], [0.25, 0.5, 0.75])))
def test_branches_meet_at_joints(alpha, beta):
    k = (1 - alpha) * beta
    x, y = 50, 900
    t1, t2 = 0.1 * k * x, 0.5 * k * x
    assert -(y / x) * t1 + 0.6 * k * y == pytest.approx(0.5 * k * y, abs=1e-9)
    assert -(y / x) * t2 + 0.6 * k * y == pytest.approx(0.1 * k * y, abs=1e-9)


# ---------------------------------------------------------------- loss

def test_dice_loss_examples():
    g = np.zeros((1, 1, 4, 4))
    g[0, 0, :2, :3] = 1
    assert dice_loss(Tensor(g), g).item() == pytest.approx(0.0, abs=1e-15)
    a = g.sum()
    assert dice_loss(Tensor(np.zeros_like(g)), g).item() == pytest.approx(1 - 1 / (a + 1))


def test_dice_loss_gradient():
    rng = np.random.default_rng(0)
    z = Tensor(rng.standard_normal((1, 1, 4, 4)))
    g = rng.random((1, 1, 4, 4)) > 0.5
    assert grad_check(lambda z: dice_loss(ops.sigmoid(z), g), [z]) < 1e-4


def test_per_sample_loss_is_batch_independent():
    rng = np.random.default_rng(1)
    p, g = rng.random((3, 1, 5, 5)), rng.random((3, 1, 5, 5)) > 0.5
    batch = per_sample_dice_loss(Tensor(p), g).data
    for i in range(3):
        assert batch[i] == pytest.approx(dice_loss(Tensor(p[i:i + 1]), g[i:i + 1]).item())
    assert dice_loss(Tensor(p), g).item() == pytest.approx(batch.mean())


# ---------------------------------------------------------------- ledger / ranking

def test_rank_and_exclude_examples():
    ledger = LossLedger([0, 1, 2])
    for sid, loss in zip([0, 1, 2], [0.9, 0.1, 0.5]):
        ledger.record(1, sid, loss, False)
    assert rank_and_exclude(ledger, 2, 0) == set()
    assert rank_and_exclude(ledger, 2, 1) == {0}
    assert rank_and_exclude(ledger, 1, 2) == set()
    with pytest.raises(ValueError):
        rank_and_exclude(ledger, 2, 3)
    flat = LossLedger([0, 1, 2])
    for sid in range(3):
        flat.record(1, sid, 0.4, False)
    assert rank_and_exclude(flat, 2, 2) == {0, 1}


def test_ledger_csv_roundtrip(tmp_path):
    ledger = LossLedger([3, 1])
    ledger.record(1, 3, 0.25, False)
    ledger.record(1, 1, 0.5, True)
    ledger.write_csv(tmp_path / "l.csv")
    text = (tmp_path / "l.csv").read_text().splitlines()
    assert text == ["epoch,sample_id,loss,excluded", "1,1,0.500000,1", "1,3,0.250000,0"]
    back = LossLedger.read_csv(tmp_path / "l.csv")
    assert back.losses(1) == {1: 0.5, 3: 0.25} and back.excluded(1) == {1}


# ---------------------------------------------------------------- augmentation

def test_augment_pair_rotations():
    img = np.array([[1, 2], [3, 4]])
    views = augment_pair(img, img)
    np.testing.assert_array_equal(views[0][0], img)
    np.testing.assert_array_equal(views[1][0], [[3, 1], [4, 2]])
    np.testing.assert_array_equal(np.rot90(views[1][0], 1), img)
    np.testing.assert_array_equal(np.rot90(views[2][0], -1), img)
    for a, b in views:
        np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        augment_pair(np.zeros((2, 3)), np.zeros((2, 3)))


# ---------------------------------------------------------------- training

def test_single_sample_overfits():
    data = blob_data(1)
    model = build_model(TINY, seed=0)
    opt = Adam(model.params, lr=1e-2)
    cfg = TrainConfig(epochs=5, batch_size=1, learning_rate=1e-2, augment=False)
    ledger = LossLedger(data.ids)
    rng = np.random.default_rng(0)
    losses = [train_epoch(model, data, set(), opt, cfg, rng, t, ledger)[0] for t in range(1, 6)]
    assert all(a > b for a, b in zip(losses, losses[1:]))


def test_train_epoch_rejects_full_exclusion():
    data = blob_data(2)
    model = build_model(TINY, seed=0)
    with pytest.raises(ValueError):
        train_epoch(model, data, {0, 1}, Adam(model.params), TrainConfig(), np.random.default_rng(0), 1,
                    LossLedger(data.ids))


def run(cfg, alpha, beta, data, seed=0):
    model = build_model(TINY, seed=seed)
    return train(model, data, data, cfg, alpha, beta)


def test_training_is_deterministic():
    data = blob_data(6)
    cfg = TrainConfig(epochs=3, batch_size=4, learning_rate=1e-2, seed=2)
    a, b = run(cfg, 0.5, 0.8, data), run(cfg, 0.5, 0.8, data)
    assert a.ledger.rows == b.ledger.rows
    for name in a.model.params:
        np.testing.assert_array_equal(a.model.params[name].data, b.model.params[name].data)


def test_adl_excludes_highest_previous_losses():
    data = blob_data(10)
    cfg = TrainConfig(epochs=4, batch_size=4, learning_rate=1e-2, augment=False)
    res = run(cfg, 0.2, 1.0, data)
    counts = res.summary["excluded_counts"]
    assert counts[0] == 0
    for t in range(2, 5):
        excl = res.ledger.excluded(t)
        assert len(excl) == counts[t - 1] == schedule_n(t, 0.2, 1.0, 4, 10)
        assert excl == rank_and_exclude(res.ledger, t, len(excl))


def test_adl_with_clean_labels_matches_adl_off():
    data = blob_data(6)
    on = run(TrainConfig(epochs=3, batch_size=4, learning_rate=1e-2, adl_enabled=True, augment=False), 1.0, 0.5, data)
    off = run(TrainConfig(epochs=3, batch_size=4, learning_rate=1e-2, adl_enabled=False, augment=False), 1.0, 0.5, data)
    assert on.ledger.rows == off.ledger.rows
    assert not any(on.summary["excluded_counts"])
    for name in on.model.params:
        np.testing.assert_array_equal(on.model.params[name].data, off.model.params[name].data)


def test_train_config_rejects_unknown_keys():
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"epoch": 3})
    with pytest.raises(ValueError):
        TrainConfig(h1=0.6, h2=0.5)
