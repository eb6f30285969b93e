import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import tally_metrics

from impsim.downstream import (FinetunePolicy, LabeledWindows, LoocvConfig, MissingClassError, PolicyMode,
                               check_partition, finetune, fold_rows, loocv, metrics, predict, predict_logits,
                               stratified_subsample, sweep_data_fraction, sweep_embedding_dim, write_fold_csv)
from impsim.nncore import Sequential, TrainSchedule, stage_rng
from impsim.simpharnet import imp_encoder_specs

FAST = TrainSchedule(max_epochs=6, batch_size=16)


def toy_windows(users=3, per_class=8, classes=3, length=30, seed=0):
    """Class = sine frequency on channel 0; channel 1 is noise."""
    rng = np.random.default_rng(seed)
    x, y, u = [], [], []
    t = np.arange(length) / 20.0
    for user in range(users):
        for c in range(classes):
            for _ in range(per_class):
                s = np.sin(2 * np.pi * (0.5 + c) * t + rng.uniform(0, 6.3)) + 0.1 * rng.normal(size=length)
                x.append(np.column_stack([s, rng.normal(size=length)]))
                y.append(c)
                u.append(f"u{user}")
    return LabeledWindows(np.array(x), np.array(y), np.array(u))


def encoder(dim=16, seed=0):
    return Sequential.from_specs(imp_encoder_specs(2, dim, (8, 8)), np.random.default_rng(seed))


# metrics


def test_metrics_hand_example():
    m = metrics([0, 0, 0, 0], [0, 0, 1, 1], 2)
    assert m["accuracy"] == 0.5
    assert m["per_class_f1"] == [2 / 3, 0.0]
    assert m["macro_f1"] == 1 / 3
    assert m["confusion"] == [[2, 0], [2, 0]]


def test_metrics_perfect_and_single():
    assert metrics([0, 1, 2], [0, 1, 2], 3)["macro_f1"] == 1.0
    m = metrics([1], [1], 2)
    # class 0 has no support and no predictions: it contributes 0
    assert m["accuracy"] == 1.0 and m["per_class_f1"] == [0.0, 1.0]
    m = metrics([0], [0], 1)
    assert m["accuracy"] == 1.0 and m["macro_f1"] == 1.0


def test_metrics_errors():
    with pytest.raises(ValueError):
        metrics([0, 1], [0, 2], 2)
    with pytest.raises(ValueError):
        metrics([], [], 2)
    with pytest.raises(ValueError):
        metrics([0], [0, 1], 2)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6), st.integers(1, 40), st.integers(0, 2 ** 32 - 1))
def test_metrics_match_tally(c, n, seed):
    rng = np.random.default_rng(seed)
    p, y = rng.integers(0, c, n), rng.integers(0, c, n)
    acc, f1, per = tally_metrics(p, y, c)
    m = metrics(p, y, c)
    assert m["accuracy"] == acc and m["macro_f1"] == f1 and m["per_class_f1"] == per


# predict


def test_predict_logits_ties_and_shift():
    cls, probs = predict_logits(np.zeros((1, 4)))
    assert cls[0] == 0 and np.allclose(probs, 0.25)
    z = np.random.default_rng(0).normal(size=(20, 5))
    for s in (z + 7.3, z * 3.0):
        c2, p2 = predict_logits(s)
        assert np.array_equal(c2, predict_logits(z)[0])
    assert np.allclose(predict_logits(z + 7.3)[1], predict_logits(z)[1], atol=1e-12)
    assert np.all(np.abs(predict_logits(z)[1].sum(1) - 1) <= 1e-9)


def test_predict_dominant_logit():
    z = np.zeros((1, 10))
    z[0, 3] = 10 + np.log(9)  # margin >= 10 over each of the others combined
    cls, probs = predict_logits(z)
    assert cls[0] == 3 and probs[0, 3] >= 1 - 1e-3


def test_predict_single_and_batch():
    data = toy_windows(users=2, per_class=4)
    model, _ = finetune(None, data, 3, FinetunePolicy("no_pretrain"), TrainSchedule(max_epochs=1), stage_rng(0, "p"),
                        embedding_dim=16)
    c, p = predict(model, data.x[0])
    cs, ps = predict(model, data.x[:3])
    assert c == cs[0] and np.allclose(p, ps[0]) and abs(p.sum() - 1) < 1e-9
    with pytest.raises(ValueError):
        predict(model, data.x[0, :, 0])


# finetune


def test_frozen_keeps_encoder_bit_identical():
    data = toy_windows()
    enc = encoder()
    _, rep = finetune(enc, data, 3, FinetunePolicy("frozen"), FAST, stage_rng(0, "f"))
    assert rep["encoder_digest_before"] == rep["encoder_digest_after"]
    assert rep["unfreeze_epoch"] is None


def test_encoder_argument_is_not_modified():
    data = toy_windows()
    enc = encoder()
    before = [l.params.get("W", np.zeros(0)).copy() for l in enc.layers]
    finetune(enc, data, 3, FinetunePolicy("late_learning", 1, 1), FAST, stage_rng(0, "f"))
    assert all(np.array_equal(a, l.params.get("W", np.zeros(0))) for a, l in zip(before, enc.layers))


def test_late_learning_recovers_discarded_feature():
    # labels depend on channel 1 only; the "pretrained" encoder never looks at it
    rng = np.random.default_rng(1)
    n, length = 240, 30
    y = rng.integers(0, 2, n)
    x = np.stack([rng.normal(size=(n, length)), rng.normal(size=(n, length)) * 0.3 + (2 * y - 1)[:, None]], axis=2)
    data = LabeledWindows(x, y, np.zeros(n))
    enc = encoder(8, 2)
    enc.layers[0].params["W"][:, 1, :] = 0.0
    policy = FinetunePolicy("late_learning", freeze_epochs_min=5, unfreeze_plateau_patience=3)
    _, rep = finetune(enc, data, 2, policy, TrainSchedule(max_epochs=40, batch_size=32), stage_rng(0, "ll"))
    assert rep["unfreeze_epoch"] is not None and rep["unfreeze_epoch"] >= 5
    after = [h["val_loss"] for h in rep["history"] if h["encoder_trainable"]]
    assert min(after) < rep["best_frozen_val_loss"]
    assert rep["encoder_digest_before"] != rep["encoder_digest_after"]


def test_missing_class_listed():
    data = toy_windows(users=1)
    keep = data.y != 2
    with pytest.raises(MissingClassError, match=r"\[2\]"):
        finetune(None, data.subset(keep), 3, FinetunePolicy("no_pretrain"), FAST, stage_rng(0, "m"), 16)


def test_pretrained_policy_needs_encoder():
    with pytest.raises(ValueError):
        finetune(None, toy_windows(1), 3, FinetunePolicy("frozen"), FAST, stage_rng(0, "m"))


def test_head_output_arity():
    data = toy_windows(users=1, classes=4, per_class=3)
    model, _ = finetune(encoder(), data, 4, FinetunePolicy("frozen"), TrainSchedule(max_epochs=1), stage_rng(0, "h"))
    assert model.logits(data.x).shape == (len(data), 4)


# leave-one-user-out


def cfg(mode="no_pretrain", seeds=(0, 1), fraction=1.0, dim=16):
    return LoocvConfig(FinetunePolicy(mode, 1, 2), FAST, seeds, dim, fraction)


def test_loocv_partition_and_folds():
    data = toy_windows(users=3)
    rep = loocv(data, 3, cfg("frozen"), encoder_provider=lambda s: encoder(seed=s))
    assert rep["fold_count"] == 3 and len(rep["folds"]) == 6
    check_partition(rep, data)
    for seed in (0, 1):
        rows = [r for r in rep["folds"] if r["seed"] == seed]
        assert sum(r["n_test"] for r in rows) == len(data)
        assert all(r["n_train"] + r["n_test"] == len(data) for r in rows)


def test_loocv_ten_users():
    data = toy_windows(users=10, per_class=2)
    rep = loocv(data, 3, LoocvConfig(FinetunePolicy("no_pretrain"), TrainSchedule(max_epochs=1), (0,), 8))
    assert rep["fold_count"] == 10
    assert sorted(r["test_user"] for r in rep["folds"]) == sorted(f"u{i}" for i in range(10))
    check_partition(rep, data)


def test_partition_check_detects_tampering():
    data = toy_windows(users=2, per_class=2)
    rep = loocv(data, 3, LoocvConfig(FinetunePolicy("no_pretrain"), TrainSchedule(max_epochs=1), (0,), 8))
    rep["folds"][0]["test_indices_digest"] = "0" * 16
    with pytest.raises(AssertionError):
        check_partition(rep, data)


def test_loocv_is_reproducible():
    data = toy_windows(users=2)
    a = loocv(data, 3, cfg(seeds=(3,)))
    b = loocv(data, 3, cfg(seeds=(3,)))
    assert a == b


def test_loocv_errors():
    data = toy_windows(users=2, per_class=2)
    with pytest.raises(ValueError, match="no data"):
        loocv(data, 3, cfg(), user_ids=["u0", "u1", "u7"])
    with pytest.raises(ValueError):
        loocv(toy_windows(users=1), 3, cfg())
    with pytest.raises(ValueError):
        loocv(data, 3, cfg("frozen"))


def test_extra_train_never_tested():
    data = toy_windows(users=2, per_class=3)
    extra = toy_windows(users=1, per_class=2, seed=9)
    rep = loocv(data, 3, cfg(seeds=(0,)), extra_train=LabeledWindows(extra.x, extra.y, np.full(len(extra), "sim")))
    assert rep["extra_train"] == len(extra)
    assert all(r["n_train"] == len(data) // 2 + len(extra) for r in rep["folds"])
    check_partition(rep, data)


def test_fraction_one_equals_direct_finetune():
    data = toy_windows(users=2)
    c = cfg(seeds=(5,))
    rep = loocv(data, 3, c)
    test_user = rep["folds"][0]["test_user"]
    tr = data.users != test_user
    model, _ = finetune(None, data.subset(tr), 3, c.policy, c.schedule.replace(rng_seed=5),
                        c.rng(5, f"finetune/{test_user}"), c.embedding_dim)
    preds, _ = predict(model, data.x[~tr])
    assert metrics(preds, data.y[~tr], 3)["macro_f1"] == rep["folds"][0]["macro_f1"]


def test_stratified_subsample():
    y = np.repeat([0, 1, 2], [10, 20, 30])
    idx = stratified_subsample(np.random.default_rng(0), y, 0.5, 3)
    assert np.bincount(y[idx]).tolist() == [5, 10, 15]
    assert np.array_equal(stratified_subsample(np.random.default_rng(0), y, 1.0, 3), np.arange(60))
    with pytest.raises(MissingClassError):
        stratified_subsample(np.random.default_rng(0), np.array([0, 0, 0, 1]), 0.2, 2)
    with pytest.raises(ValueError):
        stratified_subsample(np.random.default_rng(0), y, 0.0, 3)


def test_fold_csv(tmp_path):
    data = toy_windows(users=2, per_class=2)
    rep = loocv(data, 3, LoocvConfig(FinetunePolicy("no_pretrain"), TrainSchedule(max_epochs=1), (0, 1), 8))
    write_fold_csv(tmp_path / "f.csv", rep)
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0].startswith("mode,data_fraction,seed,test_user") and len(lines) == 1 + 4
    assert len(fold_rows(rep)) == 4


# sweeps


def test_sweep_rows_and_errors():
    fake = {"macro_f1_mean": 0.5, "macro_f1_std": 0.1, "accuracy_mean": 0.6}
    rows = sweep_embedding_dim([16, 64, 256], lambda d: fake)
    assert [r["embedding_dim"] for r in rows] == [16, 64, 256]
    rows = sweep_data_fraction([0.2, 0.6, 1.0], lambda f, m: fake)
    assert len(rows) == 9
    assert {(r["mode"], r["fraction"]) for r in rows} == {(m.value, f) for m in PolicyMode for f in (0.2, 0.6, 1.0)}
    with pytest.raises(ValueError):
        sweep_embedding_dim([], lambda d: fake)
    with pytest.raises(ValueError):
        sweep_data_fraction([], lambda f, m: fake)
    with pytest.raises(ValueError):
        sweep_data_fraction([0.5, 1.2], lambda f, m: fake)


def test_fraction_sweep_empty_class_error():
    data = toy_windows(users=2, per_class=1)

    def run(f, mode):
        return loocv(data, 3, LoocvConfig(FinetunePolicy(mode), FAST, (0,), 8, f))

    with pytest.raises(MissingClassError):
        sweep_data_fraction([0.2], run, modes=[PolicyMode.NO_PRETRAIN])
