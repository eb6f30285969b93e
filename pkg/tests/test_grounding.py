import numpy as np
import pytest

from impsim.grounding import (FEATURES, AblationMode, GroundingData, GroundingModel, grounding_forward, make_windows,
                              r_squared, r_squared_report, train_grounding)
from impsim.harness.synth import grounding_affine_dataset
from impsim.nncore import TrainSchedule, load_checkpoint, save_checkpoint, stage_rng
from impsim.signal import WindowSpec


def windows_pair(rng, n=3):
    return rng.normal(size=(n, 60)), rng.normal(size=(n, 60, 52, 3))


def test_encoders_emit_512_features():
    m = GroundingModel.create(np.random.default_rng(0))
    rng = np.random.default_rng(1)
    p, q = windows_pair(rng)
    fp = m.net.blocks["path"].forward(p[:, None, :])
    fq = m.net.blocks["pose"].forward(q.reshape(3, 60, 156).transpose(0, 2, 1))
    assert fp.shape == fq.shape == (3, FEATURES)
    assert m.predict(p, q).shape == (3, 2)


def test_zero_final_layer_outputs_zero():
    m = GroundingModel.create(np.random.default_rng(0))
    last = m.net.blocks["decoder"].layers[-1]
    last.params["W"][:] = 0.0
    last.params["b"][:] = 0.0
    p, q = windows_pair(np.random.default_rng(2))
    assert np.all(m.predict(p, q) == 0.0)


def test_pose_only_ignores_path():
    m = GroundingModel.create(np.random.default_rng(0), AblationMode.POSE_ONLY)
    rng = np.random.default_rng(3)
    p, q = windows_pair(rng)
    assert np.array_equal(m.predict(p, q), m.predict(rng.normal(size=p.shape) * 50, q))


def test_distance_only_ignores_pose_permutation():
    m = GroundingModel.create(np.random.default_rng(0), AblationMode.DISTANCE_ONLY)
    rng = np.random.default_rng(4)
    p, q = windows_pair(rng)
    shuffled = q.reshape(3, -1)[:, rng.permutation(60 * 156)].reshape(q.shape)
    assert np.array_equal(m.predict(p, q), m.predict(p, shuffled))


def test_deterministic_output():
    p, q = windows_pair(np.random.default_rng(5), 1)
    a = grounding_forward(GroundingModel.create(stage_rng(1, "g")), p[0], q[0])
    b = grounding_forward(GroundingModel.create(stage_rng(1, "g")), p[0], q[0])
    assert a == b and len(a) == 2


def test_shape_errors():
    m = GroundingModel.create(np.random.default_rng(0))
    with pytest.raises(ValueError):
        grounding_forward(m, np.zeros(59), np.zeros((59, 52, 3)))
    with pytest.raises(ValueError):
        grounding_forward(m, np.zeros(60), np.zeros((60, 51, 3)))


def test_make_windows_targets_last_frame():
    T = 100
    d = make_windows(np.arange(T, dtype=float), np.zeros((T, 52, 3)), np.column_stack([np.arange(T), -np.arange(T)]),
                     WindowSpec(60, 1))
    assert len(d) == 41
    assert d.target[0].tolist() == [59, -59] and d.path[0, -1] == 59
    assert d.target[-1].tolist() == [99, -99]


def test_r_squared_examples():
    t = np.array([1.0, 2.0, 3.0, 5.0])
    assert r_squared(t, t) == 1.0
    assert r_squared(np.full(4, t.mean()), t) == 0.0
    assert r_squared([1, 2, 2], [1, 2, 3]) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(ValueError):
        r_squared([1, 2, 3], [2, 2, 2])
    with pytest.raises(ValueError):
        r_squared([1.0], [1.0])


def test_r_squared_report_channels():
    t = np.random.default_rng(0).normal(size=(10, 2))
    rep = r_squared_report(t, t)
    assert rep == {"magnitude": 1.0, "phase": 1.0, "mean": 1.0}


def test_empty_dataset_rejected():
    empty = GroundingData(np.zeros((0, 60)), np.zeros((0, 60, 156)), np.zeros((0, 2)))
    with pytest.raises(ValueError):
        train_grounding(empty, "both", TrainSchedule(max_epochs=1), np.random.default_rng(0))


@pytest.fixture(scope="module")
def small_affine():
    return grounding_affine_dataset(seed=1, recordings=1, frames=1200, test_frames=600, pose_weight=0.0)


def test_training_loss_non_increasing_first_epochs(small_affine):
    train, test = small_affine
    _, rep = train_grounding(train, "both", TrainSchedule(max_epochs=5), stage_rng(0, "g"), test=test)
    losses = [h["train_eval_loss"] for h in rep["history"]]
    assert len(losses) == 5
    assert all(b <= a for a, b in zip(losses, losses[1:]))
    assert rep["val_r2"]["mean"] >= 0.0
    assert {"magnitude", "phase", "mean"} <= set(rep["test_r2"])


def test_checkpoint_roundtrip(small_affine, tmp_path):
    train, test = small_affine
    m, _ = train_grounding(train, "distance_only", TrainSchedule(max_epochs=2), stage_rng(0, "g"))
    save_checkpoint(tmp_path / "g.npz", m.net, m.meta())
    net, meta, _, _ = load_checkpoint(tmp_path / "g.npz")
    back = GroundingModel.from_checkpoint(net, meta)
    assert np.array_equal(back.predict(test.path, test.pose), m.predict(test.path, test.pose))


@pytest.mark.slow
def test_affine_in_path_length_is_learned():
    train, test = grounding_affine_dataset(seed=0, recordings=3, pose_weight=0.0)
    r2 = {}
    for mode in ("both", "distance_only", "pose_only"):
        _, rep = train_grounding(train, mode, TrainSchedule(max_epochs=40), stage_rng(0, mode), test=test)
        r2[mode] = rep["test_r2"]["mean"]
    assert r2["both"] >= 0.95 and r2["distance_only"] >= 0.95
    assert r2["pose_only"] <= 0.1
