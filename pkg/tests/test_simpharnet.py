import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from impsim.nncore import TrainSchedule, check_function, stage_rng
from impsim.simpharnet import (PretrainConfig, cosine, encode_windows, info_nce, info_nce_from_similarities,
                               pretrain, read_text_embeddings, retrieval, write_text_embeddings)


def test_cosine_examples():
    v = np.array([0.3, -1.2, 2.0])
    assert cosine(v, v) == pytest.approx(1.0, abs=1e-15)
    assert cosine([1, 0], [0, 1]) == 0.0
    assert cosine(v, -v) == pytest.approx(-1.0, abs=1e-15)


def test_cosine_errors():
    with pytest.raises(ValueError):
        cosine([1e-13, 0], [1, 0])
    with pytest.raises(ValueError):
        cosine([1, 0], [1, 0, 0])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-3, 1e3))
def test_cosine_scale_invariant(seed, alpha):
    rng = np.random.default_rng(seed)
    q, k = rng.normal(size=5), rng.normal(size=5)
    assert abs(cosine(alpha * q, k) - cosine(q, k)) <= 1e-12
    assert -1.0 <= cosine(q, k) <= 1.0


def test_info_nce_identical_embeddings():
    e = np.ones((2, 4))
    assert abs(info_nce(e, e)[0] - math.log(2)) <= 1e-9


def test_info_nce_cosine_extremes():
    q = np.array([[1.0, 0.0], [-1.0, 0.0]])
    loss, _ = info_nce(q, q.copy())
    assert abs(loss - math.log(1 + math.exp(-2))) <= 1e-9
    assert loss == pytest.approx(0.12693, abs=1e-5)


def test_info_nce_needs_negatives():
    with pytest.raises(ValueError):
        info_nce(np.ones((1, 3)), np.ones((1, 3)))


@pytest.mark.parametrize("n", [2, 4, 8])
@pytest.mark.parametrize("temperature", [1.0, 0.3])
def test_info_nce_gradients(n, temperature):
    rng = np.random.default_rng(n)
    q, k = rng.normal(size=(n, 6)), rng.normal(size=(n, 6))
    res = check_function(lambda a, b: info_nce(a, b, temperature), [q, k], rng, max_probes=None)
    assert max(res.values()) < 1e-4


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 9))
def test_row_shift_invariance(seed, n):
    rng = np.random.default_rng(seed)
    s = rng.uniform(-1, 1, size=(n, n))
    shifted = s + rng.normal(size=(n, 1)) * 3
    assert abs(info_nce_from_similarities(s)[0] - info_nce_from_similarities(shifted)[0]) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 9), st.floats(-300, 300))
def test_loss_bounds(seed, n, log_scale):
    rng = np.random.default_rng(seed)
    q, k = rng.normal(size=(n, 4)) * 10.0 ** (log_scale / 100), rng.normal(size=(n, 4))
    loss, (dq, dk) = info_nce(q, k)
    assert np.isfinite(loss) and loss >= 0
    assert np.all(np.isfinite(dq)) and np.all(np.isfinite(dk))
    c = rng.uniform(-1, 1, size=(n, 1))
    assert abs(info_nce_from_similarities(np.repeat(c, n, axis=1))[0] - math.log(n)) <= 1e-12


def waves(rng, freq, n, length=50):
    t = np.arange(length) / 20.0
    out = []
    for _ in range(n):
        ph = rng.uniform(0, 2 * np.pi)
        mag = np.sin(2 * np.pi * freq * rng.uniform(0.9, 1.1) * t + ph) + 0.1 * rng.normal(size=length)
        out.append(np.column_stack([mag, 0.5 * mag]))
    return np.array(out)


def two_families(rng, per_prompt=20, dim=32):
    win, text = {}, {}
    centers = rng.normal(size=(2, dim))
    for j in range(3):
        for fam, freq in ((0, 0.4), (1, 3.0)):
            pid = f"f{fam}_{j}"
            win[pid] = waves(rng, freq, per_prompt)
            text[pid] = centers[fam] + 0.3 * rng.normal(size=dim)
    return win, text


def test_pretrain_separable_families():
    rng = stage_rng(0, "families")
    win, text = two_families(rng)
    cfg = PretrainConfig(embedding_dim=32, text_hidden=64, batch_size=6)
    res = pretrain(win, text, TrainSchedule(max_epochs=30), cfg, stage_rng(0, "pretrain"))
    # held-out retrieval at family level: the matched prompt's family wins
    test = stage_rng(1, "families")
    fam_ok = []
    ids = res.prompt_ids
    k = np.stack([text[p] for p in ids])
    for pid in ids:
        w = res.normalizer.apply(waves(test, 0.4 if pid.startswith("f0") else 3.0, 10))
        q = encode_windows(res.imp_encoder, w)
        kk = res.text_encoder.forward(k, False)
        sims = (q / np.linalg.norm(q, axis=1, keepdims=True)) @ (kk / np.linalg.norm(kk, axis=1, keepdims=True)).T
        fam_ok += [ids[j][:2] == pid[:2] for j in np.argmax(sims, axis=1)]
    assert np.mean(fam_ok) >= 0.9
    rep = res.report
    assert 0.8 * rep["ln_batch"] <= rep["initial_loss"] <= 1.2 * rep["ln_batch"]
    assert rep["epochs_run"] == len(rep["history"]) and 0 <= rep["val_top1"] <= 1


def test_pretrain_two_prompt_retrieval():
    rng = stage_rng(0, "two")
    win = {"low": waves(rng, 0.4, 40), "high": waves(rng, 3.0, 40)}
    text = {"low": rng.normal(size=16), "high": rng.normal(size=16)}
    cfg = PretrainConfig(embedding_dim=32, text_hidden=32, steps_per_epoch=10)
    res = pretrain(win, text, TrainSchedule(max_epochs=30), cfg, stage_rng(0, "p"))
    assert res.report["val_top1"] >= 0.9


def test_pretrain_requires_two_prompts():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        pretrain({"a": waves(rng, 1.0, 3)}, {"a": np.ones(8)}, TrainSchedule(max_epochs=1), PretrainConfig(),
                 rng)


def test_pretrain_missing_text_embedding():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError, match="no text embedding"):
        pretrain({"a": waves(rng, 1.0, 3), "b": waves(rng, 2.0, 3)}, {"a": np.ones(8)},
                 TrainSchedule(max_epochs=1), PretrainConfig(), rng)


@pytest.mark.parametrize("dim", [16, 64, 256, 1024])
def test_embedding_dim_sweep_runs(dim):
    rng = stage_rng(dim, "sweep")
    win, text = two_families(rng, per_prompt=4, dim=8)
    cfg = PretrainConfig(embedding_dim=dim, text_hidden=16, batch_size=6, steps_per_epoch=2)
    res = pretrain(win, text, TrainSchedule(max_epochs=1), cfg, rng)
    assert res.report["embedding_dim"] == dim
    assert res.imp_encoder.layers[-1].out_features == res.text_encoder.layers[-1].out_features == dim


def test_pretrain_is_deterministic():
    def run():
        win, text = two_families(stage_rng(3, "d"), per_prompt=4, dim=8)
        cfg = PretrainConfig(embedding_dim=16, text_hidden=16, batch_size=6, steps_per_epoch=3)
        return pretrain(win, text, TrainSchedule(max_epochs=2), cfg, stage_rng(3, "p"))
    a, b = run(), run()
    assert a.model.digest() == b.model.digest() and a.report == b.report


def test_encoder_accepts_other_window_lengths():
    win, text = two_families(stage_rng(4, "d"), per_prompt=3, dim=8)
    cfg = PretrainConfig(embedding_dim=16, text_hidden=16, batch_size=6, steps_per_epoch=1)
    res = pretrain(win, text, TrainSchedule(max_epochs=1), cfg, stage_rng(4, "p"))
    for length in (50, 60):
        assert encode_windows(res.imp_encoder, np.zeros((2, length, 2))).shape == (2, 16)
    loss, acc = retrieval(res.model, res.normalizer.apply(win["f0_0"]), np.zeros(3, dtype=int),
                          np.stack([text[p] for p in res.prompt_ids]))
    assert np.isfinite(loss) and 0 <= acc <= 1


def test_text_embedding_csv_roundtrip(tmp_path):
    vec = {"p0": np.array([0.1, -0.2, 0.3]), "p1": np.array([1.0, 2.0, 3.0])}
    write_text_embeddings(tmp_path / "t.csv", vec, {"p0": "curling", "p1": "waving"})
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "prompt_id,class_hint,dim0,dim1,dim2"
    back, hints = read_text_embeddings(tmp_path / "t.csv")
    assert hints == {"p0": "curling", "p1": "waving"}
    assert all(np.array_equal(back[k], vec[k]) for k in vec)


def test_text_embedding_csv_ragged(tmp_path):
    (tmp_path / "t.csv").write_text("prompt_id,class_hint,dim0,dim1\np0,a,1.0\n")
    with pytest.raises(ValueError):
        read_text_embeddings(tmp_path / "t.csv")
