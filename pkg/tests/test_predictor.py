import math

import numpy as np
import pytest

from toksync.grid import Clip
from toksync.predictor import (
    CountModel,
    PredictorConfig,
    SampleSpec,
    clip_nll_sums,
    default_interpolation_weights,
    eval_perplexity,
    load_model,
    predict,
    predict_targets,
    sample_indices,
    save_model,
    train,
)


def alt_clip():
    # one position, tokens 1,2,1,2,1,2
    mat = np.array([[1], [2], [1], [2], [1], [2]], dtype=np.int64)
    return Clip.from_matrix(mat, 1, 1)


def test_default_weights_shape_and_sum():
    for ell in (1, 2, 4, 6):
        w = default_interpolation_weights(ell)
        assert len(w) == ell + 2
        assert sum(w) == pytest.approx(1.0, abs=1e-12)
    assert default_interpolation_weights(1) == (0.85, 0.05, 0.1)
    w2 = default_interpolation_weights(2)  # order 2 gets twice order 1's share
    assert w2[0] == pytest.approx(2 * w2[1])


def test_config_validation():
    with pytest.raises(ValueError):
        PredictorConfig(context_len=0)
    with pytest.raises(ValueError):
        PredictorConfig(smoothing_k=0.0)
    with pytest.raises(ValueError):
        PredictorConfig(context_len=1, interpolation_weights=(0.5, 0.5))
    with pytest.raises(ValueError):
        PredictorConfig(context_len=1, interpolation_weights=(0.9, 0.2, -0.1))
    with pytest.raises(ValueError):
        PredictorConfig(context_len=1, interpolation_weights=(0.9, 0.1, 0.0))
    cfg = PredictorConfig(context_len=2)
    assert cfg.weight_for_order(2) == cfg.interpolation_weights[0]
    assert cfg.uniform_weight == cfg.interpolation_weights[-1]


def test_train_hand_counts():
    cfg = PredictorConfig(context_len=1)
    model = train([alt_clip()], cfg, k=3)
    assert model.count(0, (1,), 2) == 3
    assert model.count(0, (2,), 1) == 2
    assert model.count(0, (1,), 1) == 0
    assert model.count(0, (), 2) == 3  # order 0: marginal target counts
    assert model.count(0, (), 1) == 2
    assert model.count(0, (0,), 0) == 0  # unseen context


def test_train_counts_add_over_clips():
    cfg = PredictorConfig(context_len=1)
    one = train([alt_clip()], cfg, k=3)
    two = train([alt_clip(), alt_clip()], cfg, k=3)
    assert two.count(0, (1,), 2) == 2 * one.count(0, (1,), 2)


def test_train_validation():
    cfg = PredictorConfig(context_len=4)
    with pytest.raises(ValueError):
        train([], cfg, k=3)
    short = Clip.from_matrix(np.zeros((3, 1), dtype=np.int64), 1, 1)
    with pytest.raises(ValueError, match="context_len"):
        train([short], cfg, k=3)
    tall = Clip.from_matrix(np.zeros((6, 1), dtype=np.int64), 1, 1)
    with pytest.raises(ValueError, match="overflow"):
        train([tall], cfg, k=65536)


def test_predict_hand_mixture():
    cfg = PredictorConfig(context_len=1)  # weights (0.85, 0.05, 0.1), k_s = 0.1
    model = train([alt_clip()], cfg, k=3)
    p = predict(model, cfg, 0, [1])
    expected = (
        0.85 * (3 + 0.1) / (3 + 0.1 * 3)
        + 0.05 * (3 + 0.1) / (5 + 0.1 * 3)
        + 0.1 / 3
    )
    assert p[2] == pytest.approx(expected, rel=1e-12)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    assert (p >= 0.1 / 3 - 1e-15).all()  # uniform floor lower-bounds every token


def test_predict_sharpens_as_smoothing_vanishes():
    cfg = PredictorConfig(context_len=1, smoothing_k=1e-9)
    model = train([alt_clip()], cfg, k=3)
    p = predict(model, cfg, 0, [1])
    # order 1 is deterministic, order 0 gives 3/5, floor gives 1/3
    assert p[2] == pytest.approx(0.85 + 0.05 * 0.6 + 0.1 / 3, rel=1e-6)


def test_predict_validation():
    cfg = PredictorConfig(context_len=1)
    model = train([alt_clip()], cfg, k=3)
    with pytest.raises(ValueError):
        predict(model, cfg, 5, [1])
    with pytest.raises(ValueError):
        predict(model, cfg, 0, [1, 2])
    with pytest.raises(ValueError):
        predict(model, cfg, 0, [7])


def test_predict_targets_matches_scalar():
    rng = np.random.default_rng(0)
    mat = rng.integers(0, 5, size=(30, 4)).astype(np.int64)
    clip = Clip.from_matrix(mat, 2, 2)
    cfg = PredictorConfig(context_len=2)
    model = train([clip], cfg, k=5)
    us = rng.integers(0, 4, size=40)
    hists = rng.integers(0, 5, size=(40, 2))
    tgts = rng.integers(0, 5, size=40)
    batch = predict_targets(model, cfg, us, hists, tgts)
    for i in range(40):
        scalar = predict(model, cfg, int(us[i]), hists[i])[tgts[i]]
        assert batch[i] == scalar


def test_uniform_floor_only_perplexity_is_vocab_size():
    k = 512
    cfg = PredictorConfig(context_len=1, interpolation_weights=(0.0, 0.0, 1.0))
    rng = np.random.default_rng(1)
    mat = rng.integers(0, k, size=(20, 9)).astype(np.int64)
    clip = Clip.from_matrix(mat, 3, 3)
    model = train([clip], cfg, k=k)
    p = predict(model, cfg, 0, [0])
    assert np.array_equal(p, np.full(k, 1.0 / k))
    ppl = eval_perplexity(model, cfg, [clip], [clip], "all", SampleSpec(full=True))
    assert ppl == pytest.approx(k, rel=1e-12)


def test_perplexity_at_least_one_and_low_on_constant_stream():
    mat = np.full((40, 4), 3, dtype=np.int64)
    clip = Clip.from_matrix(mat, 2, 2)
    cfg = PredictorConfig(context_len=2)
    model = train([clip], cfg, k=8)
    ppl = eval_perplexity(model, cfg, [clip], [clip], "all", SampleSpec(full=True))
    assert 1.0 <= ppl < 1.3


def test_perplexity_none_for_dynamic_filter_on_static_clip():
    mat = np.full((20, 4), 1, dtype=np.int64)
    clip = Clip.from_matrix(mat, 2, 2)
    cfg = PredictorConfig(context_len=1)
    model = train([clip], cfg, k=4)
    assert eval_perplexity(model, cfg, [clip], [clip], "dynamic", SampleSpec(full=True)) is None


def test_degraded_histories_do_not_beat_perfect_sync():
    rng = np.random.default_rng(2)
    mats = [rng.integers(0, 6, size=(30, 9)).astype(np.int64) for _ in range(4)]
    clips = [Clip.from_matrix(m, 3, 3) for m in mats]
    cfg = PredictorConfig(context_len=2)
    model = train(clips, cfg, k=6)
    perfect = eval_perplexity(model, cfg, clips, clips, "all", SampleSpec(full=True))
    garbled = [Clip.from_matrix((m + 1) % 6, 3, 3) for m in mats]
    degraded = eval_perplexity(model, cfg, clips, garbled, "all", SampleSpec(full=True))
    assert degraded >= perfect


def test_sample_indices_are_deterministic_and_bounded():
    spec = SampleSpec(n_timesteps=8, n_positions=5, seed=3)
    ts, us = sample_indices(spec, 0, n_steps=40, n_positions=16, context_len=4)
    ts2, us2 = sample_indices(spec, 0, n_steps=40, n_positions=16, context_len=4)
    assert np.array_equal(ts, ts2) and np.array_equal(us, us2)
    assert ts.size == 8 and us.size == 5
    assert ts.min() >= 4 and ts.max() < 40 and us.max() < 16
    assert np.all(np.diff(ts) > 0) and np.all(np.diff(us) > 0)
    ts3, _ = sample_indices(spec, 1, n_steps=40, n_positions=16, context_len=4)
    assert not np.array_equal(ts, ts3)


def test_sample_indices_full_covers_everything():
    ts, us = sample_indices(SampleSpec(full=True), 7, n_steps=10, n_positions=6, context_len=2)
    assert ts.tolist() == list(range(2, 10))
    assert us.tolist() == list(range(6))
    with pytest.raises(ValueError):
        sample_indices(SampleSpec(), 0, n_steps=3, n_positions=4, context_len=4)


def test_clip_nll_sums_split():
    rng = np.random.default_rng(4)
    mat = rng.integers(0, 5, size=(20, 4)).astype(np.int64)
    clip = Clip.from_matrix(mat, 2, 2)
    cfg = PredictorConfig(context_len=1)
    model = train([clip], cfg, k=5)
    nll_all, n_all, nll_dyn, n_dyn = clip_nll_sums(
        model, cfg, mat, mat, SampleSpec(full=True), 0
    )
    assert n_all == 19 * 4
    changed = int((mat[1:] != mat[:-1]).sum())
    assert n_dyn == changed
    assert 0.0 <= nll_dyn <= nll_all
    assert math.exp(nll_all / n_all) >= 1.0


def test_save_load_round_trip(tmp_path):
    cfg = PredictorConfig(context_len=2)
    rng = np.random.default_rng(5)
    mat = rng.integers(0, 6, size=(25, 4)).astype(np.int64)
    clip = Clip.from_matrix(mat, 2, 2)
    model = train([clip], cfg, k=6)
    path = tmp_path / "probe.npz"
    save_model(model, path)
    back = load_model(path)
    assert isinstance(back, CountModel)
    assert (back.k, back.context_len, back.n_positions) == (6, 2, 4)
    p0 = predict(model, cfg, 1, [2, 3])
    p1 = predict(back, cfg, 1, [2, 3])
    assert np.array_equal(p0, p1)


def test_load_model_missing_arrays(tmp_path):
    path = tmp_path / "bad.npz"
    np.savez(path, k=np.array(4), context_len=np.array(2), n_positions=np.array(1))
    with pytest.raises(ValueError, match="missing array"):
        load_model(path)
