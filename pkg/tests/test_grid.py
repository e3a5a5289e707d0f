import numpy as np
import pytest

from toksync.codebook import gen_clustered_codebook
from toksync.grid import (
    Clip,
    TokenGrid,
    dyn_distortion_sums,
    dyn_embedding_distortion,
    dynamic_mask,
    hamming_drift,
    mismatch_rate,
)


def grid(values, h=2, w=3):
    return TokenGrid(h, w, np.asarray(values))


def test_token_grid_validates_size():
    with pytest.raises(ValueError):
        TokenGrid(2, 3, np.zeros(5, dtype=np.int64))


def test_token_grid_rejects_negative_ids():
    with pytest.raises(ValueError):
        grid([0, 1, 2, 3, 4, -1])


def test_token_grid_is_read_only():
    g = grid([1, 2, 3, 4, 5, 6])
    with pytest.raises(ValueError):
        g.tokens[0] = 9


def test_with_updates_applies_pointwise():
    g = grid([1, 2, 3, 4, 5, 6])
    h = g.with_updates([(0, 10), (5, 20)])
    assert h.tokens.tolist() == [10, 2, 3, 4, 5, 20]
    # original untouched
    assert g.tokens.tolist() == [1, 2, 3, 4, 5, 6]


def test_with_updates_out_of_range():
    g = grid([1, 2, 3, 4, 5, 6])
    with pytest.raises(IndexError):
        g.with_updates([(6, 1)])


def test_hamming_drift_counts_disagreements():
    a = grid([1, 2, 3, 4, 5, 6])
    b = grid([1, 2, 0, 4, 0, 6])
    assert hamming_drift(a, b) == 2 / 6
    assert hamming_drift(a, a) == 0.0


def test_hamming_drift_shape_mismatch():
    with pytest.raises(ValueError):
        hamming_drift(grid([1, 2, 3, 4, 5, 6]), TokenGrid(3, 2, np.arange(6)))


def test_dynamic_mask():
    m = dynamic_mask(grid([1, 2, 3, 4, 5, 6]), grid([1, 0, 3, 0, 5, 6]))
    assert m.flags.tolist() == [False, True, False, True, False, False]
    assert m.n_dynamic == 2


def test_clip_from_matrix_round_trip():
    mat = np.arange(12).reshape(2, 6)
    clip = Clip.from_matrix(mat, 2, 3, rate_hz=10.0)
    assert clip.n_steps == 2
    assert clip.n_positions == 6
    assert clip.duration_s() == 0.2
    assert np.array_equal(clip.token_matrix, mat)


def test_clip_rejects_mixed_shapes():
    with pytest.raises(ValueError):
        Clip(grids=(grid([1] * 6), TokenGrid(3, 2, np.ones(6, dtype=np.int64))))


def test_mismatch_rate_over_all_cells():
    truth = Clip.from_matrix(np.array([[1, 2, 3, 4, 5, 6], [1, 2, 3, 4, 5, 6]]), 2, 3)
    recon = Clip.from_matrix(np.array([[1, 2, 3, 4, 5, 6], [0, 2, 3, 4, 5, 0]]), 2, 3)
    assert mismatch_rate(truth, recon) == 2 / 12
    assert mismatch_rate(truth, truth) == 0.0


def test_dyn_distortion_static_clip_undefined():
    truth = Clip.from_matrix(np.ones((4, 6), dtype=np.int64), 2, 3)
    cb = gen_clustered_codebook(k=16, dim=8, n_clusters=4, seed=0)
    assert dyn_distortion_sums(truth, truth, cb) == (0.0, 0)
    assert dyn_embedding_distortion(truth, truth, cb) is None


def test_dyn_distortion_counts_only_changed_cells():
    cb = gen_clustered_codebook(k=16, dim=8, n_clusters=4, seed=0)
    truth = Clip.from_matrix(np.array([[1, 1, 1, 1, 1, 1], [2, 1, 1, 1, 1, 3]]), 2, 3)
    # recon nails position 0 but holds the stale token at position 5
    recon = Clip.from_matrix(np.array([[1, 1, 1, 1, 1, 1], [2, 1, 1, 1, 1, 1]]), 2, 3)
    total, count = dyn_distortion_sums(truth, recon, cb)
    assert count == 2
    expected = 1.0 - float(cb.embeddings[3] @ cb.embeddings[1])
    assert total == pytest.approx(expected)
    # perfect recon of a dynamic clip scores zero but stays defined
    total, count = dyn_distortion_sums(truth, truth, cb)
    assert count == 2 and total == pytest.approx(0.0)


def test_dyn_distortion_length_mismatch():
    cb = gen_clustered_codebook(k=16, dim=8, n_clusters=4, seed=0)
    a = Clip.from_matrix(np.ones((3, 6), dtype=np.int64), 2, 3)
    b = Clip.from_matrix(np.ones((2, 6), dtype=np.int64), 2, 3)
    with pytest.raises(ValueError):
        dyn_distortion_sums(a, b, cb)
