import math

import numpy as np
import pytest

from filterformer.encoder import (AttentionParams, PosEncParams, SimScoreParams, attn, attn_all_times,
                                  build_finite_encoder, build_pl_encoder, distortion_band, embedding_distortion,
                                  finite_score_dim, kuratowski, load_encoder, pos_encoding, pre_softmax_embedding,
                                  save_encoder, sim_score, softmax, softmax_right_inverse)
from filterformer.errors import DimensionError, InvalidPathError
from filterformer.paths import PLDomainSpec, SampledPath, sample_pl_path, sup_distance, uniform_grid

from conftest import random_walk_path

GRID = uniform_grid(1.0, 4)


def _path(vals):
    return SampledPath(GRID, vals)


def test_zero_score_is_uniform(rng):
    refs = (random_walk_path(rng, 4), random_walk_path(rng, 4))
    p = SimScoreParams(refs, np.zeros((3, 2)), np.zeros(3), np.zeros((3, 3)), np.zeros(3))
    assert np.allclose(sim_score(p, random_walk_path(rng, 4)), 1 / 3, atol=0, rtol=1e-15)


def test_single_reference_score():
    y = _path([0.0, 1.0, 0.0, 2.0, 1.0])
    p = SimScoreParams((y,), [[1.0]], [0.0], [[1.0]], [0.0])
    assert sim_score(p, y).tolist() == [1.0]


def test_two_reference_score():
    # distances (1, 0) with identity weights: softmax(1, 0)
    r1 = _path([0.0, 1.0, 1.0, 1.0, 1.0])
    r2 = _path(np.zeros(5))
    p = SimScoreParams((r1, r2), np.eye(2), np.zeros(2), np.eye(2), np.zeros(2))
    got = sim_score(p, r2)
    e = math.e
    assert got == pytest.approx([e / (1 + e), 1 / (1 + e)], abs=1e-15)


def test_score_shapes_checked(rng):
    with pytest.raises(DimensionError):
        SimScoreParams((random_walk_path(rng, 4),), np.zeros((2, 2)), np.zeros(2), np.zeros((2, 2)), np.zeros(2))


def test_score_in_open_simplex(rng):
    refs = tuple(random_walk_path(rng, 4) for _ in range(4))
    for _ in range(50):
        p = SimScoreParams(refs, rng.normal(size=(5, 4)), rng.normal(size=5), rng.normal(size=(5, 5)),
                           rng.normal(size=5))
        s = sim_score(p, random_walk_path(rng, 4))
        assert np.all(s > 0) and abs(s.sum() - 1) <= 1e-12


def test_pos_encoding_examples():
    y = _path([0.0, 1.0, 2.0, 3.0, 4.0])
    V = np.array([[1.0], [2.0]])
    assert np.array_equal(pos_encoding(PosEncParams((0.25,), np.zeros((2, 1)), V), y), V)
    assert pos_encoding(PosEncParams((0.25, 0.75), np.eye(2), np.zeros((2, 1))), y).ravel().tolist() == [1.0, 3.0]
    assert pos_encoding(PosEncParams((0.5,), [[1.0], [1.0]], np.zeros((2, 1))), y).ravel().tolist() == [2.0, 2.0]


def test_pos_encoding_rejects_bad_times():
    y = _path(np.zeros(5))
    with pytest.raises(InvalidPathError):
        pos_encoding(PosEncParams((0.3,), [[1.0]], [[0.0]]), y)
    with pytest.raises(InvalidPathError):
        PosEncParams((0.5, 0.25), np.eye(2), np.zeros((2, 1)))


def _small_attention():
    r1 = _path([0.0, 1.0, 1.0, 1.0, 1.0])
    r2 = _path(np.zeros(5))
    sim = SimScoreParams((r1, r2), np.eye(2), np.zeros(2), np.eye(2), np.zeros(2))
    pos = PosEncParams((0.25, 1.0), [[1.0, 0.0], [0.0, 2.0]], [[1.0], [0.0]])
    return AttentionParams(sim, pos, C=[[1.0, 1.0], [1.0, -1.0]])


def test_attn_hand_computed():
    p = _small_attention()
    y = _path([0.0, 0.5, 0.5, 3.0, 3.0])
    # frozen at t = 0.5: (0, .5, .5, .5, .5); distances to refs (0.5, 0.5) -> score (1/2, 1/2)
    # positional rows: (1 * y(.25) + 1, 2 * y(1)) = (1.5, 1.0); product (0.75, 0.5)
    out = attn(p, 0.5, y)
    assert out == pytest.approx([0.5, 1.25, 0.25], abs=1e-15)


def test_attn_first_coordinate_and_mask(rng):
    p = _small_attention()
    for _ in range(50):
        y, z = random_walk_path(rng, 4), random_walk_path(rng, 4)
        k = int(rng.integers(0, 5))
        spliced = SampledPath(GRID, np.vstack([y.values[:k + 1], z.values[k + 1:]]))
        t = GRID[k]
        assert attn(p, t, y)[0] == t
        assert np.array_equal(attn(p, t, y), attn(p, t, spliced))


def test_attn_all_times_matches_pointwise(rng):
    refs = [random_walk_path(rng, 32) for _ in range(5)]
    enc = build_finite_encoder(refs, np.random.default_rng(0))
    y = random_walk_path(rng, 32)
    batch = attn_all_times(enc, y)
    for k in range(33):
        assert np.allclose(batch[k], attn(enc, y.grid[k], y), atol=1e-15)


def test_pl_encoder_output():
    spec = PLDomainSpec(knots=(0.0, 0.25, 0.5, 1.0), bound=2.0)
    grid = uniform_grid(1.0, 8)
    enc = build_pl_encoder(spec, grid)
    y = sample_pl_path(spec, np.random.default_rng(3), 8)
    knot_vals = y.values[[2, 4, 8], 0]
    assert attn(enc, 1.0, y) == pytest.approx(np.r_[1.0, knot_vals], abs=1e-14)
    assert attn(enc, 1.0, SampledPath(grid, np.zeros(9))).tolist() == [1.0, 0.0, 0.0, 0.0]


def test_pl_encoder_injective_and_bilipschitz(rng):
    spec = PLDomainSpec(knots=(0.0, 0.25, 0.5, 0.75, 1.0), bound=1.0, dim=2)
    enc = build_pl_encoder(spec, uniform_grid(1.0, 16))
    ratios = []
    for _ in range(500):
        y, z = sample_pl_path(spec, rng, 16), sample_pl_path(spec, rng, 16)
        diff = np.linalg.norm(attn(enc, 1.0, y) - attn(enc, 1.0, z))
        assert diff > 0
        ratios.append(diff / sup_distance(y, z))
    ratios = np.array(ratios)
    assert 0 < ratios.min() and np.isfinite(ratios.max())
    # knot values determine the path: sup distance <= encoding distance <= sqrt(P) * sup distance
    assert ratios.min() >= 1 - 1e-12 and ratios.max() <= 2 + 1e-12


def test_finite_encoder_two_paths():
    y1 = _path([0.0, 1.0, 2.0, 1.0, 0.0])
    y2 = _path([0.0, -1.0, 0.0, 0.0, 0.0])
    d = sup_distance(y1, y2)
    assert kuratowski([y1, y2], [y1, y2]).tolist() == [[0.0, d], [d, 0.0]]
    enc = build_finite_encoder([y1, y2], np.random.default_rng(5))
    J = enc.sim.B[: enc.sim.B.shape[0] // 2]
    assert np.allclose(pre_softmax_embedding(enc, y1), J @ [0.0, d], atol=1e-15)
    gap = np.linalg.norm(pre_softmax_embedding(enc, y1) - pre_softmax_embedding(enc, y2))
    assert gap == pytest.approx(np.linalg.norm(J @ [-d, d]), abs=1e-14)


def test_finite_encoder_properties(rng):
    paths = [random_walk_path(rng, 16) for _ in range(12)]
    enc = build_finite_encoder(paths, np.random.default_rng(1))
    k = finite_score_dim(12)
    assert enc.sim.width == k + 1 and enc.encoding_dim == k + 1
    lo, hi = distortion_band(12)
    kur = kuratowski(paths, paths)
    dmin, dmax = embedding_distortion(kur, enc.sim.B[:k], kur)
    assert lo <= dmin and dmax <= hi
    codes = np.array([attn(enc, 1.0, y) for y in paths])
    assert np.all(codes[:, 1:] > 0)
    i, j = np.triu_indices(12, 1)
    assert np.linalg.norm(codes[i] - codes[j], axis=1).min() > 0


def test_finite_encoder_recovers_hyperplane_point(rng):
    paths = [random_walk_path(rng, 16) for _ in range(6)]
    enc = build_finite_encoder(paths, np.random.default_rng(2))
    for y in paths:
        h = np.r_[pre_softmax_embedding(enc, y), 1.0]
        assert np.allclose(softmax_right_inverse(attn(enc, 1.0, y)[1:]), h, atol=1e-12)


def test_right_inverse_roundtrip(rng):
    for _ in range(100):
        h = np.r_[rng.normal(size=int(rng.integers(1, 8))), 1.0]
        assert np.allclose(softmax_right_inverse(softmax(h)), h, atol=1e-12)


def test_finite_encoder_errors(rng):
    y = random_walk_path(rng, 8)
    with pytest.raises(InvalidPathError):
        build_finite_encoder([y], rng)
    with pytest.raises(InvalidPathError):
        build_finite_encoder([y, SampledPath(y.grid, y.values.copy())], rng)


def test_encoder_json_roundtrip(tmp_path, rng):
    paths = [random_walk_path(rng, 8) for _ in range(4)]
    enc = build_finite_encoder(paths, np.random.default_rng(3))
    save_encoder(enc, tmp_path / "enc.json")
    back = load_encoder(tmp_path / "enc.json")
    y = random_walk_path(rng, 8)
    assert np.array_equal(attn(enc, 0.5, y), attn(back, 0.5, y))
    ref = sorted(tmp_path.glob("enc_ref_*.csv"))[0]
    lines = ref.read_text().splitlines()
    lines[2] = "0.125,7.0"
    ref.write_text("\n".join(lines) + "\n")
    with pytest.raises(InvalidPathError):
        load_encoder(tmp_path / "enc.json")
