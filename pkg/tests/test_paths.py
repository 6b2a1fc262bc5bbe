import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from filterformer.errors import InvalidPathError
from filterformer.paths import (PLDomainSpec, SampledPath, horizontal_extension, read_path_csv, restrict,
                                sample_pl_path, sup_distance, sup_norm, uniform_grid, write_path_csv)

from conftest import random_walk_path


def test_sup_norm_constant_path():
    p = SampledPath(uniform_grid(1.0, 4), np.tile([3.0, 4.0], (5, 1)))
    assert sup_norm(p) == 5.0


def test_sup_norm_zero_path():
    assert sup_norm(SampledPath(uniform_grid(2.0, 8), np.zeros((9, 3)))) == 0.0


def test_sup_norm_linear_path():
    p = SampledPath([0.0, 0.5, 1.0], [0.0, -1.0, -2.0])
    assert sup_norm(p) == 2.0


def test_invariants_enforced():
    with pytest.raises(InvalidPathError):
        SampledPath([0.0, 0.3, 1.0], [0.0, 1.0, 2.0])
    with pytest.raises(InvalidPathError):
        SampledPath([0.0, 0.5, 1.0], [0.0, np.nan, 2.0])
    with pytest.raises(InvalidPathError):
        SampledPath([0.0, 0.5, 1.0], [0.0, 1.0])
    with pytest.raises(InvalidPathError):
        SampledPath([0.1, 0.5, 0.9], [0.0, 1.0, 2.0])


def test_extension_at_horizon_is_identity():
    p = SampledPath([0.0, 0.5, 1.0], [0.0, 1.0, 2.0])
    assert np.array_equal(horizontal_extension(p, 1.0, 1.0).values, p.values)


def test_extension_freezes():
    p = SampledPath([0.0, 0.5, 1.0], [0.0, 1.0, 2.0])
    assert horizontal_extension(p, 0.5, 1.0).values.ravel().tolist() == [0.0, 1.0, 1.0]


def test_extension_rejects_late_mask():
    p = SampledPath([0.0, 0.5, 1.0], [0.0, 1.0, 2.0])
    with pytest.raises(InvalidPathError):
        horizontal_extension(p, 1.5, 1.0)


def test_extension_isometry_against_restriction(rng):
    for _ in range(100):
        p = random_walk_path(rng, steps=32, dim=2)
        t = p.grid[rng.integers(0, 33)]
        direct = np.max(np.linalg.norm(restrict(p, t), axis=1))
        assert sup_norm(horizontal_extension(p, t)) == direct
        assert direct <= sup_norm(p)


def test_sup_distance_is_metric(rng):
    for _ in range(100):
        p, q, r = (random_walk_path(rng, steps=16, dim=2) for _ in range(3))
        assert sup_distance(p, q) == sup_distance(q, p)
        assert sup_distance(p, r) <= sup_distance(p, q) + sup_distance(q, r) + 1e-15
        assert sup_distance(p, p) == 0.0
        assert sup_distance(p, q) > 0.0


def test_pl_zero_bound_gives_zero_path():
    spec = PLDomainSpec(knots=(0.0, 0.25, 0.5, 1.0), bound=0.0)
    assert sup_norm(sample_pl_path(spec, np.random.default_rng(1), 16)) == 0.0


def test_pl_path_construction(rng):
    spec = PLDomainSpec(knots=(0.0, 0.25, 0.5, 1.0), bound=1.5, dim=2)
    for _ in range(50):
        p = sample_pl_path(spec, rng, 16)
        assert np.all(p.values[0] == 0.0)
        knot_rows = p.values[[4, 8, 16]]
        assert np.linalg.norm(knot_rows, axis=1).max() <= 1.5
        # linear between knots: second differences vanish off the knots
        second = np.diff(p.values, 2, axis=0)
        interior = [i for i in range(1, 16) if i not in (4, 8)]
        assert np.allclose(second[[i - 1 for i in interior]], 0.0, atol=1e-12)


def test_pl_deterministic_seed():
    spec = PLDomainSpec(knots=(0.0, 0.5, 1.0), bound=2.0)
    a = sample_pl_path(spec, np.random.default_rng(42), 8)
    b = sample_pl_path(spec, np.random.default_rng(42), 8)
    assert np.array_equal(a.values, b.values)


def test_pl_rejects_offgrid_knots():
    spec = PLDomainSpec(knots=(0.0, 0.3, 1.0), bound=1.0)
    with pytest.raises(InvalidPathError):
        sample_pl_path(spec, np.random.default_rng(0), 4)


def test_interpolation_off_grid():
    p = SampledPath([0.0, 0.5, 1.0], [0.0, 1.0, 3.0])
    assert p.at(0.75)[0] == pytest.approx(2.0)


def test_csv_roundtrip_exact(tmp_path, rng):
    p = random_walk_path(rng, steps=10, dim=3)
    write_path_csv(p, tmp_path / "p.csv")
    q = read_path_csv(tmp_path / "p.csv")
    assert np.array_equal(p.values, q.values) and np.array_equal(p.grid, q.grid)
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "t,y1,y2,y3"


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=12), st.data())
def test_restriction_nonexpansive(vals, data):
    p = SampledPath(uniform_grid(1.0, len(vals) - 1), vals)
    k = data.draw(st.integers(0, len(vals) - 1))
    assert sup_norm(horizontal_extension(p, p.grid[k])) <= sup_norm(p)


def test_csv_malformed_reports_line(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("t,y1\n0.0,0.0\n0.5,oops\n")
    with pytest.raises(InvalidPathError, match="line 3"):
        read_path_csv(f)
