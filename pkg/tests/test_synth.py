import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from igmra.synth import (HEIGHT, T_MAX, T_MIN, StreamSource, hyperplane, interleave, plane_source, roll_map,
                         roll_plane_patch, swiss_roll, swiss_roll_source)


def test_roll_ranges_and_map():
    pts, t, h = swiss_roll(5000, 0, return_params=True)
    assert pts.shape == (5000, 3)
    assert t.min() >= T_MIN and t.max() <= T_MAX
    assert h.min() >= 0 and h.max() <= HEIGHT
    np.testing.assert_allclose(pts, roll_map(t, h), atol=0)
    np.testing.assert_allclose(roll_map(2 * np.pi, 1.0), [2 * np.pi, 1.0, 0.0], atol=1e-12)


def test_roll_parameter_is_uniform():
    _, t, _ = swiss_roll(100_000, 1, return_params=True)
    # U(1.5pi, 4.5pi) has mean 3pi and sd 3pi/sqrt(12)
    stderr = 3 * np.pi / np.sqrt(12) / np.sqrt(t.size)
    assert abs(t.mean() - 3 * np.pi) < 3 * stderr


def test_generators_are_deterministic():
    assert swiss_roll(300, 5).tobytes() == swiss_roll(300, 5).tobytes()
    assert swiss_roll(300, 5).tobytes() != swiss_roll(300, 6).tobytes()
    patch = roll_plane_patch()
    assert hyperplane(50, 2, **patch).tobytes() == hyperplane(50, 2, **patch).tobytes()


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), dim=st.integers(2, 6), scale=st.floats(0.1, 100))
def test_hyperplane_points_satisfy_the_plane(seed, dim, scale):
    rng = np.random.default_rng(seed)
    origin = scale * rng.standard_normal(dim)
    dirs = rng.standard_normal((2, dim))
    pts = hyperplane(200, seed, origin, dirs, [scale, 2 * scale])
    q, _ = np.linalg.qr(dirs.T)
    resid = (pts - origin) - (pts - origin) @ q @ q.T
    assert np.abs(resid).max() <= 1e-12 * max(1.0, scale) * 10
    coords = np.linalg.lstsq(dirs.T, (pts - origin).T, rcond=None)[0].T
    assert np.all(np.abs(coords[:, 0]) <= scale * (1 + 1e-9))
    assert np.all(np.abs(coords[:, 1]) <= 2 * scale * (1 + 1e-9))


def test_zero_extent_gives_the_base_point():
    pts = hyperplane(10, 0, [1.0, 2.0, 3.0], [[1, 0, 0], [0, 1, 0]], 0.0)
    np.testing.assert_array_equal(pts, np.tile([1.0, 2.0, 3.0], (10, 1)))


def test_hyperplane_rejects_bad_input():
    with pytest.raises(ValueError):
        hyperplane(10, 0, [0, 0, 0], [[1, 0, 0], [2, 0, 0]], 1.0)
    with pytest.raises(ValueError):
        hyperplane(10, 0, [0, 0, 0], [[1, 0, 0], [0, 1, 0]], -1.0)
    with pytest.raises(ValueError):
        hyperplane(10, 0, [0, 0], [[1, 0, 0], [0, 1, 0]], 1.0)
    with pytest.raises(ValueError):
        hyperplane(0, 0, [0, 0, 0], [[1, 0, 0], [0, 1, 0]], 1.0)
    with pytest.raises(ValueError):
        roll_plane_patch("vertical")


@pytest.mark.parametrize("orientation", ["diagonal", "horizontal"])
def test_plane_patch_crosses_the_roll(orientation):
    roll = swiss_roll(20_000, 3)
    plane = hyperplane(300, 4, **roll_plane_patch(orientation))
    # some plane point lies near the roll surface
    gaps = np.min(np.linalg.norm(plane[:, None, :] - roll[None, ::10, :], axis=2), axis=1)
    assert gaps.min() < 0.5


def test_stream_source_take_and_reset():
    src = swiss_roll_source(100, 7)
    a = src.take(30)
    b = src.take(100)
    assert a.shape == (30, 3) and b.shape == (70, 3) and src.remaining == 0
    np.testing.assert_array_equal(np.vstack([a, b]), swiss_roll(100, 7))
    src.reset()
    assert len(list(src)) == 100
    assert src.take(5).shape == (0, 3)
    with pytest.raises(ValueError):
        StreamSource("bad", 0, -1, swiss_roll)


def test_interleave_keeps_exact_totals():
    roll, plane = swiss_roll_source(49_000, 1), plane_source(10_000, 2)
    mixed = interleave([roll, plane], proportions=[49 / 59, 10 / 59], seed=3)
    rows = mixed.rows
    assert rows.shape == (59_000, 3)
    patch = roll_plane_patch()
    normal = np.cross(*patch["directions"])
    on_plane = np.abs((rows - patch["origin"]) @ normal) < 1e-9
    assert on_plane.sum() == 10_000
    # each source's rows appear in their original order
    np.testing.assert_array_equal(rows[on_plane], plane.rows)
    np.testing.assert_array_equal(rows[~on_plane], roll.rows)
    # prefixes track the proportion within a Hoeffding margin at 1e-6 failure probability
    frac = np.cumsum(on_plane) / np.arange(1, rows.shape[0] + 1)
    for k in (1000, 5000, 20_000):
        margin = np.sqrt(np.log(2 / 1e-6) / (2 * k))
        assert abs(frac[k - 1] - 10 / 59) < margin


def test_interleave_single_source_and_errors():
    src = swiss_roll_source(20, 0)
    assert interleave([src]) is src
    with pytest.raises(ValueError):
        interleave([])
    with pytest.raises(ValueError):
        interleave([src, swiss_roll_source(20, 1)], proportions=[0.9, 0.1])
    with pytest.raises(ValueError):
        interleave([src, swiss_roll_source(20, 1)], proportions=[0.5])


def test_interleave_is_deterministic():
    mk = lambda: interleave([swiss_roll_source(200, 1), plane_source(50, 2)], seed=9).rows
    assert mk().tobytes() == mk().tobytes()
