from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from formbench._kernels import BACKEND, backend_name, fallback, fill_rows_linear, pair_contains
from tests import oracles

try:
    from formbench._kernels import _native as native
except ImportError:
    native = None


def _random_image(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    return rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)


@st.composite
def fill_regions(draw):
    """An image plus a region leaving at least one neighbor column."""
    width = draw(st.integers(min_value=3, max_value=40))
    height = draw(st.integers(min_value=1, max_value=30))
    touch_left = draw(st.booleans())
    touch_right = draw(st.booleans())
    px0 = 0 if touch_left else draw(st.integers(1, width - 2))
    px1 = width if touch_right else draw(st.integers(px0 + 1, width - 1))
    if px0 == 0 and px1 == width:
        px1 = width - 1  # full-width regions are the caller's error case
    py0 = draw(st.integers(0, height - 1))
    py1 = draw(st.integers(py0 + 1, height))
    seed = draw(st.integers(0, 2**32 - 1))
    img = _random_image(np.random.default_rng(seed), height, width)
    return img, px0, py0, px1, py1


@given(fill_regions())
def test_fill_matches_per_pixel_oracle(case):
    img, px0, py0, px1, py1 = case
    expected = oracles.fill_oracle(img, px0, py0, px1, py1)
    got = img.copy()
    fill_rows_linear(got, px0, py0, px1, py1)
    assert np.array_equal(got, expected)


@given(fill_regions())
def test_fill_backends_agree_bit_for_bit(case):
    if native is None:
        pytest.skip("compiled extension not built")
    img, px0, py0, px1, py1 = case
    a = img.copy()
    b = img.copy()
    native.fill_rows_linear(a, px0, py0, px1, py1)
    fallback.fill_rows_linear(b, px0, py0, px1, py1)
    assert np.array_equal(a, b)


@given(fill_regions())
def test_fill_touches_only_the_region(case):
    img, px0, py0, px1, py1 = case
    got = img.copy()
    fill_rows_linear(got, px0, py0, px1, py1)
    mask = np.ones(img.shape, dtype=bool)
    mask[py0:py1, px0:px1, :] = False
    assert np.array_equal(got[mask], img[mask])


def test_fill_rejects_full_width_region():
    img = np.zeros((4, 6, 3), dtype=np.uint8)
    with pytest.raises(ValueError):
        fallback.fill_rows_linear(img, 0, 1, 6, 3)
    if native is not None:
        with pytest.raises(ValueError):
            native.fill_rows_linear(img, 0, 1, 6, 3)


def test_fill_replicates_at_margins():
    rng = np.random.default_rng(3)
    img = _random_image(rng, 5, 10)
    left = img.copy()
    fill_rows_linear(left, 0, 0, 4, 5)
    assert np.array_equal(left[:, 0:4, :], np.repeat(img[:, 4:5, :], 4, axis=1))
    right = img.copy()
    fill_rows_linear(right, 6, 0, 10, 5)
    assert np.array_equal(right[:, 6:10, :], np.repeat(img[:, 5:6, :], 4, axis=1))


@given(st.integers(0, 2**32 - 1), st.integers(1, 200))
def test_pair_contains_matches_scalar_oracle(seed, n):
    rng = np.random.default_rng(seed)
    lo = rng.random((n, 2)) * 0.6
    hi = lo + rng.random((n, 2)) * 0.39 + 0.005
    boxes = np.concatenate([lo, hi], axis=1)
    points = rng.random((n, 2))
    got = pair_contains(boxes, points)
    for i in range(n):
        expected = oracles.contains_closed(tuple(boxes[i]), tuple(points[i]))
        assert bool(got[i]) == expected


def test_pair_contains_closed_boundaries():
    boxes = np.array([[0.2, 0.2, 0.8, 0.8]] * 4)
    points = np.array([[0.2, 0.5], [0.8, 0.5], [0.5, 0.2], [0.5, 0.8]])
    assert pair_contains(boxes, points).all()


def test_pair_contains_backends_agree():
    if native is None:
        pytest.skip("compiled extension not built")
    rng = np.random.default_rng(17)
    lo = rng.random((500, 2)) * 0.5
    boxes = np.concatenate([lo, lo + 0.3], axis=1)
    points = rng.random((500, 2))
    assert np.array_equal(
        native.pair_contains(boxes, points),
        fallback.pair_contains(boxes, points),
    )


def test_backend_name_reports_selection():
    assert backend_name() == BACKEND
    assert BACKEND in ("native", "numpy")
    assert fallback.BACKEND == "numpy"
    if native is not None:
        assert native.BACKEND == "native"
