import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import raster_iou, raster_iou_2d
from scenelay.geometry import BBox, PixelBox, denormalize_box, iou, iou_many, mirror_pair, normalize_box, reflect


def test_normalize_examples():
    assert normalize_box(PixelBox(0, 0, 100, 50), 100, 50) == BBox(0.5, 0.5, 0.5, 0.5)
    assert normalize_box(PixelBox(25, 25, 75, 75), 100, 100) == BBox(0.5, 0.5, 0.25, 0.25)
    # (10+30)/400, (20+60)/200, (30-10)/400, (60-20)/200
    np.testing.assert_allclose(normalize_box(PixelBox(10, 20, 30, 60), 200, 100), [0.1, 0.4, 0.05, 0.2])


@pytest.mark.parametrize("w,h", [(0, 10), (10, 0), (-1, 10)])
def test_normalize_rejects_bad_image(w, h):
    with pytest.raises(ValueError):
        normalize_box(PixelBox(0, 0, 1, 1), w, h)


def test_mirror_examples():
    s, o, m = mirror_pair(BBox(0.8, 0.5, 0.1, 0.1), BBox(0.3, 0.5, 0.1, 0.1))
    assert m
    np.testing.assert_allclose(s, [0.2, 0.5, 0.1, 0.1])
    np.testing.assert_allclose(o, [0.7, 0.5, 0.1, 0.1])

    s0, o0 = BBox(0.2, 0.5, 0.1, 0.1), BBox(0.7, 0.5, 0.1, 0.1)
    assert mirror_pair(s0, o0) == (s0, o0, False)

    eq = BBox(0.5, 0.4, 0.1, 0.1)
    assert mirror_pair(eq, eq._replace(cy=0.9)) == (eq, eq._replace(cy=0.9), False)


def test_iou_examples():
    a = BBox(0.3, 0.4, 0.1, 0.2)
    assert iou(a, a) == 1.0
    assert iou(BBox(0.1, 0.1, 0.05, 0.05), BBox(0.9, 0.9, 0.05, 0.05)) == 0.0
    assert iou(BBox(0.5, 0.5, 0.5, 0.5), BBox(1.0, 0.5, 0.5, 0.5)) == pytest.approx(1 / 3)
    assert abs(raster_iou_2d((0.5, 0.5, 0.5, 0.5), (1.0, 0.5, 0.5, 0.5)) - 1 / 3) < 1e-3


def test_iou_degenerate_and_negative_extents():
    assert iou(BBox(0.5, 0.5, 0, 0), BBox(0.5, 0.5, 0, 0)) == 0.0
    # negative half-extents are treated as zero
    assert iou(BBox(0.5, 0.5, -0.1, 0.2), BBox(0.5, 0.5, 0.1, 0.1)) == 0.0


def test_iou_many_matches_scalar():
    rng = np.random.default_rng(3)
    a = np.column_stack([rng.uniform(0, 1, (50, 2)), rng.uniform(-0.05, 0.4, (50, 2))])
    b = np.column_stack([rng.uniform(0, 1, (50, 2)), rng.uniform(0, 0.4, (50, 2))])
    np.testing.assert_allclose(iou_many(a, b), [iou(BBox(*x), BBox(*y)) for x, y in zip(a, b)], atol=1e-15)


def test_iou_against_2d_raster():
    rng = np.random.default_rng(11)
    for _ in range(10):
        a = (*rng.uniform(0, 1, 2), *rng.uniform(0.05, 0.5, 2))
        b = (*rng.uniform(0, 1, 2), *rng.uniform(0.05, 0.5, 2))
        assert abs(iou(BBox(*a), BBox(*b)) - raster_iou_2d(a, b)) < 1e-3
        assert abs(raster_iou(a, b) - raster_iou_2d(a, b)) < 1e-12


coord = st.floats(0, 1)
extent = st.floats(0, 0.5)
boxes = st.builds(BBox, coord, coord, extent, extent)


@given(boxes, boxes)
def test_iou_properties(a, b):
    v = iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == iou(b, a)
    assert iou(reflect(a), reflect(b)) == pytest.approx(v, abs=1e-9)
    if a.hw > 1e-9 and a.hh > 1e-9:
        assert iou(a, a) == 1.0


@given(boxes, boxes)
def test_mirror_postcondition(s, o):
    s2, o2, mirrored = mirror_pair(s, o)
    assert mirrored == (o.cx < s.cx)
    if o.cx != s.cx:
        assert o2.cx >= s2.cx
    assert (s2.cy, s2.hw, s2.hh, o2.cy, o2.hw, o2.hh) == (s.cy, s.hw, s.hh, o.cy, o.hw, o.hh)


@given(
    st.floats(0, 1000), st.floats(0, 1000), st.floats(0, 1000), st.floats(0, 1000),
    st.floats(1, 5000), st.floats(1, 5000),
)
def test_normalize_round_trip(x0, x1, y0, y1, w, h):
    p = PixelBox(min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))
    back = denormalize_box(normalize_box(p, w, h), w, h)
    np.testing.assert_allclose(back, p, rtol=1e-9, atol=1e-9 * max(w, h))
