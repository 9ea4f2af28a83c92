import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import LineString, Polygon

from nmp.boxes import (
    box_corners,
    box_iou,
    box_polyline_distance,
    box_segment_distance,
    boxes_overlap,
    iou_matrix,
    points_in_boxes,
)

box_st = st.tuples(
    st.floats(-5, 5), st.floats(-5, 5), st.floats(0.5, 6), st.floats(0.5, 4), st.floats(-math.pi, math.pi)
)


def _poly(b):
    return Polygon(box_corners(np.array(b)))


def test_corners_ccw_and_area():
    c = box_corners(np.array([1.0, 2.0, 4.0, 2.0, 0.3]))
    assert Polygon(c).exterior.is_ccw
    assert Polygon(c).area == pytest.approx(8.0)


def test_unit_squares_offset_half():
    a = [0, 0, 1, 1, 0]
    b = [0.5, 0, 1, 1, 0]
    assert box_iou(a, b) == pytest.approx(1 / 3)


def test_identical_boxes_iou_one():
    assert box_iou([1, 1, 4, 2, 0.4], [1, 1, 4, 2, 0.4]) == pytest.approx(1.0)


@given(a=box_st, b=box_st)
@settings(max_examples=200, deadline=None)
def test_iou_matches_shapely(a, b):
    pa, pb = _poly(a), _poly(b)
    inter = pa.intersection(pb).area
    expected = inter / (pa.area + pb.area - inter)
    assert box_iou(a, b) == pytest.approx(expected, abs=1e-9)
    assert iou_matrix(np.array([a]), np.array([b]))[0, 0] == pytest.approx(expected, abs=1e-9)


@given(a=box_st, b=box_st)
@settings(max_examples=200, deadline=None)
def test_overlap_matches_shapely(a, b):
    pa, pb = _poly(a), _poly(b)
    d = pa.distance(pb)
    if d > 1e-7:
        assert not boxes_overlap(np.array(a), np.array(b))
    elif pa.intersection(pb).area > 1e-7:
        assert boxes_overlap(np.array(a), np.array(b))


def test_touching_boxes_overlap():
    assert boxes_overlap(np.array([0, 0, 2, 2, 0]), np.array([2, 0, 2, 2, 0]))


@given(b=box_st, p=st.tuples(st.floats(-6, 6), st.floats(-6, 6)), q=st.tuples(st.floats(-6, 6), st.floats(-6, 6)))
@settings(max_examples=200, deadline=None)
def test_segment_distance_matches_shapely(b, p, q):
    expected = _poly(b).distance(LineString([p, q])) if p != q else _poly(b).distance(Polygon([p, p, p]).centroid)
    got = float(box_segment_distance(np.array(b), np.array(p), np.array(q)))
    assert got == pytest.approx(expected, abs=1e-9)


def test_footprint_touches_line_iff_half_width_reaches():
    # SDV 2.0 m wide; solid line 0.9 m from the centreline -> touching
    line = np.array([[-10.0, 0.9], [10.0, 0.9]])
    assert box_polyline_distance(np.array([0, 0, 4.8, 2.0, 0]), line) == 0.0
    # 1.0 m away -> touching exactly at the edge
    assert box_polyline_distance(np.array([0, 0, 4.8, 2.0, 0]), line + [0, 0.1]) == pytest.approx(0.0, abs=1e-12)
    # 1.2 m away -> clear by 0.2 m
    assert box_polyline_distance(np.array([0, 0, 4.8, 2.0, 0]), line + [0, 0.3]) == pytest.approx(0.2)


def test_points_in_boxes_rotated():
    box = np.array([[0, 0, 4, 1, math.pi / 2]])
    pts = np.array([[0, 1.9], [1.9, 0], [0, 0]])
    np.testing.assert_array_equal(points_in_boxes(pts, box)[:, 0], [True, False, True])


def test_iou_matrix_shapes():
    assert iou_matrix(np.zeros((0, 5)), np.zeros((3, 5))).shape == (0, 3)
    far = iou_matrix(np.array([[0, 0, 1, 1, 0]]), np.array([[10, 0, 1, 1, 0]]))
    assert far[0, 0] == 0.0
