"""Oriented-rectangle geometry shared by anchors, collision and lane checks.

Boxes are rows of (cx, cy, w, h, theta) where ``w`` is the extent along the
heading and ``h`` the extent across it.
"""
from __future__ import annotations

import numpy as np

_EPS = 1e-12


def box_corners(boxes: np.ndarray) -> np.ndarray:
    """Counter-clockwise corners, shape (..., 4, 2)."""
    boxes = np.asarray(boxes, dtype=float)
    cx, cy, w, h, th = (boxes[..., i] for i in range(5))
    c, s = np.cos(th), np.sin(th)
    hw, hh = 0.5 * w, 0.5 * h
    lx = np.stack([hw, -hw, -hw, hw], axis=-1)
    ly = np.stack([hh, hh, -hh, -hh], axis=-1)
    # rotate local offsets
    x = cx[..., None] + c[..., None] * lx - s[..., None] * ly
    y = cy[..., None] + s[..., None] * lx + c[..., None] * ly
    corners = np.stack([x, y], axis=-1)
    # (hw, hh) -> (-hw, hh) -> ... is counter-clockwise
    return corners


def boxes_overlap(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Separating-axis overlap test for broadcastable box arrays.

    Boxes that only touch along an edge count as overlapping.
    """
    ca = box_corners(a)
    cb = box_corners(b)
    ca, cb = np.broadcast_arrays(ca, cb)
    ta = np.asarray(a, dtype=float)[..., 4]
    tb = np.asarray(b, dtype=float)[..., 4]
    ta, tb = np.broadcast_arrays(ta, tb)
    separated = np.zeros(ca.shape[:-2], dtype=bool)
    for theta in (ta, ta + 0.5 * np.pi, tb, tb + 0.5 * np.pi):
        axis = np.stack([np.cos(theta), np.sin(theta)], axis=-1)[..., None, :]
        pa = np.sum(ca * axis, axis=-1)
        pb = np.sum(cb * axis, axis=-1)
        gap = np.maximum(pb.min(-1) - pa.max(-1), pa.min(-1) - pb.max(-1))
        separated |= gap > _EPS
    return ~separated


def _clip_polygon(subject: list, clip: np.ndarray) -> list:
    """Sutherland-Hodgman clip of ``subject`` by the convex CCW polygon ``clip``."""
    out = subject
    n = len(clip)
    for i in range(n):
        if not out:
            break
        a, b = clip[i], clip[(i + 1) % n]
        edge = b - a
        inp, out = out, []

        def side(p):
            return edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0])

        prev = inp[-1]
        sp = side(prev)
        for cur in inp:
            sc = side(cur)
            if sc >= 0:
                if sp < 0:
                    out.append(_intersect(prev, cur, sp, sc))
                out.append(cur)
            elif sp >= 0:
                out.append(_intersect(prev, cur, sp, sc))
            prev, sp = cur, sc
    return out


def _intersect(p, q, sp, sq):
    t = sp / (sp - sq)
    return p + t * (q - p)


def _area(poly) -> float:
    if len(poly) < 3:
        return 0.0
    pts = np.asarray(poly)
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def box_iou(a, b) -> float:
    """Exact IoU of two oriented boxes."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ca = box_corners(a)
    cb = box_corners(b)
    inter = _area(_clip_polygon(list(ca), cb))
    union = a[2] * a[3] + b[2] * b[3] - inter
    return float(inter / union) if union > 0 else 0.0


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU, skipping pairs whose circumscribed circles cannot meet."""
    boxes_a = np.asarray(boxes_a, dtype=float).reshape(-1, 5)
    boxes_b = np.asarray(boxes_b, dtype=float).reshape(-1, 5)
    out = np.zeros((len(boxes_a), len(boxes_b)))
    if len(boxes_a) == 0 or len(boxes_b) == 0:
        return out
    ra = 0.5 * np.hypot(boxes_a[:, 2], boxes_a[:, 3])
    rb = 0.5 * np.hypot(boxes_b[:, 2], boxes_b[:, 3])
    dist = np.hypot(
        boxes_a[:, None, 0] - boxes_b[None, :, 0], boxes_a[:, None, 1] - boxes_b[None, :, 1]
    )
    near = dist < ra[:, None] + rb[None, :]
    cand = near & boxes_overlap(boxes_a[:, None, :], boxes_b[None, :, :])
    for i, j in zip(*np.nonzero(cand)):
        out[i, j] = box_iou(boxes_a[i], boxes_b[j])
    return out


def points_in_boxes(points: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    """(P, B) mask of points lying inside (or on) each box."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    boxes = np.asarray(boxes, dtype=float).reshape(-1, 5)
    dx = points[:, None, 0] - boxes[None, :, 0]
    dy = points[:, None, 1] - boxes[None, :, 1]
    c, s = np.cos(boxes[:, 4]), np.sin(boxes[:, 4])
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return (np.abs(u) <= 0.5 * boxes[:, 2] + _EPS) & (np.abs(v) <= 0.5 * boxes[:, 3] + _EPS)


def _point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = np.sum(ab * ab, axis=-1)
    t = np.sum((p - a) * ab, axis=-1) / np.where(denom > 0, denom, 1.0)
    t = np.clip(t, 0.0, 1.0)
    proj = a + t[..., None] * ab
    return np.linalg.norm(p - proj, axis=-1)


def _cross(o, a, b):
    return (a[..., 0] - o[..., 0]) * (b[..., 1] - o[..., 1]) - (a[..., 1] - o[..., 1]) * (
        b[..., 0] - o[..., 0]
    )


def _segments_intersect(p1, p2, q1, q2) -> np.ndarray:
    d1 = _cross(q1, q2, p1)
    d2 = _cross(q1, q2, p2)
    d3 = _cross(p1, p2, q1)
    d4 = _cross(p1, p2, q2)
    return (d1 * d2 <= 0) & (d3 * d4 <= 0)


def box_segment_distance(boxes: np.ndarray, seg_a, seg_b) -> np.ndarray:
    """Euclidean distance between each box and the segment [seg_a, seg_b];
    zero when they intersect or the segment lies inside the box."""
    corners = box_corners(boxes)  # (..., 4, 2)
    a = np.asarray(seg_a, dtype=float)
    b = np.asarray(seg_b, dtype=float)
    e0 = corners
    e1 = np.roll(corners, -1, axis=-2)
    # corner -> segment
    d = _point_segment_distance(corners, a, b).min(-1)
    # segment endpoints -> box edges
    for p in (a, b):
        pp = np.broadcast_to(p, e0.shape)
        d = np.minimum(d, _point_segment_distance(pp, e0, e1).min(-1))
    hit = _segments_intersect(
        e0, e1, np.broadcast_to(a, e0.shape), np.broadcast_to(b, e0.shape)
    ).any(-1)
    inside = points_in_boxes(a[None], np.asarray(boxes).reshape(-1, 5))[0].reshape(d.shape)
    return np.where(hit | inside, 0.0, d)


def box_polyline_distance(boxes: np.ndarray, polyline: np.ndarray) -> np.ndarray:
    polyline = np.asarray(polyline, dtype=float)
    boxes = np.asarray(boxes, dtype=float)
    d = np.full(boxes.shape[:-1], np.inf)
    for a, b in zip(polyline[:-1], polyline[1:]):
        d = np.minimum(d, box_segment_distance(boxes, a, b))
    return d
