"""Traffic-rule checks on SDV poses: collisions, solid-line touches and
stop-line crossings. All functions take poses shaped (..., T, 3) with one
column per waypoint time."""
from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np

from .boxes import box_corners, box_polyline_distance, boxes_overlap
if TYPE_CHECKING:
    from .scenario.model import Scenario

SOLID = "solid"


def sdv_footprints(poses: np.ndarray, length: float = 4.8, width: float = 2.0) -> np.ndarray:
    poses = np.asarray(poses, dtype=float)
    dims = np.broadcast_to(np.array([length, width]), poses.shape[:-1] + (2,))
    return np.concatenate([poses[..., :2], dims, poses[..., 2:3]], axis=-1)


def collision_mask(scenario: Scenario, poses: np.ndarray, times: np.ndarray) -> np.ndarray:
    """True where the SDV footprint overlaps any actor box at the same time."""
    poses = np.asarray(poses, dtype=float)
    fp = sdv_footprints(poses, scenario.sdv_length, scenario.sdv_width)
    if not scenario.actors:
        return np.zeros(poses.shape[:-1], dtype=bool)
    actors = scenario.actor_boxes(np.asarray(times, dtype=float))  # (A, T, 5)
    # fp (..., T, 5) against (A, T, 5)
    hit = boxes_overlap(fp[..., None, :, :], actors)
    return hit.any(axis=-2)


def lane_violation_mask(scenario: Scenario, poses: np.ndarray) -> np.ndarray:
    """True where the SDV footprint touches a solid boundary."""
    poses = np.asarray(poses, dtype=float)
    fp = sdv_footprints(poses, scenario.sdv_length, scenario.sdv_width)
    out = np.zeros(poses.shape[:-1], dtype=bool)
    for b in scenario.boundaries:
        if b.style == SOLID:
            out |= box_polyline_distance(fp, b.points) <= 1e-12
    return out


def stopline_violation_mask(scenario: Scenario, poses: np.ndarray, times: np.ndarray) -> np.ndarray:
    """True where the footprint reaches past an active stop-line."""
    poses = np.asarray(poses, dtype=float)
    out = np.zeros(poses.shape[:-1], dtype=bool)
    if not scenario.stop_lines:
        return out
    fp = sdv_footprints(poses, scenario.sdv_length, scenario.sdv_width)
    corners = box_corners(fp)  # (..., T, 4, 2)
    for line in scenario.stop_lines:
        active = scenario.stop_line_active(line, np.asarray(times, dtype=float))
        normal = np.array([np.cos(line.direction), np.sin(line.direction)])
        seg = line.p1 - line.p0
        seg_len = float(np.linalg.norm(seg))
        along = seg / seg_len
        past = ((corners - line.p0) @ normal).max(-1) > 0
        lateral = (poses[..., :2] - line.p0) @ along
        half = 0.5 * scenario.sdv_width
        within = (lateral >= -half) & (lateral <= seg_len + half)
        out |= past & within & active
    return out


def violation_mask(
    scenario: Scenario,
    poses: np.ndarray,
    times: np.ndarray,
    collisions: bool = True,
    boundaries: bool = True,
    stop_lines: bool = True,
) -> np.ndarray:
    out = np.zeros(np.asarray(poses).shape[:-1], dtype=bool)
    if collisions:
        out |= collision_mask(scenario, poses, times)
    if boundaries:
        out |= lane_violation_mask(scenario, poses)
    if stop_lines:
        out |= stopline_violation_mask(scenario, poses, times)
    return out
