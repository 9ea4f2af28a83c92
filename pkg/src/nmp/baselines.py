"""Non-learned planners: ego-motion extrapolation, adaptive cruise control
along the lane centreline, and the hand-designed (manual) cost volume."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np

from .bev import RoiSpec, cell_centers, polygon_mask
from .boxes import points_in_boxes
from .geometry import (
    CIRCLE,
    STRAIGHT,
    PathSpec,
    Pose2,
    SdvState,
    Trajectory,
    VelocityProfile,
    build_trajectory,
    profile_arc_length,
    profile_speed,
    wrap_angle,
)
if TYPE_CHECKING:
    from .scenario.model import Lane, Scenario

MANUAL_ROAD = 0.0
MANUAL_OFFROAD = 100.0
MANUAL_OBJECT = 255.0


# ---------------------------------------------------------------- polylines


class Polyline:
    """Arc-length parameterized polyline; linear extrapolation past the ends."""

    def __init__(self, points: np.ndarray):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if len(pts) < 2:
            raise ValueError("polyline needs at least two points")
        seg = np.diff(pts, axis=0)
        length = np.linalg.norm(seg, axis=1)
        keep = np.concatenate([[True], length > 1e-12])
        pts = pts[keep]
        seg = np.diff(pts, axis=0)
        self.points = pts
        self.seg_len = np.linalg.norm(seg, axis=1)
        self.seg_dir = seg / self.seg_len[:, None]
        self.cum = np.concatenate([[0.0], np.cumsum(self.seg_len)])

    @property
    def length(self) -> float:
        return float(self.cum[-1])

    def project(self, xy) -> tuple:
        """(arc position, signed lateral offset, positive to the left)."""
        p = np.asarray(xy, dtype=float)
        rel = p - self.points[:-1]
        dots = np.sum(rel * self.seg_dir, axis=1)
        t = np.clip(dots, 0.0, self.seg_len)
        # extend the end segments so points beyond the ends project linearly
        if len(t) == 1:
            t[0] = dots[0]
        else:
            t[0] = min(dots[0], self.seg_len[0])
            t[-1] = max(dots[-1], 0.0)
        foot = self.points[:-1] + t[:, None] * self.seg_dir
        dist = np.linalg.norm(p - foot, axis=1)
        i = int(np.argmin(dist))
        lateral = self.seg_dir[i, 0] * rel[i, 1] - self.seg_dir[i, 1] * rel[i, 0]
        return float(self.cum[i] + t[i]), float(lateral)

    def interpolate(self, s) -> np.ndarray:
        """(n, 3) x, y, heading at arc positions ``s``."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        i = np.clip(np.searchsorted(self.cum, s, side="right") - 1, 0, len(self.seg_len) - 1)
        local = s - self.cum[i]
        xy = self.points[i] + local[:, None] * self.seg_dir[i]
        heading = np.arctan2(self.seg_dir[i, 1], self.seg_dir[i, 0])
        return np.column_stack([xy, heading])


def lane_under(scenario: Scenario, xy) -> Lane:
    """The lane whose centreline passes within half a lane width of ``xy``."""
    best, best_off = None, math.inf
    for lane in scenario.lanes:
        _, lat = Polyline(lane.centerline).project(xy)
        if abs(lat) <= 0.5 * lane.width and abs(lat) < best_off:
            best, best_off = lane, abs(lat)
    if best is None:
        raise ValueError("no lane under the SDV")
    return best


# ---------------------------------------------------------------- ACC


@dataclass
class AccConfig:
    time_gap: float = 1.5
    standoff: float = 2.0
    stopline_margin: float = 1.0
    stationary_speed: float = 0.1
    stop_lookahead: float = 40.0
    accel_bounds: tuple = (-5.0, 5.0)
    bisect_iters: int = 60


@dataclass
class AccPlan:
    """Constant-acceleration rollout along a lane centreline."""

    lane: Polyline
    s0: float
    profile: VelocityProfile
    feasible: bool
    n_obstacles: int = 0

    def poses_at(self, times) -> np.ndarray:
        """(n, 4) x, y, heading, speed."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        poses = self.lane.interpolate(self.s0 + profile_arc_length(self.profile, times))
        return np.column_stack([poses, profile_speed(self.profile, times)])

    def trajectory(self, T: int, dt: float) -> Trajectory:
        rows = self.poses_at(dt * np.arange(1, T + 1))
        meta = {"kind": "acc", "feasible": self.feasible}
        return Trajectory(rows[:, :2], rows[:, 2], rows[:, 3], dt, profile=self.profile, meta=meta)


@dataclass
class _Obstacle:
    rear: np.ndarray  # arc position of the rear edge per check time (inf = absent)
    standoff: float
    stationary: bool


def _acc_obstacles(scenario, lane: Polyline, lane_width: float, s0: float, times, cfg: AccConfig) -> list:
    out = []
    half_len = 0.5 * scenario.sdv_length
    for actor in scenario.actors:
        poses = actor.poses[scenario.frame_index(times)]
        proj = np.array([lane.project(p[:2]) for p in poses])
        s, lat = proj[:, 0], proj[:, 1]
        if s[0] <= s0:
            continue
        in_lane = np.abs(lat) <= 0.5 * lane_width
        if not in_lane.any():
            continue
        rear = np.where(in_lane, s - 0.5 * actor.length, np.inf)
        moved = np.linalg.norm(poses[-1, :2] - poses[0, :2])
        duration = max(float(times[-1] - times[0]), 1e-9)
        out.append(_Obstacle(rear, cfg.standoff, moved / duration < cfg.stationary_speed))
    for line in scenario.stop_lines:
        active = scenario.stop_line_active(line, times)
        if not active.any():
            continue
        hit = _segment_crossing(lane, line.p0, line.p1)
        if hit is None or hit <= s0 + half_len:
            continue
        rear = np.where(active, hit, np.inf)
        out.append(_Obstacle(rear, cfg.stopline_margin, True))
    return out


def _segment_crossing(lane: Polyline, p0, p1) -> Optional[float]:
    """Arc position where the lane centreline crosses segment p0-p1."""
    best = None
    q = np.asarray(p0, dtype=float)
    e = np.asarray(p1, dtype=float) - q
    for i in range(len(lane.seg_len)):
        a = lane.points[i]
        d = lane.seg_dir[i] * lane.seg_len[i]
        denom = d[0] * e[1] - d[1] * e[0]
        if abs(denom) < 1e-12:
            continue
        w = q - a
        t = (w[0] * e[1] - w[1] * e[0]) / denom
        u = (w[0] * d[1] - w[1] * d[0]) / denom
        if 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0:
            s = lane.cum[i] + t * lane.seg_len[i]
            best = s if best is None else min(best, s)
    return best


def acc_plan(scenario: Scenario, T: Optional[int] = None, dt: Optional[float] = None, cfg: Optional[AccConfig] = None) -> AccPlan:
    """Largest constant acceleration that keeps every lane obstacle at bay.

    Constraints, checked at the 10 Hz frame times of the horizon: the gap to
    each in-lane obstacle stays above its standoff, the final gap also covers
    the time-gap at the final speed, and stationary obstacles within the
    look-ahead (parked vehicles, red stop-lines) must be stopped for.
    """
    cfg = cfg or AccConfig()
    T = scenario.horizon if T is None else T
    dt = scenario.dt if dt is None else dt
    sdv = scenario.sdv
    lane_obj = lane_under(scenario, (sdv.pose.x, sdv.pose.y))
    lane = Polyline(lane_obj.centerline)
    s0, _ = lane.project((sdv.pose.x, sdv.pose.y))
    horizon = T * dt
    n = int(round(horizon / scenario.frame_dt))
    times = scenario.frame_dt * np.arange(n + 1)
    obstacles = _acc_obstacles(scenario, lane, lane_obj.width, s0, times, cfg)
    v0 = sdv.velocity
    lo, hi = cfg.accel_bounds
    a_cruise = float(np.clip((scenario.speed_limit - v0) / horizon, lo, hi))
    front0 = s0 + 0.5 * scenario.sdv_length

    def feasible(a: float) -> bool:
        prof = VelocityProfile(v0, a)
        front = front0 + profile_arc_length(prof, times)
        v_end = float(profile_speed(prof, horizon))
        for ob in obstacles:
            gap = ob.rear - front
            if np.any(gap < ob.standoff):
                return False
            if np.isfinite(ob.rear[-1]) and gap[-1] < ob.standoff + cfg.time_gap * v_end:
                return False
            if ob.stationary and np.isfinite(ob.rear[0]):
                room = ob.rear[0] - front0 - ob.standoff
                if room <= cfg.stop_lookahead and v0 > 0:
                    if a >= 0 or v0 * v0 / (-2.0 * a) > room:
                        return False
        return True

    if feasible(a_cruise):
        a, ok = a_cruise, True
    elif not feasible(lo):
        a, ok = lo, False
    else:
        left, right = lo, a_cruise
        for _ in range(cfg.bisect_iters):
            mid = 0.5 * (left + right)
            if feasible(mid):
                left = mid
            else:
                right = mid
        a, ok = left, True
    return AccPlan(lane, s0, VelocityProfile(v0, a), ok, len(obstacles))


def baseline_acc(scenario: Scenario, T: Optional[int] = None, dt: Optional[float] = None, cfg: Optional[AccConfig] = None) -> Trajectory:
    plan = acc_plan(scenario, T, dt, cfg)
    return plan.trajectory(scenario.horizon if T is None else T, scenario.dt if dt is None else dt)


# ---------------------------------------------------------------- ego motion


def estimate_motion(history: np.ndarray) -> tuple:
    """Speed and curvature from the last two rows of (t, x, y, heading[, ...]).

    The chord between the poses is converted to arc length using the heading
    change, so the estimate is exact on circular arcs.
    """
    h = np.asarray(history, dtype=float)
    if len(h) < 2:
        raise ValueError("need at least two past states")
    (t0, x0, y0, h0), (t1, x1, y1, h1) = h[-2, :4], h[-1, :4]
    if t1 <= t0:
        raise ValueError("history times must increase")
    chord = math.hypot(x1 - x0, y1 - y0)
    dtheta = wrap_angle(h1 - h0)
    half = 0.5 * dtheta
    arc = chord if abs(half) < 1e-12 else chord * half / math.sin(half)
    speed = arc / (t1 - t0)
    kappa = 0.0 if arc < 1e-9 else dtheta / arc
    return speed, kappa


def baseline_ego_extrapolation(history: np.ndarray, T: int, dt: float, wheelbase: float = 2.8) -> Trajectory:
    """Constant speed and curvature rollout from the latest past state."""
    speed, kappa = estimate_motion(history)
    t, x, y, heading = np.asarray(history, dtype=float)[-1, :4]
    state = SdvState(Pose2(x, y, heading), speed, math.atan(0.5 * kappa * wheelbase), wheelbase)
    spec = PathSpec(CIRCLE, radius=1.0 / kappa) if abs(kappa) > 1e-9 else PathSpec(STRAIGHT)
    traj = build_trajectory(spec, VelocityProfile(speed, 0.0), state, T, dt)
    traj.meta["kind"] = "ego"
    return traj


# ---------------------------------------------------------------- manual cost


@dataclass
class ManualCostConfig:
    road: float = MANUAL_ROAD
    offroad: float = MANUAL_OFFROAD
    objects: float = MANUAL_OBJECT


def baseline_manual_cost(
    scenario: Scenario,
    roi: RoiSpec,
    boxes_per_t: list,
    cfg: Optional[ManualCostConfig] = None,
) -> np.ndarray:
    """(T, H, W) volume: road cells 0, other cells 100, cells whose centre
    lies inside a detected or forecast box at step t get 255.

    ``boxes_per_t`` holds one (n, 5) box array per future step.
    """
    cfg = cfg or ManualCostConfig()
    road = polygon_mask(scenario.road, roi)
    base = np.where(road, cfg.road, cfg.offroad)
    cx, cy = cell_centers(roi)
    centres = np.column_stack([cx.ravel(), cy.ravel()])
    vol = np.empty((len(boxes_per_t), roi.H, roi.W))
    for t, boxes in enumerate(boxes_per_t):
        layer = base.copy()
        boxes = np.asarray(boxes, dtype=float).reshape(-1, 5)
        if len(boxes):
            inside = points_in_boxes(centres, boxes).any(axis=1).reshape(roi.H, roi.W)
            layer[inside] = cfg.objects
        vol[t] = layer
    return vol


def ground_truth_boxes(scenario: Scenario, times) -> list:
    """Actor boxes at each time, as the manual baseline's oracle input."""
    return [scenario.actor_boxes(float(t)) for t in times]
