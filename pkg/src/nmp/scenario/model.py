"""Scenario data model and its versioned JSON encoding ("nmp-scenario/1")."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..geometry import PathSpec, Pose2, SdvState, Trajectory, VelocityProfile

SCHEMA = "nmp-scenario/1"
SOLID = "solid"
DASHED = "dashed"


class ScenarioFormatError(ValueError):
    """Raised for malformed or incompatible scenario files."""


@dataclass
class Lane:
    centerline: np.ndarray
    width: float

    def __post_init__(self):
        self.centerline = np.asarray(self.centerline, dtype=float).reshape(-1, 2)


@dataclass
class Boundary:
    points: np.ndarray
    style: str = SOLID

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        if self.style not in (SOLID, DASHED):
            raise ValueError(f"unknown boundary style {self.style!r}")


@dataclass
class StopLine:
    """Segment p0-p1 controlling traffic moving along ``direction`` (radians).

    ``active`` holds one flag per scenario timeline frame (red = True).
    """

    p0: np.ndarray
    p1: np.ndarray
    direction: float
    active: np.ndarray

    def __post_init__(self):
        self.p0 = np.asarray(self.p0, dtype=float)
        self.p1 = np.asarray(self.p1, dtype=float)
        self.active = np.asarray(self.active, dtype=bool)


@dataclass
class Actor:
    """Vehicle footprint (length along heading x width) and its 10 Hz track."""

    length: float
    width: float
    poses: np.ndarray

    def __post_init__(self):
        self.poses = np.asarray(self.poses, dtype=float).reshape(-1, 3)


@dataclass
class Scenario:
    seed: int
    archetype: str
    lanes: list
    boundaries: list
    stop_lines: list
    actors: list
    road: np.ndarray
    sdv: SdvState
    sdv_past: np.ndarray  # (P, 4): x, y, heading, speed at t = -0.1 * P ... -0.1
    demonstration: Trajectory
    speed_limit: float = 15.0
    timeline_start: float = -1.0
    frame_dt: float = 0.1
    sdv_length: float = 4.8
    sdv_width: float = 2.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.road = np.asarray(self.road, dtype=float).reshape(-1, 2)
        self.sdv_past = np.asarray(self.sdv_past, dtype=float).reshape(-1, 4)

    @property
    def n_frames(self) -> int:
        return len(self.actors[0].poses) if self.actors else self._default_frames()

    def _default_frames(self) -> int:
        end = len(self.demonstration) * self.demonstration.dt
        return int(round((end - self.timeline_start) / self.frame_dt)) + 1

    @property
    def horizon(self) -> int:
        return len(self.demonstration)

    @property
    def dt(self) -> float:
        return self.demonstration.dt

    def frame_index(self, t) -> np.ndarray:
        idx = np.rint((np.asarray(t, dtype=float) - self.timeline_start) / self.frame_dt).astype(int)
        if np.any(idx < 0) or np.any(idx >= self._default_frames()):
            raise ValueError(f"time {t} outside the scenario timeline")
        return idx

    def actor_boxes(self, t) -> np.ndarray:
        """(A, 5) boxes at a single time, or (A, len(t), 5) for an array of times."""
        idx = self.frame_index(t)
        if not self.actors:
            shape = (0, 5) if np.ndim(t) == 0 else (0, len(np.atleast_1d(t)), 5)
            return np.zeros(shape)
        poses = np.stack([a.poses[idx] for a in self.actors])  # (A, [n,] 3)
        dims = np.array([[a.length, a.width] for a in self.actors])
        if np.ndim(t) == 0:
            return np.column_stack([poses[:, :2], dims, poses[:, 2]])
        dims = np.broadcast_to(dims[:, None, :], poses.shape[:2] + (2,))
        return np.concatenate([poses[..., :2], dims, poses[..., 2:3]], axis=-1)

    def sdv_history(self) -> np.ndarray:
        """(P + 1, 5) rows of t, x, y, heading, speed ending at the current pose."""
        p = len(self.sdv_past)
        times = -self.frame_dt * np.arange(p, 0, -1)
        past = np.column_stack([times, self.sdv_past])
        now = np.array([[0.0, self.sdv.pose.x, self.sdv.pose.y, self.sdv.pose.heading, self.sdv.velocity]])
        return np.vstack([past, now])

    def stop_line_active(self, line: StopLine, t) -> np.ndarray:
        return line.active[self.frame_index(t)]


# ---------------------------------------------------------------- encoding


def _arr(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def _path_to_dict(path: Optional[PathSpec]):
    if path is None:
        return None
    return {
        "kind": path.kind,
        "scale_a": float(path.scale_a),
        "flipped": bool(path.flipped),
        "radius": float(path.radius),
        "start_arc_offset": float(path.start_arc_offset),
    }


def trajectory_to_dict(traj: Trajectory) -> dict:
    profile = traj.profile
    return {
        "dt": float(traj.dt),
        "waypoints": _arr(np.column_stack([traj.xy, traj.heading, traj.speed])),
        "path": _path_to_dict(traj.path),
        "profile": None
        if profile is None
        else {"initial_velocity": float(profile.initial_velocity), "acceleration": float(profile.acceleration)},
        "meta": {str(k): v for k, v in traj.meta.items()},
    }


def trajectory_from_dict(d: dict) -> Trajectory:
    wp = np.asarray(d["waypoints"], dtype=float).reshape(-1, 4)
    path = PathSpec(**d["path"]) if d.get("path") else None
    profile = VelocityProfile(**d["profile"]) if d.get("profile") else None
    meta = dict(d.get("meta", {}))
    return Trajectory(wp[:, :2], wp[:, 2], wp[:, 3], float(d["dt"]), path=path, profile=profile, meta=meta)


def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "schema": SCHEMA,
        "seed": int(sc.seed),
        "archetype": sc.archetype,
        "timeline_start": float(sc.timeline_start),
        "frame_dt": float(sc.frame_dt),
        "speed_limit": float(sc.speed_limit),
        "sdv_length": float(sc.sdv_length),
        "sdv_width": float(sc.sdv_width),
        "road": _arr(sc.road),
        "lanes": [{"centerline": _arr(l.centerline), "width": float(l.width)} for l in sc.lanes],
        "boundaries": [{"points": _arr(b.points), "style": b.style} for b in sc.boundaries],
        "stop_lines": [
            {"p0": _arr(s.p0), "p1": _arr(s.p1), "direction": float(s.direction), "active": [bool(v) for v in s.active]}
            for s in sc.stop_lines
        ],
        "actors": [{"length": float(a.length), "width": float(a.width), "poses": _arr(a.poses)} for a in sc.actors],
        "sdv": {
            "x": float(sc.sdv.pose.x),
            "y": float(sc.sdv.pose.y),
            "heading": float(sc.sdv.pose.heading),
            "velocity": float(sc.sdv.velocity),
            "steering_angle": float(sc.sdv.steering_angle),
            "wheelbase": float(sc.sdv.wheelbase),
            "past": _arr(sc.sdv_past),
        },
        "demonstration": trajectory_to_dict(sc.demonstration),
        "meta": sc.meta,
    }


def scenario_from_dict(d: dict) -> Scenario:
    if not isinstance(d, dict):
        raise ScenarioFormatError("scenario document must be a JSON object")
    schema = d.get("schema")
    if schema != SCHEMA:
        raise ScenarioFormatError(f"unsupported scenario schema {schema!r} (expected {SCHEMA!r})")
    try:
        s = d["sdv"]
        sdv = SdvState(Pose2(s["x"], s["y"], s["heading"]), s["velocity"], s["steering_angle"], s["wheelbase"])
        return Scenario(
            seed=int(d["seed"]),
            archetype=d["archetype"],
            lanes=[Lane(l["centerline"], l["width"]) for l in d["lanes"]],
            boundaries=[Boundary(b["points"], b["style"]) for b in d["boundaries"]],
            stop_lines=[StopLine(x["p0"], x["p1"], x["direction"], x["active"]) for x in d["stop_lines"]],
            actors=[Actor(a["length"], a["width"], a["poses"]) for a in d["actors"]],
            road=d["road"],
            sdv=sdv,
            sdv_past=s["past"],
            demonstration=trajectory_from_dict(d["demonstration"]),
            speed_limit=d["speed_limit"],
            timeline_start=d["timeline_start"],
            frame_dt=d["frame_dt"],
            sdv_length=d["sdv_length"],
            sdv_width=d["sdv_width"],
            meta=d.get("meta", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioFormatError(f"malformed scenario: {exc}") from exc


def dumps(sc: Scenario) -> str:
    return json.dumps(scenario_to_dict(sc), sort_keys=True, separators=(",", ":")) + "\n"


def loads(text: str) -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError(f"malformed scenario file: {exc}") from exc
    return scenario_from_dict(doc)


def save(sc: Scenario, path) -> None:
    Path(path).write_text(dumps(sc), encoding="utf-8")


def load(path) -> Scenario:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ScenarioFormatError(f"malformed scenario file {path}: {exc}") from exc
    return loads(text)
