"""Hand-built scenarios for unit tests."""
from __future__ import annotations

import numpy as np

from nmp.geometry import STRAIGHT, PathSpec, Pose2, SdvState, VelocityProfile, build_trajectory
from nmp.scenario import Actor, Boundary, Lane, Scenario, StopLine

N_FRAMES = 41  # -1.0 s .. 3.0 s at 10 Hz


def parked(x: float, y: float, heading: float = 0.0, length: float = 4.8, width: float = 2.0) -> Actor:
    return Actor(length, width, np.tile([x, y, heading], (N_FRAMES, 1)))


def moving(x0: float, y0: float, vx: float, vy: float = 0.0, length: float = 4.8, width: float = 2.0) -> Actor:
    t = -1.0 + 0.1 * np.arange(N_FRAMES)
    heading = np.arctan2(vy, vx) if (vx or vy) else 0.0
    return Actor(length, width, np.column_stack([x0 + vx * t, y0 + vy * t, np.full(N_FRAMES, heading)]))


def stop_line(x: float, half_width: float = 1.75, red: bool = True) -> StopLine:
    return StopLine([x, -half_width], [x, half_width], 0.0, np.full(N_FRAMES, red))


def straight_scenario(
    v: float = 10.0,
    actors=(),
    boundaries=(),
    stop_lines=(),
    road=None,
    lanes=None,
    speed_limit: float = 15.0,
    T: int = 6,
    dt: float = 0.5,
) -> Scenario:
    state = SdvState(Pose2(0.0, 0.0, 0.0), v)
    demo = build_trajectory(PathSpec(STRAIGHT), VelocityProfile(v, 0.0), state, T, dt)
    past = np.array([[-v * 0.1 * k, 0.0, 0.0, v] for k in range(10, 0, -1)])
    if lanes is None:
        lanes = [Lane([[-40.0, 0.0], [100.0, 0.0]], 3.5)]
    if road is None:
        road = [[-40.0, -1.75], [100.0, -1.75], [100.0, 1.75], [-40.0, 1.75]]
    return Scenario(
        seed=0,
        archetype="test",
        lanes=list(lanes),
        boundaries=list(boundaries),
        stop_lines=list(stop_lines),
        actors=list(actors),
        road=np.asarray(road, dtype=float),
        sdv=state,
        sdv_past=past,
        demonstration=demo,
        speed_limit=speed_limit,
    )


def solid(y: float) -> Boundary:
    return Boundary([[-40.0, y], [100.0, y]], "solid")
