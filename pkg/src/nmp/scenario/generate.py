"""Procedural scenarios on a straight two-lane road.

The world frame is the SDV frame at t = 0: the SDV sits at the origin
heading along +x, on the centreline of its lane.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..baselines import AccConfig, acc_plan
from ..geometry import (
    CIRCLE,
    CLOTHOID,
    STRAIGHT,
    PathSpec,
    Pose2,
    SdvState,
    VelocityProfile,
    build_trajectory,
    match_initial_curvature,
    path_poses,
    trajectory_poses_at,
)
from ..rules import violation_mask
from ..workers import pmap
from .model import DASHED, SOLID, Actor, Boundary, Lane, Scenario, StopLine, load, save

ARCHETYPES = ("empty_road", "lane_follow", "stopped_lead", "lane_change", "stop_line")


class GenerationError(RuntimeError):
    """No valid scenario could be built within the retry budget."""


@dataclass
class ScenarioConfig:
    T: int = 6
    dt: float = 0.5
    n_past: int = 10
    frame_dt: float = 0.1
    lane_width: float = 3.5
    road_x: tuple = (-40.0, 100.0)
    speed_range: tuple = (4.0, 9.0)
    speed_limit: float = 15.0
    curvature_std: float = 0.003
    curvature_max: float = 0.008
    archetype_weights: dict = field(
        default_factory=lambda: {
            "empty_road": 0.1,
            "lane_follow": 0.3,
            "stopped_lead": 0.2,
            "lane_change": 0.2,
            "stop_line": 0.2,
        }
    )
    solid_middle_prob: float = 0.5
    sdv_length: float = 4.8
    sdv_width: float = 2.0
    wheelbase: float = 2.8
    max_retries: int = 50

    def __post_init__(self):
        unknown = set(self.archetype_weights) - set(ARCHETYPES)
        if unknown:
            raise ValueError(f"unknown archetypes {sorted(unknown)}")
        w = np.array([self.archetype_weights.get(a, 0.0) for a in ARCHETYPES], dtype=float)
        if np.any(w < 0) or w.sum() <= 0:
            raise ValueError("archetype weights must be >= 0 with a positive sum")
        if self.T < 1 or self.dt <= 0 or self.n_past < 1:
            raise ValueError("T, dt and n_past must be positive")
        lo, hi = self.speed_range
        if not 0 < lo <= hi <= self.speed_limit:
            raise ValueError("speed_range must lie in (0, speed_limit]")

    @property
    def horizon(self) -> float:
        return self.T * self.dt

    def weights(self) -> np.ndarray:
        w = np.array([self.archetype_weights.get(a, 0.0) for a in ARCHETYPES], dtype=float)
        return w / w.sum()


# ---------------------------------------------------------------- building blocks


def _frame_times(cfg: ScenarioConfig) -> np.ndarray:
    n = int(round((cfg.horizon + cfg.n_past * cfg.frame_dt) / cfg.frame_dt))
    return -cfg.n_past * cfg.frame_dt + cfg.frame_dt * np.arange(n + 1)


def _constant_velocity(x0: float, y0: float, speed: float, heading: float, times) -> np.ndarray:
    return np.column_stack(
        [x0 + speed * math.cos(heading) * times, y0 + speed * math.sin(heading) * times, np.full(len(times), heading)]
    )


def _vehicle(rng, x0, y0, speed, times) -> Actor:
    return Actor(float(rng.uniform(4.2, 5.2)), float(rng.uniform(1.8, 2.1)), _constant_velocity(x0, y0, speed, 0.0, times))


def _road(cfg: ScenarioConfig, side: int, middle: str):
    w = cfg.lane_width
    x0, x1 = cfg.road_x
    xs = np.array([x0, x1])
    lanes = [
        Lane(np.column_stack([xs, [0.0, 0.0]]), w),
        Lane(np.column_stack([xs, [side * w] * 2]), w),
    ]
    y_outer_ego = -side * 0.5 * w
    y_mid = side * 0.5 * w
    y_outer_far = side * 1.5 * w
    boundaries = [
        Boundary(np.column_stack([xs, [y_outer_ego] * 2]), SOLID),
        Boundary(np.column_stack([xs, [y_mid] * 2]), middle),
        Boundary(np.column_stack([xs, [y_outer_far] * 2]), SOLID),
    ]
    lo, hi = sorted((y_outer_ego, y_outer_far))
    road = np.array([[x0, lo], [x1, lo], [x1, hi], [x0, hi]])
    return lanes, boundaries, road


def _sdv(cfg: ScenarioConfig, speed: float, kappa: float):
    steering = math.atan(0.5 * kappa * cfg.wheelbase)
    sdv = SdvState(Pose2(0.0, 0.0, 0.0), speed, steering, cfg.wheelbase)
    # back-extrapolate along the current arc at constant speed
    spec = PathSpec(CIRCLE, radius=1.0 / kappa) if kappa != 0 else PathSpec(STRAIGHT)
    taus = cfg.frame_dt * np.arange(cfg.n_past, 0, -1)
    past = path_poses(spec, sdv.pose, -speed * taus)
    past = np.column_stack([past, np.full(len(taus), speed)])
    return sdv, past


def _stop_gap(rng, v: float) -> float:
    """Room for a constant-deceleration stop within the horizon."""
    return float(rng.uniform(v * v / 9.0, 1.4 * v))


# ---------------------------------------------------------------- archetypes


def _lane_change_demo(sc: Scenario, cfg: ScenarioConfig, side: int):
    """Deterministic grid search for a clean veer into the adjacent lane."""
    state = sc.sdv
    times = cfg.frame_dt * np.arange(1, int(round(cfg.horizon / cfg.frame_dt)) + 1)
    best, best_score = None, math.inf
    for a in np.linspace(6.0, 80.0, 75):
        try:
            spec = match_initial_curvature(PathSpec(CLOTHOID, scale_a=float(a), flipped=side < 0), state, 120.0)
        except ValueError:
            continue
        if spec.flipped != (side < 0):
            continue
        for acc in np.linspace(-2.0, 2.0, 9):
            prof = VelocityProfile(state.velocity, float(acc))
            rows = trajectory_poses_at(spec, prof, state.pose, times)
            lateral = side * rows[-1, 1]
            if not 1.2 <= lateral <= cfg.lane_width or abs(rows[-1, 2]) > 0.6:
                continue
            if np.any(rows[:, 3] > sc.speed_limit):
                continue
            if violation_mask(sc, rows[:, :3], times).any():
                continue
            score = abs(lateral - 0.85 * cfg.lane_width) + 0.1 * abs(acc)
            if score < best_score:
                best, best_score = (spec, prof), score
    if best is None:
        return None
    spec, prof = best
    demo = build_trajectory(spec, prof, state, cfg.T, cfg.dt)
    demo.meta["kind"] = "lane_change"
    return demo


def _draw(cfg: ScenarioConfig, rng: np.random.Generator, archetype: str, seed: int) -> Optional[Scenario]:
    times = _frame_times(cfg)
    v = float(rng.uniform(*cfg.speed_range))
    side = 1 if rng.random() < 0.5 else -1
    kappa = float(np.clip(rng.normal(0.0, cfg.curvature_std), -cfg.curvature_max, cfg.curvature_max))
    middle = SOLID if rng.random() < cfg.solid_middle_prob else DASHED
    if archetype == "lane_change":
        middle = DASHED
        kappa = side * abs(kappa)
    lanes, boundaries, road = _road(cfg, side, middle)
    half = 0.5 * cfg.sdv_length
    actors, stop_lines = [], []
    speed_limit = min(cfg.speed_limit, v + float(rng.uniform(0.0, 3.0)))
    y_next = side * cfg.lane_width

    if archetype == "empty_road":
        speed_limit = v
    elif archetype == "lane_follow":
        u = float(rng.uniform(max(2.0, v - 2.0), v + 2.0))
        lead = _vehicle(rng, 0.0, 0.0, u, times)
        gap = float(rng.uniform(12.0, 30.0))
        lead.poses[:, 0] += half + gap + 0.5 * lead.length
        actors.append(lead)
        for _ in range(int(rng.integers(0, 3))):
            actors.append(_vehicle(rng, float(rng.uniform(-20.0, 50.0)), y_next, float(rng.uniform(3.0, 10.0)), times))
    elif archetype == "stopped_lead":
        lead = _vehicle(rng, 0.0, 0.0, 0.0, times)
        lead.poses[:, 0] = half + AccConfig.standoff + _stop_gap(rng, v) + 0.5 * lead.length
        actors.append(lead)
        x_block = lead.poses[0, 0] + float(rng.uniform(-3.0, 3.0))
        actors.append(_vehicle(rng, x_block, y_next, 0.0, times))
        actors.append(_vehicle(rng, float(rng.uniform(-8.0, 8.0)), y_next, v + float(rng.uniform(-0.5, 0.5)), times))
    elif archetype == "lane_change":
        parked = _vehicle(rng, float(rng.uniform(18.0, 28.0)), 0.0, 0.0, times)
        actors.append(parked)
    elif archetype == "stop_line":
        x_line = half + AccConfig.stopline_margin + _stop_gap(rng, v)
        y_lo, y_hi = road[:, 1].min(), road[:, 1].max()
        stop_lines.append(StopLine([x_line, y_lo], [x_line, y_hi], 0.0, np.ones(len(times), dtype=bool)))
        if rng.random() < 0.5:
            actors.append(_vehicle(rng, x_line - 3.5, y_next, 0.0, times))
    else:
        raise ValueError(f"unknown archetype {archetype!r}")

    sdv, past = _sdv(cfg, v, kappa)
    placeholder = build_trajectory(PathSpec(STRAIGHT), VelocityProfile(v, 0.0), sdv, cfg.T, cfg.dt)
    sc = Scenario(
        seed=int(seed),
        archetype=archetype,
        lanes=lanes,
        boundaries=boundaries,
        stop_lines=stop_lines,
        actors=actors,
        road=road,
        sdv=sdv,
        sdv_past=past,
        demonstration=placeholder,
        speed_limit=float(speed_limit),
        timeline_start=float(times[0]),
        frame_dt=cfg.frame_dt,
        sdv_length=cfg.sdv_length,
        sdv_width=cfg.sdv_width,
    )
    if archetype == "lane_change":
        demo = _lane_change_demo(sc, cfg, side)
        if demo is None:
            return None
    else:
        plan = acc_plan(sc, cfg.T, cfg.dt)
        if not plan.feasible:
            return None
        demo = plan.trajectory(cfg.T, cfg.dt)
        demo.meta["kind"] = "acc"
    sc.demonstration = demo
    return sc if verify_demonstration(sc) else None


def verify_demonstration(sc: Scenario) -> bool:
    """Collision- and violation-free at 10 Hz, speeds within the limit and
    accelerations within [-5, 5]."""
    demo = sc.demonstration
    n = int(round(len(demo) * demo.dt / sc.frame_dt))
    times = sc.frame_dt * np.arange(1, n + 1)
    if demo.profile is not None:
        if not -5.0 <= demo.profile.acceleration <= 5.0:
            return False
        if demo.path is not None:
            rows = trajectory_poses_at(demo.path, demo.profile, sc.sdv.pose, times)
            poses = rows[:, :3]
        else:
            plan = acc_plan(sc, len(demo), demo.dt)
            poses = plan.poses_at(times)[:, :3]
    else:
        poses = demo.poses()
        times = demo.times
    if violation_mask(sc, poses, times).any():
        return False
    if violation_mask(sc, demo.poses(), demo.times).any():
        return False
    return bool(np.all(demo.speed <= sc.speed_limit + 1e-9))


def generate(cfg: ScenarioConfig, seed: int, archetype: Optional[str] = None) -> Scenario:
    """A scenario that is a pure function of (config, seed)."""
    rng = np.random.default_rng(seed)
    if archetype is None:
        archetype = ARCHETYPES[int(rng.choice(len(ARCHETYPES), p=cfg.weights()))]
    for attempt in range(cfg.max_retries):
        sc = _draw(cfg, rng, archetype, seed)
        if sc is not None:
            sc.meta["attempts"] = attempt + 1
            return sc
    raise GenerationError(f"no valid {archetype} scenario for seed {seed} after {cfg.max_retries} attempts")


# ---------------------------------------------------------------- scenario sets

PARTITIONS = ("train", "val", "test")
_PARTITION_STRIDE = 1_000_000


def partition_seeds(root_seed: int, partition: str, n: int) -> list:
    """Disjoint seed ranges per partition."""
    base = int(root_seed) * 3 * _PARTITION_STRIDE + PARTITIONS.index(partition) * _PARTITION_STRIDE
    if n > _PARTITION_STRIDE:
        raise ValueError("too many scenarios per partition")
    return [base + i for i in range(n)]


def scenario_filename(index: int) -> str:
    return f"scenario_{index:05d}.json"


def _generate_job(job) -> Scenario:
    cfg, seed = job
    return generate(cfg, seed)


def write_set(root, cfg: ScenarioConfig, counts: dict, root_seed: int, workers: int = 1) -> dict:
    """Generate and save train/val/test partitions; returns files written."""
    root = Path(root)
    written = {}
    for part in PARTITIONS:
        d = root / part
        d.mkdir(parents=True, exist_ok=True)
        for stale in d.glob("scenario_*.json"):
            stale.unlink()
        n = int(counts.get(part, 0))
        seeds = partition_seeds(root_seed, part, n)
        for i, sc in enumerate(pmap(_generate_job, [(cfg, s) for s in seeds], workers)):
            save(sc, d / scenario_filename(i))
        written[part] = n
    return written


def load_partition(directory) -> list:
    paths = sorted(Path(directory).glob("scenario_*.json"))
    return [load(p) for p in paths]
