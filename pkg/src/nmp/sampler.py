"""Physically-feasible trajectory sampling for inference and for the
max-margin negatives."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import (
    CIRCLE,
    CLOTHOID,
    STRAIGHT,
    PathSpec,
    SdvState,
    Trajectory,
    VelocityProfile,
    build_trajectory,
    match_initial_curvature,
)


@dataclass
class SamplerConfig:
    n_samples: int = 600
    p_straight: float = 0.5
    p_circle: float = 0.25
    p_clothoid: float = 0.25
    scale_range: tuple = (6.0, 80.0)
    accel_range: tuple = (-5.0, 5.0)
    seed: int = 0
    negative_violate_prob: float = 0.8
    negative_velocity_range: tuple = (0.0, 15.0)
    negative_resample_curvature: bool = False
    circle_curvature_range: tuple = (1.0 / 80.0, 1.0 / 6.0)
    max_clothoid_offset: float = 120.0
    max_retries: int = 50

    def __post_init__(self):
        self.scale_range = tuple(self.scale_range)
        self.accel_range = tuple(self.accel_range)
        self.negative_velocity_range = tuple(self.negative_velocity_range)
        self.circle_curvature_range = tuple(self.circle_curvature_range)
        probs = (self.p_straight, self.p_circle, self.p_clothoid)
        if min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError(f"kind probabilities must be >= 0 and sum to 1, got {probs}")
        for name in ("scale_range", "accel_range", "negative_velocity_range", "circle_curvature_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must be ordered, got {(lo, hi)}")
        if self.n_samples < 0:
            raise ValueError("n_samples must be >= 0")
        if not 0.0 <= self.negative_violate_prob <= 1.0:
            raise ValueError("negative_violate_prob must lie in [0, 1]")

    @property
    def kind_probs(self) -> np.ndarray:
        return np.array([self.p_straight, self.p_circle, self.p_clothoid])


_KINDS = (STRAIGHT, CIRCLE, CLOTHOID)


def _draw_path(state: SdvState, config: SamplerConfig, rng: np.random.Generator) -> PathSpec:
    kind = _KINDS[rng.choice(3, p=config.kind_probs)]
    if kind == STRAIGHT:
        return PathSpec(STRAIGHT)
    if kind == CIRCLE:
        kappa = state.curvature
        if kappa == 0.0:
            lo, hi = config.circle_curvature_range
            kappa = rng.uniform(lo, hi) * (1.0 if rng.random() < 0.5 else -1.0)
        return PathSpec(CIRCLE, radius=1.0 / kappa)
    lo, hi = config.scale_range
    for _ in range(config.max_retries):
        a = rng.uniform(lo, hi)
        flipped = bool(rng.random() < 0.5)
        try:
            return match_initial_curvature(
                PathSpec(CLOTHOID, scale_a=a, flipped=flipped), state, config.max_clothoid_offset
            )
        except ValueError:
            continue
    # every draw blew the arc budget: fall back to the tightest curve
    return match_initial_curvature(PathSpec(CLOTHOID, scale_a=lo), state)


def _draw_one(state, config, rng, T, dt) -> Trajectory:
    path = _draw_path(state, config, rng)
    acc = rng.uniform(*config.accel_range)
    profile = VelocityProfile(state.velocity, float(acc))
    traj = build_trajectory(path, profile, state, T, dt)
    traj.meta["kind"] = path.kind
    return traj


def sample_trajectories(
    state: SdvState,
    config: SamplerConfig,
    T: int,
    dt: float,
    rng: Optional[np.random.Generator] = None,
) -> list[Trajectory]:
    """Draw ``config.n_samples`` trajectories that all start from ``state``.

    Deterministic for a fixed ``config.seed`` unless an explicit ``rng`` is given.
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    out = []
    for i in range(config.n_samples):
        traj = _draw_one(state, config, rng, T, dt)
        traj.meta["id"] = i
        out.append(traj)
    return out


def sample_negatives(
    state: SdvState,
    demonstration: Trajectory,
    config: SamplerConfig,
    N: int,
    rng: Optional[np.random.Generator] = None,
) -> list[Trajectory]:
    """Negatives for the max-margin loss.

    With probability ``negative_violate_prob`` a negative ignores the SDV's
    initial velocity (uniform in ``negative_velocity_range``) and, when
    ``negative_resample_curvature`` is set, its initial curvature too.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    T, dt = len(demonstration), demonstration.dt
    kmin, kmax = config.circle_curvature_range
    out = []
    for i in range(N):
        violate = bool(rng.random() < config.negative_violate_prob)
        start = state
        if violate:
            v = float(rng.uniform(*config.negative_velocity_range))
            steering = state.steering_angle
            if config.negative_resample_curvature:
                kappa = rng.uniform(-kmax, kmax)
                steering = float(np.arctan(0.5 * kappa * state.wheelbase))
            start = SdvState(state.pose, v, steering, state.wheelbase)
        traj = _draw_one(start, config, rng, T, dt)
        traj.meta["id"] = i
        traj.meta["violates_initial"] = violate
        out.append(traj)
    return out


def stack_xy(trajectories: list[Trajectory]) -> np.ndarray:
    """(N, T, 2) positions of a trajectory list."""
    if not trajectories:
        return np.zeros((0, 0, 2))
    return np.stack([t.xy for t in trajectories])


def stack_poses(trajectories: list[Trajectory]) -> np.ndarray:
    """(N, T, 3) x, y, heading."""
    if not trajectories:
        return np.zeros((0, 0, 3))
    return np.stack([t.poses() for t in trajectories])
