"""Synthetic LiDAR: surface points sampled on vehicle footprint perimeters."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..boxes import box_corners
from .model import Scenario

_HEIGHTS = (0.3, 0.9, 1.5)


@dataclass
class LidarConfig:
    points_per_meter: float = 4.0
    noise_points: int = 0
    noise_z: tuple = (-1.9, -0.3)
    ego_points: bool = True


def perimeter_points(box: np.ndarray, density: float) -> np.ndarray:
    """round(perimeter * density) points evenly spaced around a box, (n, 3)."""
    corners = box_corners(np.asarray(box, dtype=float))
    edges = np.roll(corners, -1, axis=0) - corners
    lengths = np.linalg.norm(edges, axis=1)
    perimeter = float(lengths.sum())
    n = int(round(perimeter * density))
    if n == 0:
        return np.zeros((0, 3))
    u = (np.arange(n) + 0.5) * perimeter / n
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    i = np.clip(np.searchsorted(cum, u, side="right") - 1, 0, 3)
    frac = (u - cum[i]) / lengths[i]
    xy = corners[i] + frac[:, None] * edges[i]
    z = np.array(_HEIGHTS)[np.arange(n) % len(_HEIGHTS)]
    return np.column_stack([xy, z])


def sweep_time(sweep_index: int, n_sweeps: int, frame_dt: float = 0.1) -> float:
    """Sweep 0 is the oldest; sweep n_sweeps-1 is the current frame (t = 0)."""
    return -(n_sweeps - 1 - sweep_index) * frame_dt


def synthesize_points(
    scenario: Scenario,
    t: float,
    cfg: Optional[LidarConfig] = None,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """(n, 3) points observed at past time ``t``: actor perimeters, the SDV's
    own footprint when enabled, and uniform ground clutter over the road."""
    cfg = cfg or LidarConfig()
    if t > 1e-9 or t < scenario.timeline_start - 1e-9:
        raise ValueError(f"sweep time {t} outside the past window")
    chunks = [perimeter_points(box, cfg.points_per_meter) for box in scenario.actor_boxes(t)]
    if cfg.ego_points:
        hist = scenario.sdv_history()
        row = hist[int(np.argmin(np.abs(hist[:, 0] - t)))]
        ego = np.array([row[1], row[2], scenario.sdv_length, scenario.sdv_width, row[3]])
        chunks.append(perimeter_points(ego, cfg.points_per_meter))
    if cfg.noise_points > 0 and len(scenario.road):
        rng = np.random.default_rng(0) if rng is None else rng
        lo = scenario.road.min(axis=0)
        hi = scenario.road.max(axis=0)
        xy = rng.uniform(lo, hi, size=(cfg.noise_points, 2))
        z = rng.uniform(*cfg.noise_z, size=(cfg.noise_points, 1))
        chunks.append(np.column_stack([xy, z]))
    if not chunks:
        return np.zeros((0, 3))
    return np.vstack(chunks)


def synthesize_sweeps(
    scenario: Scenario,
    n_sweeps: int,
    cfg: Optional[LidarConfig] = None,
    seed: int = 0,
) -> np.ndarray:
    """(n, 4) points with a sweep index column, ready for rasterization."""
    rng = np.random.default_rng(seed)
    out = []
    for s in range(n_sweeps):
        pts = synthesize_points(scenario, sweep_time(s, n_sweeps, scenario.frame_dt), cfg, rng)
        out.append(np.column_stack([pts, np.full(len(pts), float(s))]))
    return np.vstack(out) if out else np.zeros((0, 4))
