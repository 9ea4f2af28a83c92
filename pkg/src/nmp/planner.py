"""Min-cost trajectory selection and the planning metrics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bev import RoiSpec
from .costvolume import OUTSIDE_COST, index_volume
from .geometry import Trajectory
from .rules import collision_mask, lane_violation_mask
from .sampler import stack_xy
from .scenario.model import Scenario

L2_HORIZONS = (1.0, 2.0, 3.0)
COLLISION_HORIZONS = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
LANE_HORIZONS = (1.0, 2.0, 3.0)


@dataclass
class PlanResult:
    chosen: Trajectory
    chosen_id: int
    chosen_cost: float
    all_costs: list  # (trajectory id, cost)


def trajectory_ids(samples: Sequence[Trajectory]) -> np.ndarray:
    return np.array([int(t.meta.get("id", i)) for i, t in enumerate(samples)])


def trajectory_costs(volume: np.ndarray, samples: Sequence[Trajectory], roi: RoiSpec) -> np.ndarray:
    """Sum over steps of the indexed cost; outside the region a step costs 1000."""
    xy = stack_xy(list(samples))
    return index_volume(volume, xy, roi, OUTSIDE_COST).sum(axis=1)


def plan(volume: np.ndarray, samples: Sequence[Trajectory], roi: RoiSpec) -> PlanResult:
    """Argmin of the trajectory cost; ties go to the lowest trajectory id."""
    if len(samples) == 0:
        raise ValueError("plan() needs at least one sample")
    costs = trajectory_costs(volume, samples, roi)
    ids = trajectory_ids(samples)
    best = int(np.lexsort((ids, costs))[0])
    return PlanResult(samples[best], int(ids[best]), float(costs[best]), list(zip(ids.tolist(), costs.tolist())))


# ---------------------------------------------------------------- metrics


def _step_index(horizon: float, dt: float, T: int) -> int:
    k = int(round(horizon / dt))
    if abs(k * dt - horizon) > 1e-9 or not 1 <= k <= T:
        raise ValueError(f"horizon {horizon} s is not a waypoint time for dt={dt}, T={T}")
    return k - 1


@dataclass
class ScenarioMetrics:
    l2_at: dict
    collision_at: dict
    lane_violation_at: dict
    collision_steps: list = field(default_factory=list)
    lane_steps: list = field(default_factory=list)


def evaluate(
    planned: Trajectory,
    scenario: Scenario,
    l2_horizons=L2_HORIZONS,
    collision_horizons=COLLISION_HORIZONS,
    lane_horizons=LANE_HORIZONS,
) -> ScenarioMetrics:
    """L2 to the demonstration, and cumulative collision / lane-violation
    flags up to each horizon."""
    demo = scenario.demonstration
    if len(planned) != len(demo) or abs(planned.dt - demo.dt) > 1e-12:
        raise ValueError(
            f"plan horizon ({len(planned)} x {planned.dt}s) does not match demonstration "
            f"({len(demo)} x {demo.dt}s)"
        )
    T, dt = len(demo), demo.dt
    poses = planned.poses()
    l2 = np.linalg.norm(planned.xy - demo.xy, axis=1)
    coll = collision_mask(scenario, poses, demo.times)
    lane = lane_violation_mask(scenario, poses)
    out_l2 = {h: float(l2[_step_index(h, dt, T)]) for h in l2_horizons}
    out_c = {h: bool(coll[: _step_index(h, dt, T) + 1].any()) for h in collision_horizons}
    out_l = {h: bool(lane[: _step_index(h, dt, T) + 1].any()) for h in lane_horizons}
    return ScenarioMetrics(out_l2, out_c, out_l, np.flatnonzero(coll).tolist(), np.flatnonzero(lane).tolist())


@dataclass
class MetricsReport:
    l2_at: dict
    collision_rate_at: dict
    lane_violation_at: dict
    n_scenarios: int

    def to_dict(self) -> dict:
        def keyed(d):
            return {f"{k:g}": v for k, v in d.items()}

        return {
            "n_scenarios": self.n_scenarios,
            "l2_at": keyed(self.l2_at),
            "collision_rate_at": keyed(self.collision_rate_at),
            "lane_violation_at": keyed(self.lane_violation_at),
        }


def aggregate(rows: Sequence[ScenarioMetrics]) -> MetricsReport:
    """Means of L2 and fractions of scenarios with an event up to each horizon."""
    n = len(rows)
    if n == 0:
        return MetricsReport({}, {}, {}, 0)
    l2 = {h: float(np.mean([r.l2_at[h] for r in rows])) for h in rows[0].l2_at}
    coll = {h: float(np.mean([r.collision_at[h] for r in rows])) for h in rows[0].collision_at}
    lane = {h: float(np.mean([r.lane_violation_at[h] for r in rows])) for h in rows[0].lane_violation_at}
    return MetricsReport(l2, coll, lane, n)
