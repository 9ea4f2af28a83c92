"""Glue between scenarios, rasters and the model: example preparation and
single-scenario inference."""
from __future__ import annotations

import zlib
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .anchors import AnchorConfig, make_anchors
from .bev import BevTensor, rasterize_map, rasterize_sweeps, stack
from .config import RunConfig
from .costvolume import bilinear_taps
from .losses import PerceptionTargets, perception_targets
from .network import ModelOutput, NMPModel
from .sampler import sample_trajectories
from .scenario.lidar import synthesize_sweeps
from .scenario.model import Scenario
from .workers import pmap


@dataclass
class Example:
    scenario: Scenario
    bev: BevTensor
    targets: PerceptionTargets
    gt_tracks: np.ndarray  # (G, T+1, 5) boxes of actors inside the region at t = 0
    demo_xy: np.ndarray
    skipped_steps: int

    def input_array(self, dtype=np.float32) -> np.ndarray:
        return self.bev.to_nchw(dtype)


def scenario_seed(scenario: Scenario, offset: int = 0) -> int:
    return (int(scenario.seed) * 1_000_003 + int(offset)) % (2**63)


def build_input(scenario: Scenario, cfg: RunConfig) -> BevTensor:
    pts = synthesize_sweeps(scenario, cfg.roi.T_prime, cfg.lidar, seed=scenario_seed(scenario, 17))
    return stack(rasterize_sweeps(pts, cfg.roi), rasterize_map(scenario, cfg.roi))


def gt_tracks(scenario: Scenario, cfg: RunConfig) -> np.ndarray:
    """Boxes of actors whose current centre lies in the region, at the
    current frame and every future waypoint time."""
    x0, x1, y0, y1 = cfg.roi.bounds
    times = scenario.dt * np.arange(scenario.horizon + 1)
    boxes = scenario.actor_boxes(times)  # (A, S, 5)
    if len(boxes) == 0:
        return np.zeros((0, len(times), 5))
    c = boxes[:, 0, :2]
    inside = (c[:, 0] >= x0) & (c[:, 0] < x1) & (c[:, 1] >= y0) & (c[:, 1] < y1)
    return boxes[inside]


def prepare_example(scenario: Scenario, cfg: RunConfig, anchors: Optional[np.ndarray] = None) -> Example:
    anchors = make_anchors(cfg.roi, AnchorConfig()) if anchors is None else anchors
    tracks = gt_tracks(scenario, cfg)
    targets = perception_targets(anchors, tracks, scenario.horizon + 1, AnchorConfig().iou_threshold)
    demo_xy = scenario.demonstration.xy
    _, _, inside = bilinear_taps(demo_xy, cfg.roi)
    return Example(scenario, build_input(scenario, cfg), targets, tracks, demo_xy, int((~inside).sum()))


def inference_samples(scenario: Scenario, cfg: RunConfig):
    """The candidate set for one scenario, seeded from the scenario."""
    sampler = replace(cfg.sampler, seed=scenario_seed(scenario, cfg.eval.sampler_seed_offset))
    return sample_trajectories(scenario.sdv, sampler, scenario.horizon, scenario.dt)


def run_model(model: NMPModel, example: Example, with_perception: Optional[bool] = None) -> ModelOutput:
    return model.forward(example.input_array(model.params.dtype), with_perception=with_perception)


def config_fingerprint(cfg: RunConfig) -> int:
    return zlib.crc32(cfg.dumps().encode())


def _prepare_job(job) -> Example:
    scenario, cfg = job
    return prepare_example(scenario, cfg)


def prepare_examples(scenarios, cfg: RunConfig, workers: int = 1) -> list:
    return pmap(_prepare_job, [(sc, cfg) for sc in scenarios], workers)
