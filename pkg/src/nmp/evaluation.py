"""Scenario-set evaluation of the learned planner and the baselines, with
CSV and JSON reports."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .anchors import AnchorConfig, make_anchors
from .autodiff import ParamStore
from .baselines import baseline_acc, baseline_ego_extrapolation, baseline_manual_cost, ground_truth_boxes
from .config import RunConfig
from .detection import Detections, average_precision, decode_detections
from .network import NMPModel
from .pipeline import Example, inference_samples, prepare_example, run_model
from .planner import ScenarioMetrics, aggregate, evaluate, plan
from .workers import pmap

PLANNERS = ("demonstration", "nmp", "ego", "acc", "manual")


@dataclass
class ScenarioOutcome:
    seed: int
    archetype: str
    metrics: dict  # planner -> ScenarioMetrics
    chosen_id: Optional[int] = None
    manual_chosen_id: Optional[int] = None
    manual_levels: tuple = ()


@dataclass
class EvalResult:
    outcomes: list
    summary: dict
    manual_source: str
    detection_map: Optional[float] = None
    planners: tuple = PLANNERS


def manual_boxes(scenario, detections: Optional[Detections], source: str) -> list:
    """Boxes per future step for the manual cost volume."""
    T = scenario.horizon
    if source == "ground_truth" or detections is None:
        return ground_truth_boxes(scenario, scenario.dt * np.arange(1, T + 1))
    return [detections.boxes_at_step(s) for s in range(1, T + 1)]


def evaluate_example(model: NMPModel, example: Example, cfg: RunConfig, anchors: np.ndarray):
    sc = example.scenario
    use_det = cfg.train.perception_loss
    out = run_model(model, example, with_perception=use_det)
    samples = inference_samples(sc, cfg)
    volume = out.cost.data[0].astype(float)
    nmp = plan(volume, samples, cfg.roi)
    dets = None
    if use_det:
        dets = decode_detections(out, anchors, cfg.eval.score_threshold, cfg.eval.nms_iou)
    source = cfg.eval.manual_source if use_det else "ground_truth"
    manual_vol = baseline_manual_cost(sc, cfg.roi, manual_boxes(sc, dets, source))
    manual = plan(manual_vol, samples, cfg.roi)
    T, dt = sc.horizon, sc.dt
    trajs = {
        "demonstration": sc.demonstration,
        "nmp": nmp.chosen,
        "ego": baseline_ego_extrapolation(sc.sdv_history(), T, dt, sc.sdv.wheelbase),
        "acc": baseline_acc(sc, T, dt),
        "manual": manual.chosen,
    }
    metrics = {k: evaluate(v, sc) for k, v in trajs.items()}
    outcome = ScenarioOutcome(
        sc.seed, sc.archetype, metrics, nmp.chosen_id, manual.chosen_id, tuple(np.unique(manual_vol).tolist())
    )
    return outcome, dets, source, trajs, volume


_WORKER: dict = {}


def _init_worker(param_blob: bytes, cfg_json: str) -> None:
    cfg = RunConfig.from_dict(json.loads(cfg_json))
    model = NMPModel(cfg.model_config(), seed=cfg.model.init_seed)
    model.load_params(ParamStore.from_bytes(param_blob))
    _WORKER.update(model=model, cfg=cfg, anchors=make_anchors(cfg.roi, AnchorConfig()))


def _use_worker(model: NMPModel, cfg: RunConfig) -> None:
    _WORKER.update(model=model, cfg=cfg, anchors=make_anchors(cfg.roi, AnchorConfig()))


def _evaluate_job(sc):
    model, cfg, anchors = _WORKER["model"], _WORKER["cfg"], _WORKER["anchors"]
    ex = prepare_example(sc, cfg, anchors)
    outcome, det, source, _, _ = evaluate_example(model, ex, cfg, anchors)
    gt = ex.gt_tracks[:, 0] if len(ex.gt_tracks) else np.zeros((0, 5))
    return outcome, det, source, gt


def evaluate_set(model: NMPModel, scenarios: Sequence, cfg: RunConfig, progress=None, workers: int = 1) -> EvalResult:
    """Every planner on every scenario; per-scenario work may run in a pool."""
    if workers > 1:
        init, args = _init_worker, (model.params.to_bytes(), cfg.dumps())
    else:
        init, args = _use_worker, (model, cfg)
    results = pmap(_evaluate_job, scenarios, workers, init, args)
    outcomes, dets, gts = [], [], []
    sources = set()
    for i, (outcome, det, source, gt) in enumerate(results):
        outcomes.append(outcome)
        sources.add(source)
        if det is not None:
            dets.append(det)
            gts.append(gt)
        if progress:
            progress(i, outcome)
    summary = {p: aggregate([o.metrics[p] for o in outcomes]).to_dict() for p in PLANNERS}
    det_map = average_precision(dets, gts, cfg.eval.map_iou) if dets else None
    return EvalResult(outcomes, summary, "+".join(sorted(sources)) or cfg.eval.manual_source, det_map)


# ---------------------------------------------------------------- reports


def _flat_metrics(m: ScenarioMetrics) -> dict:
    row = {}
    for h, v in m.l2_at.items():
        row[f"l2_{h:g}s"] = repr(float(v))
    for h, v in m.collision_at.items():
        row[f"collision_{h:g}s"] = int(v)
    for h, v in m.lane_violation_at.items():
        row[f"lane_violation_{h:g}s"] = int(v)
    return row


def write_reports(result: EvalResult, out_dir, cfg_digest: str = "") -> dict:
    """metrics.csv (one row per scenario and planner) and summary.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for o in result.outcomes:
        for p in result.planners:
            row = {"seed": o.seed, "archetype": o.archetype, "planner": p}
            row["chosen_id"] = o.chosen_id if p == "nmp" else (o.manual_chosen_id if p == "manual" else "")
            row.update(_flat_metrics(o.metrics[p]))
            rows.append(row)
    cols = list(rows[0]) if rows else ["seed", "archetype", "planner", "chosen_id"]
    with open(out / "metrics.csv", "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=cols)
        wr.writeheader()
        wr.writerows(rows)
    summary = {
        "config_digest": cfg_digest,
        "manual_source": result.manual_source,
        "planners": result.summary,
        "n_scenarios": len(result.outcomes),
    }
    if result.detection_map is not None:
        summary["detection_map"] = result.detection_map
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return summary
