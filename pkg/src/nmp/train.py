"""Multi-task training loop."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff.params import global_grad_norm
from .config import RunConfig
from .losses import perception_loss, planning_loss, total_loss
from .network import NMPModel
from .pipeline import Example, run_model
from .rules import violation_mask
from .sampler import sample_negatives, stack_poses


class NumericalError(RuntimeError):
    """Raised when a loss or gradient stops being finite."""


@dataclass
class TrainResult:
    rows: list
    columns: list
    best_step: int
    best_loss: float
    best_params: dict
    excluded: list = field(default_factory=list)


def log_columns(cfg: RunConfig) -> list:
    cols = ["step", "scenario"]
    if cfg.train.perception_loss:
        cols += ["perception", "cls", "reg"]
    if cfg.train.plan_loss:
        cols += ["planning"]
    cols += ["total", "grad_norm"]
    return cols


def negatives_for(example: Example, cfg: RunConfig, rng: np.random.Generator, n: Optional[int] = None):
    """Negative positions (N, T, 2) and the rule-violation mask (N, T)."""
    sc = example.scenario
    demo = sc.demonstration
    negs = sample_negatives(sc.sdv, demo, cfg.sampler, n or cfg.train.n_negatives, rng)
    poses = stack_poses(negs)
    if cfg.train.penalty:
        viol = violation_mask(sc, poses, demo.times)
    else:
        viol = np.zeros(poses.shape[:2], dtype=bool)
    return poses[..., :2], viol


def example_losses(model: NMPModel, example: Example, cfg: RunConfig, negatives):
    """Forward pass plus every active loss term for one example."""
    tc = cfg.train
    out = run_model(model, example, with_perception=tc.perception_loss)
    parts = {}
    perc = plan = None
    if tc.perception_loss:
        perc, p = perception_loss(out.cls_logits, out.regression, example.targets, cfg.loss)
        parts.update(perception=float(perc.data), cls=p["cls"], reg=p["reg"])
    if tc.plan_loss:
        neg_xy, viol = negatives
        plan, info = planning_loss(out.cost, example.demo_xy, neg_xy, viol, cfg.roi, cfg.loss.gamma)
        parts["planning"] = float(plan.data)
    total = total_loss(
        perc,
        plan,
        beta=cfg.loss.beta if tc.plan_loss else 0.0,
        perception_weight=1.0 if tc.perception_loss else 0.0,
    )
    parts["total"] = float(total.data)
    return total, parts, out


def usable_examples(examples: Sequence[Example], cfg: RunConfig):
    keep, dropped = [], []
    for i, ex in enumerate(examples):
        (dropped if ex.skipped_steps > cfg.train.max_skipped_steps else keep).append(i)
    return keep, dropped


def train(
    model: NMPModel,
    examples: Sequence[Example],
    cfg: RunConfig,
    log_path=None,
    progress=None,
) -> TrainResult:
    """Sequential SGD/Adam over examples in per-epoch shuffled order.

    The best checkpoint is the parameter snapshot with the lowest mean total
    loss over a full pass through the training set.
    """
    tc = cfg.train
    keep, dropped = usable_examples(examples, cfg)
    if not keep:
        raise ValueError("no usable training scenarios")
    rng = np.random.default_rng(tc.seed)
    neg_rng = np.random.default_rng([tc.seed, 1])
    cols = log_columns(cfg)
    rows = []
    order: list = []
    epoch_losses: list = []
    best = (math.inf, -1, model.params.snapshot())
    fh = open(log_path, "w", newline="") if log_path else None
    writer = csv.writer(fh) if fh else None
    if writer:
        writer.writerow(cols)
    try:
        for step in range(tc.steps):
            if not order:
                order = [keep[i] for i in rng.permutation(len(keep))]
            idx = order.pop(0)
            ex = examples[idx]
            negatives = negatives_for(ex, cfg, neg_rng) if tc.plan_loss else None
            model.params.zero_grad()
            total, parts, _ = example_losses(model, ex, cfg, negatives)
            if not math.isfinite(parts["total"]):
                raise NumericalError(f"non-finite loss at step {step} on scenario {idx}: {parts}")
            total.backward()
            for name, p in model.params.items():
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
            gnorm = global_grad_norm(model.params)
            if not math.isfinite(gnorm):
                raise NumericalError(f"non-finite gradient at step {step} on scenario {idx}")
            if tc.optimizer == "adam":
                ad.adam_step(model.params, tc.lr, clip_norm=tc.clip_norm)
            else:
                ad.sgd_step(model.params, tc.lr, tc.momentum, clip_norm=tc.clip_norm)
            row = {"step": step, "scenario": idx, "grad_norm": gnorm, **parts}
            rows.append(row)
            if writer:
                writer.writerow([_fmt(row[c]) for c in cols])
            epoch_losses.append(parts["total"])
            if not order:
                mean = float(np.mean(epoch_losses))
                epoch_losses = []
                if mean < best[0]:
                    best = (mean, step, model.params.snapshot())
            if progress:
                progress(step, row)
    finally:
        if fh:
            fh.close()
    if best[1] < 0 and rows:
        # shorter than one epoch: fall back to the final parameters
        best = (float(np.mean(epoch_losses)), rows[-1]["step"], model.params.snapshot())
    return TrainResult(rows, cols, best[1], best[0], best[2], [examples[i].scenario.seed for i in dropped])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def fixed_negatives(examples: Sequence[Example], cfg: RunConfig, seed: int = 12345, n: Optional[int] = None) -> list:
    rng = np.random.default_rng(seed)
    return [negatives_for(ex, cfg, rng, n) for ex in examples]


def mean_planning_loss(model: NMPModel, examples: Sequence[Example], cfg: RunConfig, negatives: list) -> float:
    """Max-margin loss averaged over examples with a fixed negative set."""
    vals = []
    for ex, (neg_xy, viol) in zip(examples, negatives):
        out = run_model(model, ex, with_perception=False)
        loss, _ = planning_loss(out.cost, ex.demo_xy, neg_xy, viol, cfg.roi, cfg.loss.gamma)
        vals.append(float(loss.data))
    return float(np.mean(vals))
