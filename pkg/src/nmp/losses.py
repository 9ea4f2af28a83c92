"""Training objectives: perception (classification + regression) and the
max-margin planning loss, combined into the multi-task total."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .anchors import N_REG, associate_anchors, encode, hard_negative_mask
from .autodiff import Tensor
from .autodiff.ops import binary_cross_entropy_terms
from .bev import RoiSpec
from .costvolume import OUTSIDE_COST, bilinear_taps


@dataclass
class LossConfig:
    alpha: float = 1.0
    beta: float = 0.1
    gamma: float = 10.0
    neg_ratio: float = 3.0
    min_negatives: int = 8


# ---------------------------------------------------------------- perception


@dataclass
class PerceptionTargets:
    """Dense targets laid out like the network outputs (channel-major)."""

    positive: np.ndarray  # (K, h, w) bool
    reg_targets: np.ndarray  # (K * 6 * S, h, w)
    n_gt: int = 0


def perception_targets(
    anchors: np.ndarray, gt_tracks: np.ndarray, steps: int, threshold: float = 0.4
) -> PerceptionTargets:
    """Targets from anchors (h, w, K, 5) and gt boxes per step (G, steps, 5);
    step 0 drives association."""
    h, w, k, _ = anchors.shape
    gt_tracks = np.asarray(gt_tracks, dtype=float).reshape(-1, steps, 5)
    flat = anchors.reshape(-1, 5)
    assoc = associate_anchors(flat, gt_tracks[:, 0], threshold)
    pos = assoc.positive
    reg = np.zeros((len(flat), steps, N_REG))
    if pos.any():
        matched = gt_tracks[assoc.gt_index[pos]]  # (P, S, 5)
        reg[pos] = encode(matched, flat[pos][:, None, :])
    # (h, w, K, S, 6) -> (K, S, 6, h, w) -> (K*S*6, h, w)
    reg = reg.reshape(h, w, k, steps, N_REG).transpose(2, 3, 4, 0, 1).reshape(k * steps * N_REG, h, w)
    positive = pos.reshape(h, w, k).transpose(2, 0, 1)
    return PerceptionTargets(positive, reg, len(gt_tracks))


def perception_loss(cls_logits: Tensor, regression: Tensor, targets: PerceptionTargets, cfg: LossConfig):
    """Mean cross-entropy over positives and mined negatives, plus alpha
    times the smooth-L1 regression summed over steps and averaged over
    positive anchors. Returns (loss tensor, parts dict)."""
    pos = targets.positive[None]
    logits = cls_logits.data
    terms = binary_cross_entropy_terms(logits, pos.astype(float))
    keep = hard_negative_mask(terms, pos, cfg.neg_ratio, cfg.min_negatives).reshape(pos.shape)
    n_keep = max(int(keep.sum()), 1)
    l_cla = ad.bce_with_logits(cls_logits, pos.astype(logits.dtype), keep / n_keep)
    n_pos = int(pos.sum())
    k = pos.shape[1]
    per_anchor = regression.shape[1] // k
    reg_w = np.repeat(pos[0], per_anchor, axis=0)[None].astype(regression.dtype)
    if n_pos:
        reg_w = reg_w / n_pos
    l_reg = ad.smooth_l1(regression, targets.reg_targets[None], reg_w)
    total = l_cla + l_reg * cfg.alpha
    parts = {"cls": float(l_cla.data), "reg": float(l_reg.data), "n_pos": n_pos, "n_neg": n_keep - n_pos}
    return total, parts


# ---------------------------------------------------------------- planning


@dataclass
class PlanningLossInfo:
    per_negative: np.ndarray
    worst: int
    skipped_steps: int
    active_steps: int
    hinge: np.ndarray = field(default_factory=lambda: np.zeros(0))


def planning_loss(
    cost: Tensor,
    demo_xy: np.ndarray,
    neg_xy: np.ndarray,
    violations: np.ndarray,
    roi: RoiSpec,
    gamma: float = 10.0,
    outside: float = OUTSIDE_COST,
):
    """Max over negatives of sum_t [c_demo^t - c_i^t + d_i^t + gamma_i^t]_+.

    ``cost`` is (1, T, H, W); waypoint t of every trajectory reads slice t by
    bilinear interpolation. Demonstration steps outside the region are
    skipped; negative waypoints outside it cost ``outside`` and receive no
    gradient. Returns (loss tensor, PlanningLossInfo).
    """
    vol = cost.data
    _, t_dim, h, w = vol.shape
    demo_xy = np.asarray(demo_xy, dtype=float)
    neg_xy = np.asarray(neg_xy, dtype=float)
    if neg_xy.ndim != 3 or len(neg_xy) == 0:
        raise ValueError("planning_loss needs a nonempty (N, T, 2) negative set")
    if demo_xy.shape != (t_dim, 2) or neg_xy.shape[1:] != (t_dim, 2):
        raise ValueError("trajectory length must match the cost volume depth")
    flat = vol.reshape(t_dim, h * w).astype(float)
    d_idx, d_wts, d_in = bilinear_taps(demo_xy, roi)
    n_idx, n_wts, n_in = bilinear_taps(neg_xy, roi)
    steps = np.arange(t_dim)
    c_demo = np.sum(d_wts * flat[steps[:, None], d_idx], axis=-1)
    c_neg = np.sum(n_wts * flat[steps[None, :, None], n_idx], axis=-1)
    c_neg = np.where(n_in, c_neg, outside)
    dist = np.linalg.norm(demo_xy[None] - neg_xy, axis=-1)
    penalty = gamma * np.asarray(violations, dtype=float)
    hinge = c_demo[None] - c_neg + dist + penalty
    # NaN hinges stay active so a broken volume cannot look like a zero loss
    active = ((hinge > 0) | np.isnan(hinge)) & d_in[None]
    per_neg = np.sum(np.where(active, hinge, 0.0), axis=1)
    worst = int(np.argmax(per_neg))
    total = np.asarray(per_neg[worst], dtype=vol.dtype)
    act = active[worst]

    def back(g):
        grad = np.zeros((t_dim, h * w))
        for t in np.flatnonzero(act):
            np.add.at(grad[t], d_idx[t], d_wts[t])
            if n_in[worst, t]:
                np.add.at(grad[t], n_idx[worst, t], -n_wts[worst, t])
        return ((g * grad).reshape(vol.shape).astype(vol.dtype),)

    info = PlanningLossInfo(per_neg, worst, int((~d_in).sum()), int(act.sum()), hinge)
    return Tensor(total, parents=(cost,), backward_fn=back), info


def total_loss(
    perception: Optional[Tensor],
    planning: Optional[Tensor],
    beta: float = 0.1,
    perception_weight: float = 1.0,
) -> Tensor:
    """perception_weight * L_perception + beta * L_planning; either term may be absent."""
    terms = []
    if perception is not None and perception_weight != 0:
        terms.append(perception * perception_weight)
    if planning is not None and beta != 0:
        terms.append(planning * beta)
    if not terms:
        raise ValueError("total_loss needs at least one active term")
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out
