"""Anchor boxes, regression target encoding and ground-truth association."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bev import RoiSpec
from .boxes import iou_matrix

N_REG = 6  # l_x, l_y, s_w, s_h, a_sin, a_cos


@dataclass(frozen=True)
class AnchorConfig:
    sizes: tuple = ((4.8, 2.0), (9.0, 2.6))
    orientations: tuple = (0.0, math.pi / 4, -math.pi / 4)
    aspect_flip: bool = True
    iou_threshold: float = 0.4
    stride: int = 4

    @property
    def per_cell(self) -> int:
        return len(self.sizes) * (2 if self.aspect_flip else 1) * len(self.orientations)

    def templates(self) -> np.ndarray:
        """(K, 3) rows of w, h, theta, in a fixed order."""
        rows = []
        for w, h in self.sizes:
            shapes = [(w, h), (h, w)] if self.aspect_flip else [(w, h)]
            for sw, sh in shapes:
                for th in self.orientations:
                    rows.append((sw, sh, th))
        return np.array(rows)


def make_anchors(roi: RoiSpec, cfg: AnchorConfig = AnchorConfig()) -> np.ndarray:
    """(H/stride, W/stride, K, 5) anchors centred on feature-map cells."""
    if roi.H % cfg.stride or roi.W % cfg.stride:
        raise ValueError("grid size must be divisible by the anchor stride")
    fh, fw = roi.H // cfg.stride, roi.W // cfg.stride
    step = roi.cell * cfg.stride
    xs = -roi.length_back + (np.arange(fh) + 0.5) * step
    ys = -roi.width_half + (np.arange(fw) + 0.5) * step
    tmpl = cfg.templates()
    k = len(tmpl)
    out = np.empty((fh, fw, k, 5))
    out[..., 0] = xs[:, None, None]
    out[..., 1] = ys[None, :, None]
    out[..., 2:] = tmpl[None, None]
    return out


def encode(gt: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Regression targets (..., 6) of boxes relative to anchors."""
    gt = np.asarray(gt, dtype=float)
    an = np.asarray(anchors, dtype=float)
    dtheta = an[..., 4] - gt[..., 4]
    return np.stack(
        [
            (an[..., 0] - gt[..., 0]) / an[..., 2],
            (an[..., 1] - gt[..., 1]) / an[..., 3],
            np.log(gt[..., 2] / an[..., 2]),
            np.log(gt[..., 3] / an[..., 3]),
            np.sin(dtheta),
            np.cos(dtheta),
        ],
        axis=-1,
    )


def decode(reg: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Inverse of :func:`encode`; boxes (..., 5)."""
    reg = np.asarray(reg, dtype=float)
    an = np.asarray(anchors, dtype=float)
    theta = an[..., 4] - np.arctan2(reg[..., 4], reg[..., 5])
    theta = (theta + np.pi) % (2 * np.pi) - np.pi
    return np.stack(
        [
            an[..., 0] - reg[..., 0] * an[..., 2],
            an[..., 1] - reg[..., 1] * an[..., 3],
            an[..., 2] * np.exp(reg[..., 2]),
            an[..., 3] * np.exp(reg[..., 3]),
            theta,
        ],
        axis=-1,
    )


@dataclass
class Association:
    """Per-anchor assignment over a flattened anchor list."""

    gt_index: np.ndarray  # (A,) index of the assigned ground truth, -1 = background
    iou: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def positive(self) -> np.ndarray:
        return self.gt_index >= 0


def associate_anchors(anchors: np.ndarray, gt_boxes: np.ndarray, threshold: float = 0.4) -> Association:
    """Match anchors to ground truth.

    An anchor takes its highest-IoU ground truth among those with IoU above
    ``threshold``. Any ground truth left without an anchor then claims the
    nearest unassigned anchor by centre distance (ties: higher IoU, then
    lower index).
    """
    anchors = np.asarray(anchors, dtype=float).reshape(-1, 5)
    gt = np.asarray(gt_boxes, dtype=float).reshape(-1, 5)
    a = len(anchors)
    assign = np.full(a, -1, dtype=int)
    if len(gt) == 0 or a == 0:
        return Association(assign, np.zeros((a, len(gt))))
    iou = iou_matrix(anchors, gt)
    best = np.argmax(iou, axis=1)
    best_iou = iou[np.arange(a), best]
    above = best_iou > threshold
    assign[above] = best[above]
    for g in range(len(gt)):
        if np.any(assign == g):
            continue
        free = np.flatnonzero(assign < 0)
        if len(free) == 0:
            break
        d = np.hypot(anchors[free, 0] - gt[g, 0], anchors[free, 1] - gt[g, 1])
        # lexsort keys: last key is primary
        order = np.lexsort((free, -iou[free, g], d))
        assign[free[order[0]]] = g
    return Association(assign, iou)


def hard_negative_mask(cls_loss: np.ndarray, positive: np.ndarray, ratio: float = 3.0, min_negatives: int = 8) -> np.ndarray:
    """Keep every positive plus the ``ratio * n_pos`` highest-loss negatives."""
    cls_loss = np.asarray(cls_loss).reshape(-1)
    positive = np.asarray(positive, dtype=bool).reshape(-1)
    neg = np.flatnonzero(~positive)
    k = min(len(neg), max(int(round(ratio * positive.sum())), min_negatives))
    keep = positive.copy()
    if k > 0:
        # stable order: descending loss, then index
        order = np.lexsort((neg, -cls_loss[neg]))
        keep[neg[order[:k]]] = True
    return keep
