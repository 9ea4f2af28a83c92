"""Decoding perception outputs into boxes, non-maximum suppression and
average precision."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .anchors import decode
from .boxes import iou_matrix
from .network import ModelOutput


@dataclass
class Detections:
    boxes: np.ndarray  # (n, 5) at the current frame
    scores: np.ndarray  # (n,)
    tracks: np.ndarray  # (n, S, 5): current frame plus forecasts

    def __len__(self) -> int:
        return len(self.scores)

    def boxes_at_step(self, s: int) -> np.ndarray:
        return self.tracks[:, s] if len(self) else np.zeros((0, 5))


def nms(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float) -> np.ndarray:
    """Greedy rotated-box suppression; returns kept indices by descending score."""
    order = np.lexsort((np.arange(len(scores)), -scores))
    if len(order) == 0:
        return order
    iou = iou_matrix(boxes[order], boxes[order])
    keep = []
    suppressed = np.zeros(len(order), dtype=bool)
    for i in range(len(order)):
        if suppressed[i]:
            continue
        keep.append(order[i])
        suppressed |= iou[i] > iou_threshold
    return np.array(keep, dtype=int)


def decode_detections(
    output: ModelOutput,
    anchors: np.ndarray,
    score_threshold: float = 0.5,
    nms_iou: float = 0.1,
    max_candidates: int = 200,
    max_detections: int = 50,
) -> Detections:
    """Threshold scores, decode every step of the matched regression and
    suppress overlapping current-frame boxes."""
    k = anchors.shape[2]
    scores = output.scores().reshape(-1)
    reg = output.regression_grid(k)  # (h, w, K, S, 6)
    steps = reg.shape[3]
    reg = reg.reshape(-1, steps, 6)
    flat = anchors.reshape(-1, 5)
    cand = np.flatnonzero(scores >= score_threshold)
    if len(cand) == 0:
        return Detections(np.zeros((0, 5)), np.zeros(0), np.zeros((0, steps, 5)))
    cand = cand[np.lexsort((cand, -scores[cand]))][:max_candidates]
    tracks = decode(reg[cand], flat[cand][:, None, :])
    keep = nms(tracks[:, 0], scores[cand], nms_iou)[:max_detections]
    return Detections(tracks[keep, 0], scores[cand][keep], tracks[keep])


def average_precision(
    detections: Sequence[Detections], ground_truth: Sequence[np.ndarray], iou_threshold: float = 0.5
) -> float:
    """All-point interpolated AP over a set of frames (single class)."""
    records = []
    n_gt = 0
    for f, (det, gt) in enumerate(zip(detections, ground_truth)):
        gt = np.asarray(gt, dtype=float).reshape(-1, 5)
        n_gt += len(gt)
        for j in range(len(det)):
            records.append((-float(det.scores[j]), f, j))
    if n_gt == 0:
        return float("nan")
    records.sort()
    used = [np.zeros(len(np.asarray(g).reshape(-1, 5)), dtype=bool) for g in ground_truth]
    tp = np.zeros(len(records))
    for r, (_, f, j) in enumerate(records):
        gt = np.asarray(ground_truth[f], dtype=float).reshape(-1, 5)
        if len(gt) == 0:
            continue
        ious = iou_matrix(detections[f].boxes[j : j + 1], gt)[0]
        ious = np.where(used[f], -1.0, ious)
        g = int(np.argmax(ious))
        if ious[g] >= iou_threshold:
            tp[r] = 1.0
            used[f][g] = True
    if len(records) == 0:
        return 0.0
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, len(records) + 1)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    idx = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))
