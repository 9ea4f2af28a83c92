import numpy as np
import pytest

from nmp.anchors import encode, make_anchors
from nmp.autodiff import Tensor
from nmp.bev import RoiSpec
from nmp.detection import Detections, average_precision, decode_detections, nms
from nmp.network import ModelOutput


def _dets(boxes, scores):
    boxes = np.asarray(boxes, float).reshape(-1, 5)
    return Detections(boxes, np.asarray(scores, float), boxes[:, None, :])


def test_nms_keeps_best_of_overlapping_pair():
    boxes = np.array([[0, 0, 4, 2, 0], [0.3, 0, 4, 2, 0], [10, 0, 4, 2, 0]], float)
    keep = nms(boxes, np.array([0.6, 0.9, 0.7]), 0.1)
    assert keep.tolist() == [1, 2]


def test_nms_tie_prefers_lower_index():
    boxes = np.array([[0, 0, 4, 2, 0], [0, 0, 4, 2, 0]], float)
    assert nms(boxes, np.array([0.5, 0.5]), 0.1).tolist() == [0]
    assert nms(np.zeros((0, 5)), np.zeros(0), 0.1).tolist() == []


def test_ap_hand_example():
    gt = np.array([[0, 0, 4, 2, 0], [20, 0, 4, 2, 0]], float)
    # TP, FP, TP -> precision 1, 1/2, 2/3 at recall 1/2, 1/2, 1
    det = _dets([[0, 0, 4, 2, 0], [40, 0, 4, 2, 0], [20, 0, 4, 2, 0]], [0.9, 0.8, 0.7])
    assert average_precision([det], [gt]) == pytest.approx(0.5 * 1 + 0.5 * 2 / 3)


def test_ap_duplicates_count_as_false_positives():
    gt = np.array([[0, 0, 4, 2, 0]], float)
    det = _dets([[0, 0, 4, 2, 0], [0, 0, 4, 2, 0]], [0.9, 0.8])
    assert average_precision([det], [gt]) == pytest.approx(1.0)
    det = _dets([[0, 0, 4, 2, 0], [0, 0, 4, 2, 0]], [0.8, 0.9])
    assert average_precision([det], [gt]) == pytest.approx(1.0)
    det = _dets([[50, 0, 4, 2, 0], [0, 0, 4, 2, 0]], [0.9, 0.8])
    assert average_precision([det], [gt]) == pytest.approx(0.5)


def test_ap_edge_cases():
    assert np.isnan(average_precision([_dets([], [])], [np.zeros((0, 5))]))
    assert average_precision([_dets([], [])], [np.array([[0, 0, 4, 2, 0]])]) == 0.0


def test_decode_recovers_planted_box():
    roi = RoiSpec()
    anchors = make_anchors(roi)
    h, w, k, _ = anchors.shape
    logits = np.full((1, k, h, w), -10.0)
    reg = np.zeros((1, k * 6 * 2, h, w))
    r, c, a = 10, 5, 3
    target = anchors[r, c, a] + [0.3, -0.2, 0.5, 0.1, 0.05]
    logits[0, a, r, c] = 10.0
    reg[0, a * 12 : a * 12 + 6, r, c] = encode(target, anchors[r, c, a])
    reg[0, a * 12 + 6 : a * 12 + 12, r, c] = encode(target + [2, 0, 0, 0, 0], anchors[r, c, a])
    out = ModelOutput(None, Tensor(logits), Tensor(reg), None)
    dets = decode_detections(out, anchors)
    assert len(dets) == 1
    np.testing.assert_allclose(dets.boxes[0], target, atol=1e-9)
    np.testing.assert_allclose(dets.tracks[0, 1, 0], target[0] + 2, atol=1e-9)
    assert len(decode_detections(out, anchors, score_threshold=1.0)) == 0
