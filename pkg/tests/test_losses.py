import math

import numpy as np
import pytest

from nmp import autodiff as ad
from nmp.anchors import AnchorConfig, associate_anchors, decode, encode, hard_negative_mask, make_anchors
from nmp.autodiff import Tensor
from nmp.bev import RoiSpec
from nmp.losses import LossConfig, perception_loss, perception_targets, planning_loss, total_loss
from nmp.selfcheck import max_rel_error, numeric_grad, planning_loss_check, planning_loss_direct, small_roi

ROI = RoiSpec()


# ---------------------------------------------------------------- anchors


def test_anchor_grid_shape():
    a = make_anchors(ROI)
    assert a.shape == (36, 20, 12, 5)
    assert AnchorConfig().per_cell == 12
    np.testing.assert_allclose(a[0, 0, 0, :2], [-14.4 + 0.8, -16 + 0.8])


def test_encode_decode_roundtrip():
    rng = np.random.default_rng(0)
    an = make_anchors(ROI).reshape(-1, 5)[rng.choice(36 * 20 * 12, 200)]
    gt = np.column_stack([
        an[:, 0] + rng.normal(0, 1, 200), an[:, 1] + rng.normal(0, 1, 200),
        rng.uniform(1, 10, 200), rng.uniform(1, 3, 200), rng.uniform(-3, 3, 200),
    ])
    back = decode(encode(gt, an), an)
    np.testing.assert_allclose(back[:, :4], gt[:, :4], atol=1e-9)
    np.testing.assert_allclose(np.angle(np.exp(1j * (back[:, 4] - gt[:, 4]))), 0, atol=1e-9)


def test_encode_identity_is_zero_offsets():
    box = np.array([1.0, 2.0, 4.8, 2.0, 0.3])
    np.testing.assert_allclose(encode(box, box), [0, 0, 0, 0, 0, 1], atol=1e-15)


def test_identical_box_is_positive():
    anchors = np.array([[0, 0, 4.8, 2.0, 0.0], [10, 0, 4.8, 2.0, 0.0]])
    assoc = associate_anchors(anchors, anchors[:1])
    assert assoc.gt_index.tolist() == [0, -1]


def test_third_iou_falls_back_to_nearest():
    # IoU 1/3 < 0.4 but the unmatched gt still claims its nearest anchor
    anchors = np.array([[0.5, 0, 1, 1, 0.0], [5.0, 0, 1, 1, 0.0]])
    gt = np.array([[0.0, 0, 1, 1, 0.0]])
    assoc = associate_anchors(anchors, gt, 0.4)
    assert assoc.iou[0, 0] == pytest.approx(1 / 3)
    assert assoc.gt_index.tolist() == [0, -1]


def test_nearest_fallback_skips_assigned_anchors():
    anchors = np.array([[0, 0, 4.8, 2, 0.0], [1.0, 0, 4.8, 2, 0.0], [30, 0, 4.8, 2, 0.0]])
    gt = np.array([[0, 0, 4.8, 2, 0.0], [20, 0, 1, 1, 0.0]])
    assoc = associate_anchors(anchors, gt, 0.4)
    # gt 1 overlaps nothing and takes the nearest anchor still free
    assert assoc.gt_index[0] == 0 and 1 in assoc.gt_index.tolist()


def test_hard_negative_ratio():
    loss = np.arange(40, dtype=float)
    pos = np.zeros(40, bool)
    pos[:4] = True
    keep = hard_negative_mask(loss, pos, 3, 8)
    assert keep.sum() == 16 and keep[-12:].all() and keep[:4].all()
    keep = hard_negative_mask(loss, np.zeros(40, bool), 3, 8)
    assert keep.sum() == 8


# ---------------------------------------------------------------- perception


def test_half_scores_balanced_labels_give_ln2():
    labels = np.array([1, 0, 1, 0], float).reshape(1, 4, 1, 1)
    w = np.full(labels.shape, 0.25)
    loss = ad.bce_with_logits(Tensor(np.zeros(labels.shape)), labels, w)
    assert float(loss.data) == pytest.approx(math.log(2))


@pytest.mark.parametrize("r, expected", [(0.5, 0.125), (2.0, 1.5), (-2.0, 1.5), (0.0, 0.0)])
def test_smooth_l1_values(r, expected):
    loss = ad.smooth_l1(Tensor(np.array([r])), np.array([0.0]), np.array([1.0]))
    assert float(loss.data) == pytest.approx(expected)


def _targets_one_gt():
    anchors = make_anchors(ROI)
    track = np.tile([10.0, 2.0, 4.8, 2.0, 0.1], (7, 1))
    track[:, 0] += np.arange(7)
    return anchors, perception_targets(anchors, track[None], 7)


def test_perception_targets_layout():
    anchors, tg = _targets_one_gt()
    assert tg.positive.shape == (12, 36, 20)
    assert tg.reg_targets.shape == (12 * 7 * 6, 36, 20)
    assert tg.positive.sum() >= 1 and tg.n_gt == 1
    k, r, c = np.argwhere(tg.positive)[0]
    reg = tg.reg_targets[k * 42 : (k + 1) * 42, r, c].reshape(7, 6)
    np.testing.assert_allclose(decode(reg[3], anchors[r, c, k])[:2], [13.0, 2.0], atol=1e-9)


def test_perception_targets_without_gt():
    tg = perception_targets(make_anchors(ROI), np.zeros((0, 7, 5)), 7)
    assert not tg.positive.any() and not tg.reg_targets.any()


def test_perfect_predictions_drive_loss_to_zero():
    _, tg = _targets_one_gt()
    logits = np.where(tg.positive, 30.0, -30.0)[None]
    total, parts = perception_loss(Tensor(logits), Tensor(tg.reg_targets[None].copy()), tg, LossConfig())
    assert float(total.data) < 1e-10 and parts["reg"] == 0.0


def test_perception_loss_gradient():
    rng = np.random.default_rng(0)
    _, tg = _targets_one_gt()
    logits = rng.standard_normal((1,) + tg.positive.shape)
    reg = rng.standard_normal((1,) + tg.reg_targets.shape)
    cfg = LossConfig()
    lt, rt = Tensor(logits, requires_grad=True), Tensor(reg, requires_grad=True)
    perception_loss(lt, rt, tg, cfg)[0].backward()
    # mined negatives depend on the logits; probe positive-anchor entries
    k, r, c = np.argwhere(tg.positive)[0]
    idx = [np.ravel_multi_index((0, k, r, c), logits.shape)]
    num = numeric_grad(lambda: float(perception_loss(Tensor(logits), Tensor(reg), tg, cfg)[0].data), logits, index=idx)
    assert max_rel_error(lt.grad.reshape(-1)[idx], num.reshape(-1)[idx]) < 1e-4
    idx = [np.ravel_multi_index((0, k * 42 + j, r, c), reg.shape) for j in range(42)]
    num = numeric_grad(lambda: float(perception_loss(Tensor(logits), Tensor(reg), tg, cfg)[0].data), reg, index=idx)
    assert max_rel_error(rt.grad.reshape(-1)[idx], num.reshape(-1)[idx]) < 1e-4


# ---------------------------------------------------------------- planning


ROI4 = small_roi(4)


def _centre(r, c, roi=ROI4):
    x0, _, y0, _ = roi.bounds
    return [x0 + (r + 0.5) * roi.cell, y0 + (c + 0.5) * roi.cell]


def test_negatives_equal_to_demo_give_zero():
    vol = np.random.default_rng(0).standard_normal((1, 2, 4, 4))
    demo = np.array([_centre(1, 1), _centre(2, 2)])
    loss, _ = planning_loss(Tensor(vol), demo, demo[None].repeat(3, 0), np.zeros((3, 2), bool), ROI4)
    assert float(loss.data) == 0.0


def test_low_demo_cost_gives_zero():
    vol = np.full((1, 2, 4, 4), 50.0)
    vol[0, 0, 1, 1] = vol[0, 1, 2, 2] = -50.0
    demo = np.array([_centre(1, 1), _centre(2, 2)])
    neg = np.array([[_centre(0, 0), _centre(3, 3)], [_centre(3, 0), _centre(0, 3)]])
    loss, _ = planning_loss(Tensor(vol), demo, neg, np.ones((2, 2), bool), ROI4, gamma=10.0)
    assert float(loss.data) == 0.0


def test_two_negatives_by_hand():
    vol = np.zeros((1, 2, 4, 4))
    vol[0, 0, 1, 1] = 2.0  # demo t0
    vol[0, 1, 1, 2] = 1.0  # demo t1
    vol[0, 0, 0, 1] = 0.5  # neg A t0
    vol[0, 1, 0, 2] = 3.0  # neg A t1
    vol[0, 0, 3, 3] = 1.0  # neg B t0
    demo = np.array([_centre(1, 1), _centre(1, 2)])
    neg = np.array([[_centre(0, 1), _centre(0, 2)], [_centre(3, 3), _centre(2, 2)]])
    viol = np.array([[False, True], [False, False]])
    cell = ROI4.cell
    # A: t0 2 - 0.5 + 0.4 = 1.9; t1 1 - 3 + 0.4 + 10 = 8.4 -> 10.3
    a = (2 - 0.5 + cell) + (1 - 3 + cell + 10)
    # B: t0 2 - 1 + |(2,2)|*0.4; t1 1 - 0 + 0.4
    b = (2 - 1 + math.hypot(2, 2) * cell) + (1 - 0 + cell)
    loss, info = planning_loss(Tensor(vol), demo, neg, viol, ROI4, gamma=10.0)
    assert float(loss.data) == pytest.approx(max(a, b), abs=1e-12)
    assert info.worst == 0
    loss0, _ = planning_loss(Tensor(vol), demo, neg, viol, ROI4, gamma=0.0)
    assert float(loss0.data) == pytest.approx(max(a - 10, b), abs=1e-12)


def test_matches_direct_formula():
    assert planning_loss_check(n_cases=30, seed=4).passed


def test_planning_loss_gradient():
    rng = np.random.default_rng(1)
    roi = small_roi(6)
    x0, x1, y0, y1 = roi.bounds
    vol = rng.standard_normal((1, 3, 6, 6))
    demo = rng.uniform([x0, y0], [x1, y1], (3, 2))
    neg = rng.uniform([x0, y0], [x1, y1], (5, 3, 2))
    viol = rng.random((5, 3)) < 0.3
    t = Tensor(vol, requires_grad=True)
    planning_loss(t, demo, neg, viol, roi)[0].backward()
    num = numeric_grad(lambda: float(planning_loss(Tensor(vol), demo, neg, viol, roi)[0].data), vol)
    assert max_rel_error(t.grad, num) < 1e-4


def test_demo_outside_region_is_skipped():
    vol = np.ones((1, 2, 4, 4))
    demo = np.array([_centre(1, 1), [50.0, 0.0]])
    neg = np.array([[_centre(2, 2), _centre(2, 2)]])
    loss, info = planning_loss(Tensor(vol), demo, neg, np.zeros((1, 2), bool), ROI4)
    assert info.skipped_steps == 1
    assert float(loss.data) == pytest.approx(
        planning_loss_direct(vol[0], demo, neg, np.zeros((1, 2), bool), ROI4, 10.0)
    )


def test_planning_loss_shape_errors():
    with pytest.raises(ValueError):
        planning_loss(Tensor(np.zeros((1, 2, 4, 4))), np.zeros((3, 2)), np.zeros((1, 3, 2)), np.zeros((1, 3)), ROI4)
    with pytest.raises(ValueError):
        planning_loss(Tensor(np.zeros((1, 2, 4, 4))), np.zeros((2, 2)), np.zeros((0, 2, 2)), np.zeros((0, 2)), ROI4)


# ---------------------------------------------------------------- total


def test_total_loss_weighting():
    one = Tensor(np.array(1.0))
    assert float(total_loss(one, one, beta=1.0).data) == 2.0
    assert float(total_loss(Tensor(np.array(3.0)), one, beta=0.0).data) == 3.0
    assert float(total_loss(one, Tensor(np.array(5.0)), beta=0.1, perception_weight=0.0).data) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        total_loss(None, None)
