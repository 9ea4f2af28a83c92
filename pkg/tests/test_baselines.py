
import numpy as np
import pytest

from nmp.baselines import (
    MANUAL_OBJECT,
    MANUAL_OFFROAD,
    MANUAL_ROAD,
    Polyline,
    acc_plan,
    baseline_acc,
    baseline_ego_extrapolation,
    baseline_manual_cost,
    estimate_motion,
    ground_truth_boxes,
)
from nmp.bev import RoiSpec, world_to_grid
from nmp.boxes import boxes_overlap
from nmp.rules import sdv_footprints

from helpers import parked, stop_line, straight_scenario

ROI = RoiSpec()


def _history(xs, ys, hs, dt=0.1):
    n = len(xs)
    t = -dt * np.arange(n - 1, -1, -1)
    return np.column_stack([t, xs, ys, hs, np.zeros(n)])


def test_ego_stationary():
    h = _history([3.0] * 5, [1.0] * 5, [0.4] * 5)
    tr = baseline_ego_extrapolation(h, 6, 0.5)
    np.testing.assert_allclose(tr.xy, [[3.0, 1.0]] * 6)
    assert np.all(tr.speed == 0)


def test_ego_straight_constant_speed():
    xs = 10.0 * 0.1 * np.arange(-4, 1)
    tr = baseline_ego_extrapolation(_history(xs, np.zeros(5), np.zeros(5)), 6, 0.5)
    np.testing.assert_allclose(np.diff(np.concatenate([[0.0], tr.xy[:, 0]])), 5.0, atol=1e-9)
    np.testing.assert_allclose(tr.xy[:, 1], 0.0, atol=1e-12)


@pytest.mark.parametrize("R, v, sign", [(25.0, 8.0, 1), (60.0, 12.0, -1)])
def test_ego_continues_circular_arc(R, v, sign):
    # history on a circle of radius R centred at (0, sign * R)
    w = v / R
    t = 0.1 * np.arange(-5, 1)
    ang = w * t
    xs = R * np.sin(ang)
    ys = sign * R * (1 - np.cos(ang))
    hs = sign * ang
    speed, kappa = estimate_motion(_history(xs, ys, hs))
    assert speed == pytest.approx(v, rel=1e-9)
    assert kappa == pytest.approx(sign / R, rel=1e-9)
    tr = baseline_ego_extrapolation(_history(xs, ys, hs), 6, 0.5)
    fut = w * tr.times
    np.testing.assert_allclose(tr.xy[:, 0], R * np.sin(fut), atol=1e-8)
    np.testing.assert_allclose(tr.xy[:, 1], sign * R * (1 - np.cos(fut)), atol=1e-8)


def test_ego_needs_two_rows():
    with pytest.raises(ValueError):
        estimate_motion(np.zeros((1, 5)))


def test_polyline_projection():
    pl = Polyline(np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 10.0]]))
    got = [pl.project(np.array(p)) for p in ([5.0, 1.0], [11.0, 5.0], [-2.0, -1.0])]
    np.testing.assert_allclose(got, [(5.0, 1.0), (15.0, -1.0), (-2.0, -1.0)])
    np.testing.assert_allclose(pl.interpolate(np.array([15.0]))[0, :2], [10.0, 5.0])


def test_acc_cruises_without_lead():
    sc = straight_scenario(v=15.0, speed_limit=15.0)
    tr = baseline_acc(sc)
    np.testing.assert_allclose(tr.speed, 15.0, atol=1e-9)
    np.testing.assert_allclose(tr.xy[:, 1], 0.0, atol=1e-9)
    slow = baseline_acc(straight_scenario(v=10.0, speed_limit=15.0))
    assert np.all(np.diff(slow.speed) >= 0) and slow.speed[-1] <= 15.0 + 1e-9 and slow.speed[-1] > 10.0


def test_acc_stopped_lead():
    sc = straight_scenario(v=10.0, actors=[parked(20.0, 0.0)])
    p = acc_plan(sc)
    assert -5.0 <= p.profile.acceleration <= 0.0
    times = 0.1 * np.arange(1, 31)
    poses = p.poses_at(times)
    fp = sdv_footprints(poses, sc.sdv_length, sc.sdv_width)
    lead = sc.actor_boxes(times)[0]
    assert not boxes_overlap(fp, lead).any()
    tr = p.trajectory(6, 0.5)
    assert tr.speed[-1] == pytest.approx(0.0, abs=1e-9)


def test_acc_red_stop_line():
    sc = straight_scenario(v=8.0, stop_lines=[stop_line(25.0)])
    p = acc_plan(sc)
    a = p.profile.acceleration
    assert -5.0 <= a < 0.0
    # the constant deceleration brings the front bumper to rest before the line
    rest = sc.sdv.pose.x + 8.0**2 / (2 * -a)
    assert rest + sc.sdv_length / 2 <= 25.0 + 1e-9
    tr = baseline_acc(sc)
    assert np.all(tr.xy[:, 0] + sc.sdv_length / 2 <= 25.0)
    green = baseline_acc(straight_scenario(v=8.0, stop_lines=[stop_line(25.0, red=False)]))
    assert green.xy[-1, 0] > 25.0


def test_acc_ignores_other_lanes():
    sc = straight_scenario(v=15.0, actors=[parked(20.0, 3.5)])
    np.testing.assert_allclose(baseline_acc(sc).speed, 15.0, atol=1e-9)


def test_manual_all_road_is_zero():
    x0, x1, y0, y1 = ROI.bounds
    sc = straight_scenario(road=[[x0 - 1, y0 - 1], [x1 + 1, y0 - 1], [x1 + 1, y1 + 1], [x0 - 1, y1 + 1]])
    vol = baseline_manual_cost(sc, ROI, ground_truth_boxes(sc, sc.demonstration.times))
    assert vol.shape == (6, ROI.H, ROI.W) and not vol.any()


def test_manual_levels():
    sc = straight_scenario(actors=[parked(20.0, 0.0)])
    vol = baseline_manual_cost(sc, ROI, ground_truth_boxes(sc, sc.demonstration.times))
    assert set(np.unique(vol).tolist()) == {MANUAL_ROAD, MANUAL_OFFROAD, MANUAL_OBJECT}
    r, c = world_to_grid((20.0, 0.0), ROI)
    assert np.all(vol[:, r, c] == 255.0)
    r, c = world_to_grid((5.0, 10.0), ROI)
    assert np.all(vol[:, r, c] == 100.0)
    r, c = world_to_grid((5.0, 0.0), ROI)
    assert np.all(vol[:, r, c] == 0.0)


def test_manual_boxes_per_step():
    sc = straight_scenario()
    boxes = [np.zeros((0, 5))] * 5 + [np.array([[10.0, 0.0, 4.0, 2.0, 0.0]])]
    vol = baseline_manual_cost(sc, ROI, boxes)
    r, c = world_to_grid((10.0, 0.0), ROI)
    assert vol[5, r, c] == 255.0 and vol[0, r, c] == 0.0
