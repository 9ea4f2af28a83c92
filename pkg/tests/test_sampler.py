import numpy as np
import pytest

from nmp.geometry import CLOTHOID, Pose2, SdvState, build_trajectory, PathSpec, VelocityProfile, STRAIGHT
from nmp.sampler import SamplerConfig, sample_negatives, sample_trajectories, stack_xy


def _state(v=8.0, steering=0.02):
    return SdvState(Pose2(0.0, 0.0, 0.0), v, steering)


def _demo(state):
    return build_trajectory(PathSpec(STRAIGHT), VelocityProfile(state.velocity, 0.0), state, 6, 0.5)


def test_zero_samples_gives_empty_list():
    assert sample_trajectories(_state(), SamplerConfig(n_samples=0), 6, 0.5) == []


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(p_straight=0.6)
    with pytest.raises(ValueError):
        SamplerConfig(scale_range=(80, 6))
    with pytest.raises(ValueError):
        SamplerConfig(negative_violate_prob=1.5)


def test_fixed_seed_is_reproducible():
    cfg = SamplerConfig(n_samples=50, seed=11)
    a = stack_xy(sample_trajectories(_state(), cfg, 6, 0.5))
    b = stack_xy(sample_trajectories(_state(), cfg, 6, 0.5))
    assert a.tobytes() == b.tobytes()


def test_distinct_seeds_differ():
    a = stack_xy(sample_trajectories(_state(), SamplerConfig(n_samples=20, seed=1), 6, 0.5))
    b = stack_xy(sample_trajectories(_state(), SamplerConfig(n_samples=20, seed=2), 6, 0.5))
    assert a.tobytes() != b.tobytes()


def test_samples_start_from_state_and_respect_envelope():
    state = _state(v=7.0, steering=-0.03)
    cfg = SamplerConfig(n_samples=300, seed=5)
    for tr in sample_trajectories(state, cfg, 6, 0.5):
        assert tr.profile.initial_velocity == state.velocity
        speeds = np.concatenate([[state.velocity], tr.speed])
        acc = np.diff(speeds) / tr.dt
        assert np.all(acc >= -5 - 1e-9) and np.all(acc <= 5 + 1e-9)
        if tr.path.kind == CLOTHOID:
            assert 6 <= tr.path.scale_a <= 80
            # curvature at the start matches the SDV
            k0 = np.pi * tr.path.start_arc_offset / tr.path.scale_a**2
            assert (-k0 if tr.path.flipped else k0) == pytest.approx(state.curvature, rel=1e-9)


def test_ids_are_sequential():
    trs = sample_trajectories(_state(), SamplerConfig(n_samples=10), 6, 0.5)
    assert [t.meta["id"] for t in trs] == list(range(10))


def test_negatives_without_violation_keep_velocity():
    state = _state()
    cfg = SamplerConfig(negative_violate_prob=0.0)
    for tr in sample_negatives(state, _demo(state), cfg, 50):
        assert tr.profile.initial_velocity == state.velocity
        assert not tr.meta["violates_initial"]


def test_negatives_need_positive_count():
    state = _state()
    with pytest.raises(ValueError):
        sample_negatives(state, _demo(state), SamplerConfig(), 0)


def test_negatives_reproducible():
    state = _state()
    cfg = SamplerConfig(seed=3)
    a = stack_xy(sample_negatives(state, _demo(state), cfg, 30))
    b = stack_xy(sample_negatives(state, _demo(state), cfg, 30))
    assert a.tobytes() == b.tobytes()


def test_negative_curvature_resampling_flag():
    state = _state(steering=0.0)
    cfg = SamplerConfig(negative_violate_prob=1.0, negative_resample_curvature=True, seed=4)
    negs = sample_negatives(state, _demo(state), cfg, 40)
    offsets = [t.path.start_arc_offset for t in negs if t.path.kind == CLOTHOID]
    assert offsets and max(offsets) > 0
