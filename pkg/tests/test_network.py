import numpy as np
import pytest

from nmp.autodiff import CheckpointError, ParamStore
from nmp.network import BackboneConfig, ModelConfig, NMPModel


def _desk(perception=True, seed=0):
    return NMPModel(ModelConfig(in_channels=34, T=6, perception=perception), seed=seed)


@pytest.fixture(scope="module")
def desk_out():
    x = np.random.default_rng(0).random((1, 34, 144, 80)).astype(np.float32)
    return x, _desk().forward(x)


def test_desk_shapes(desk_out):
    _, out = desk_out
    assert out.features.shape == (1, 64, 36, 20)
    assert out.cls_logits.shape == (1, 12, 36, 20)
    assert out.regression.shape == (1, 12 * 6 * 7, 36, 20)
    assert out.cost.shape == (1, 6, 144, 80)
    assert out.scores().shape == (36, 20, 12)
    assert out.regression_grid(12).shape == (36, 20, 12, 7, 6)


def test_forward_is_deterministic(desk_out):
    x, out = desk_out
    again = _desk().forward(x)
    assert again.cost.data.tobytes() == out.cost.data.tobytes()
    assert again.regression.data.tobytes() == out.regression.data.tobytes()


def test_perception_can_be_skipped():
    out = _desk(perception=False).forward(np.zeros((1, 34, 32, 32), np.float32))
    assert out.cls_logits is None and out.regression is None
    assert out.cost.shape == (1, 6, 32, 32)


def test_zeroed_heads_give_half_scores_and_zero_offsets():
    m = _desk()
    for name in ("perception.cls", "perception.reg"):
        m.params[f"{name}.w"].data[:] = 0
        m.params[f"{name}.b"].data[:] = 0
    out = m.forward(np.random.default_rng(1).random((1, 34, 32, 32)).astype(np.float32))
    assert np.all(out.scores() == 0.5)
    assert not out.regression.data.any()


def test_cost_is_clipped():
    m = _desk(perception=False)
    m.params["cost.out.w"].data[:] = 0
    m.params["cost.out.b"].data[:] = [2000, -2000, 5, 0, 0, 0]
    cost = m.forward(np.zeros((1, 34, 16, 16), np.float32)).cost.data
    assert np.all(cost[0, 0] == 1000) and np.all(cost[0, 1] == -1000) and np.all(cost[0, 2] == 5)


def test_bad_input_shapes():
    m = _desk()
    with pytest.raises(ValueError):
        m.forward(np.zeros((1, 33, 16, 16), np.float32))
    with pytest.raises(ValueError):
        m.forward(np.zeros((1, 34, 18, 16), np.float32))


def test_backbone_config_validation():
    with pytest.raises(ValueError):
        BackboneConfig(block_layer_counts=(1, 1, 1, 1))
    with pytest.raises(ValueError):
        BackboneConfig(downsample_rate=3)
    assert BackboneConfig().input_divisor == 8


def test_checkpoint_roundtrip(tmp_path):
    m = _desk(seed=3)
    m.params.save(tmp_path / "m.nmpc")
    other = _desk(seed=4)
    other.load_params(ParamStore.load(tmp_path / "m.nmpc"))
    for name, p in m.params.items():
        assert other.params[name].data.tobytes() == p.data.tobytes()


def test_checkpoint_mismatch_raises(tmp_path):
    _desk().params.save(tmp_path / "m.nmpc")
    tiny = NMPModel(ModelConfig(in_channels=34, backbone=BackboneConfig.tiny()))
    with pytest.raises(CheckpointError):
        tiny.load_params(ParamStore.load(tmp_path / "m.nmpc"))
    wrong_t = NMPModel(ModelConfig(in_channels=34, T=4))
    with pytest.raises(CheckpointError):
        wrong_t.load_params(ParamStore.load(tmp_path / "m.nmpc"))
