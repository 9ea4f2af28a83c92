import json

import pytest

from nmp.config import RunConfig


def test_defaults_describe_desk_run():
    cfg = RunConfig()
    assert (cfg.roi.H, cfg.roi.W) == (144, 80)
    assert cfg.model_config().in_channels == 34
    assert (cfg.loss.alpha, cfg.loss.beta, cfg.loss.gamma) == (1.0, 0.1, 10.0)


def test_save_load_roundtrip(tmp_path):
    cfg = RunConfig().with_overrides(["train.steps=7", "model.cost_filters=[8, 8, 4]"])
    cfg.save(tmp_path / "c.json")
    back = RunConfig.load(tmp_path / "c.json")
    assert back == cfg and back.digest() == cfg.digest()
    assert back.model.cost_filters == (8, 8, 4)


def test_overrides_parse_json_values():
    cfg = RunConfig().with_overrides(["train.penalty=false", "eval.manual_source=ground_truth", "loss.beta=0.5"])
    assert cfg.train.penalty is False
    assert cfg.eval.manual_source == "ground_truth"
    assert cfg.loss.beta == 0.5
    assert cfg.digest() != RunConfig().digest()


@pytest.mark.parametrize("bad", ["train.nope=1", "nosection.x=1", "steps=3", "train.optimizer=rmsprop"])
def test_bad_overrides_raise(bad):
    with pytest.raises(ValueError):
        RunConfig().with_overrides([bad])


def test_unknown_section_rejected():
    with pytest.raises(ValueError):
        RunConfig.from_dict({"extra": {}})


def test_dump_is_sorted_json():
    d = json.loads(RunConfig().dumps())
    assert list(d) == sorted(d)
