import numpy as np
import pytest

from nmp.config import RunConfig
from nmp.network import NMPModel
from nmp.pipeline import prepare_examples
from nmp.scenario.generate import generate
from nmp.train import NumericalError, fixed_negatives, log_columns, mean_planning_loss, train


def _cfg(*extra):
    return RunConfig().with_overrides(["train.eval_every=1000", *extra])


@pytest.fixture(scope="module")
def examples():
    cfg = _cfg()
    return prepare_examples([generate(cfg.scenario, s) for s in (101, 102)], cfg)


def _model(cfg):
    return NMPModel(cfg.model_config(), seed=cfg.model.init_seed)


def test_planning_loss_decreases_when_overfitting_one_scenario(examples):
    cfg = _cfg("train.steps=15", "train.perception_loss=false")
    ex = examples[:1]
    negs = fixed_negatives(ex, cfg)
    model = _model(cfg)
    before = mean_planning_loss(model, ex, cfg, negs)
    train(model, ex, cfg)
    after = mean_planning_loss(model, ex, cfg, negs)
    assert after < before


def test_training_is_deterministic(examples):
    cfg = _cfg("train.steps=3")
    a, b = _model(cfg), _model(cfg)
    ra, rb = train(a, examples, cfg), train(b, examples, cfg)
    assert [r["total"] for r in ra.rows] == [r["total"] for r in rb.rows]
    for name, p in a.params.items():
        assert p.data.tobytes() == b.params[name].data.tobytes()


def test_best_snapshot_is_epoch_minimum(examples):
    cfg = _cfg("train.steps=6")
    res = train(_model(cfg), examples, cfg)
    epochs = [np.mean([res.rows[i]["total"] for i in (s - 1, s)]) for s in (1, 3, 5)]
    assert res.best_loss == pytest.approx(min(epochs))
    assert res.best_step == (1, 3, 5)[int(np.argmin(epochs))]


def test_run_shorter_than_an_epoch_keeps_final_params(examples):
    cfg = _cfg("train.steps=1")
    model = _model(cfg)
    res = train(model, examples, cfg)
    assert res.best_step == 0
    for name, p in model.params.items():
        assert np.array_equal(res.best_params[name], p.data)


def test_non_finite_loss_raises(examples):
    cfg = _cfg("train.steps=1")
    model = _model(cfg)
    model.params["cost.out.b"].data[:] = np.nan
    with pytest.raises(NumericalError):
        train(model, examples, cfg)


def test_scenarios_with_demo_outside_region_are_excluded(examples):
    cfg = _cfg("train.steps=1", "train.max_skipped_steps=-1")
    with pytest.raises(ValueError):
        train(_model(cfg), examples, cfg)


def test_log_columns_follow_flags():
    assert "planning" not in log_columns(_cfg("train.plan_loss=false"))
    assert "cls" not in log_columns(_cfg("train.perception_loss=false"))


def test_sgd_optimizer_runs(examples):
    cfg = _cfg("train.steps=2", "train.optimizer=sgd", "train.lr=0.0001")
    res = train(_model(cfg), examples, cfg)
    assert all(np.isfinite(r["total"]) for r in res.rows)
