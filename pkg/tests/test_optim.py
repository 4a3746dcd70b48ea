import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hrtr.errors import ConfigError, DataError
from hrtr.model import ModelConfig
from hrtr.optim import (OptimizerState, TrainConfig, clip_gradients, global_norm, plateau_update,
                        sgd_step, train)
from hrtr.windowing import WindowSpec

NO_WD = TrainConfig(lr=0.1, momentum=0.9, weight_decay=0.0)


def test_clip_below_threshold():
    g = {"a": np.array([3.0, 0.0])}
    out = clip_gradients(g, 5)
    np.testing.assert_array_equal(out["a"], g["a"])


def test_clip_scales():
    out = clip_gradients({"a": np.array([6.0, 8.0])}, 5)
    np.testing.assert_allclose(out["a"], [3.0, 4.0])


def test_clip_zero():
    out = clip_gradients({"a": np.zeros(3), "b": np.zeros((2, 2))}, 5)
    assert not out["a"].any() and not out["b"].any()


@settings(max_examples=50)
@given(st.integers(0, 2**16), st.floats(0.01, 100))
def test_clip_bound_and_idempotent(seed, max_norm):
    r = np.random.default_rng(seed)
    g = {"a": r.normal(0, 10, 5), "b": r.normal(0, 10, (3, 2))}
    once = clip_gradients(g, max_norm)
    assert global_norm(once) <= max_norm + 1e-9
    twice = clip_gradients(once, max_norm)
    for k in g:
        np.testing.assert_allclose(twice[k], once[k], rtol=1e-12)


def test_sgd_two_steps():
    params = {"w": np.array([1.0])}
    grads = {"w": np.array([0.5])}
    state = OptimizerState(lr=0.1)
    params, state = sgd_step(params, grads, state, NO_WD)
    assert state.velocity["w"][0] == pytest.approx(0.5)
    assert params["w"][0] == pytest.approx(0.95)
    params, state = sgd_step(params, grads, state, NO_WD)
    assert state.velocity["w"][0] == pytest.approx(0.95)
    assert params["w"][0] == pytest.approx(0.855)


def test_sgd_weight_decay():
    cfg = TrainConfig(lr=0.1, momentum=0.9, weight_decay=0.01)
    params, state = sgd_step({"w": np.array([2.0])}, {"w": np.array([0.0])}, OptimizerState(0.1), cfg)
    assert state.velocity["w"][0] == pytest.approx(0.02)
    assert params["w"][0] == pytest.approx(2.0 - 0.002)


def test_sgd_fixed_points(rng):
    p = {"w": rng.normal(size=(3, 2))}
    out, _ = sgd_step(p, {"w": np.zeros((3, 2))}, OptimizerState(0.1), NO_WD)
    np.testing.assert_array_equal(out["w"], p["w"])
    cfg = TrainConfig(lr=1.0)
    out, _ = sgd_step(p, {"w": rng.normal(size=(3, 2))}, OptimizerState(lr=0.0), cfg)
    np.testing.assert_array_equal(out["w"], p["w"])


def test_sgd_shape_mismatch():
    with pytest.raises(ConfigError):
        sgd_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, OptimizerState(0.1), NO_WD)


def test_plateau_trace():
    cfg = TrainConfig(lr=1e-3, plateau_factor=0.01, plateau_patience=5)
    state = OptimizerState(lr=1e-3)
    lrs = []
    for loss in [1.0] * 6:
        state = plateau_update(state, loss, cfg)
        lrs.append(state.lr)
    assert lrs[:5] == [1e-3] * 5
    assert lrs[5] == pytest.approx(1e-5)


def test_plateau_decreasing_never_cuts():
    cfg = TrainConfig()
    state = OptimizerState(lr=1e-3)
    for loss in np.linspace(5, 1, 30):
        state = plateau_update(state, float(loss), cfg)
    assert state.lr == 1e-3


def test_plateau_floor():
    cfg = TrainConfig(min_lr=1e-6, plateau_patience=1)
    state = OptimizerState(lr=1e-6)
    for _ in range(5):
        state = plateau_update(state, 1.0, cfg)
        assert state.lr == 1e-6


@settings(max_examples=50)
@given(st.lists(st.floats(0, 10), min_size=1, max_size=40))
def test_plateau_monotone(losses):
    cfg = TrainConfig(plateau_patience=2, min_lr=1e-6)
    state = OptimizerState(lr=1e-3)
    for loss in losses:
        new = plateau_update(state, loss, cfg)
        assert cfg.min_lr <= new.lr <= state.lr
        state = new


TINY = dict(embed_dim=8, num_layers=1, num_heads=2, ffn_hidden=4)


def _model(ds):
    return ModelConfig(input_dim=ds.feature_dim, num_classes=ds.num_classes, **TINY)


def test_train_smoke(small_dataset):
    from hrtr.model import init_params

    mc = _model(small_dataset)
    init = init_params(mc, np.random.default_rng([0, 0]))
    params, log = train(small_dataset, mc, TrainConfig(epochs=1, batch_size=64), WindowSpec(30, 10))
    assert len(log) == 1
    assert set(log[0]) >= {"epoch", "train_loss", "lr", "val_frame_acc", "val_es"}
    assert any(not np.array_equal(params[k], init[k]) for k in params)


def test_train_deterministic(small_dataset):
    mc = _model(small_dataset)
    cfg = TrainConfig(epochs=2, batch_size=4, seed=5)
    a, la = train(small_dataset, mc, cfg, WindowSpec(30, 10))
    b, lb = train(small_dataset, mc, cfg, WindowSpec(30, 10))
    assert la == lb
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    c, _ = train(small_dataset, mc, TrainConfig(epochs=2, batch_size=4, seed=6), WindowSpec(30, 10))
    assert any(a[k].tobytes() != c[k].tobytes() for k in a)


def test_train_best_val_selection(small_dataset):
    mc = _model(small_dataset)
    cfg = TrainConfig(epochs=3, batch_size=8, model_selection="best_val_frame_acc",
                      plateau_monitor="val_loss")
    _, log = train(small_dataset, mc, cfg, WindowSpec(30, 10))
    assert all("val_loss" in r for r in log)


def test_train_errors(small_dataset):
    from hrtr.data import Dataset, DatasetSplit

    empty = Dataset(small_dataset.vocab, small_dataset.trials, DatasetSplit(test=["trial_000"]))
    with pytest.raises(DataError, match="empty train split"):
        train(empty, _model(small_dataset), TrainConfig(epochs=1), WindowSpec(30, 10))
    wrong = ModelConfig(input_dim=99, num_classes=small_dataset.num_classes, **TINY)
    with pytest.raises(ConfigError):
        train(small_dataset, wrong, TrainConfig(epochs=1), WindowSpec(30, 10))


@pytest.mark.parametrize("kwargs", [dict(plateau_factor=1.0), dict(plateau_patience=0),
                                    dict(epochs=0), dict(model_selection="x"), dict(lr=0)])
def test_train_config_invariants(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)
