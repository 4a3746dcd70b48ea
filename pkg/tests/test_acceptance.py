"""Exit criteria. Each test records one PASS/FAIL line shown in the pytest summary."""
import math
import time

import numpy as np
import pytest
import yaml

from hrtr.cli import main
from hrtr.loss import FocalSpec, focal_loss, focal_loss_grad, log_softmax
from hrtr.metrics import aer, edit_score, evaluate, evaluate_probabilities, levenshtein
from hrtr.model import ModelConfig, backward, forward, init_params
from hrtr.optim import OptimizerState, TrainConfig, clip_gradients, plateau_update, sgd_step, train
from hrtr.synthgen import SynthSpec, generate
from hrtr.windowing import (WindowSpec, extract_window, make_inference_windows,
                            make_training_windows, reassemble, smooth)


def recursive_levenshtein(g, p):
    if not g:
        return len(p)
    if not p:
        return len(g)
    if g[0] == p[0]:
        return recursive_levenshtein(g[1:], p[1:])
    return 1 + min(recursive_levenshtein(g[1:], p),
                   recursive_levenshtein(g, p[1:]),
                   recursive_levenshtein(g[1:], p[1:]))


def fd_grad(f, arrays, h):
    out = {}
    for name, v in arrays.items():
        g = np.zeros_like(v)
        for idx in np.ndindex(v.shape):
            old = v[idx]
            v[idx] = old + h
            fp = f()
            v[idx] = old - h
            fm = f()
            v[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        out[name] = g
    return out


def rel_err(a, n, floor=1e-6):
    return float((np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)).max())


def test_metric_oracle(criterion):
    with criterion("metric oracle: DP == recursive on 1000 pairs, < 5 s"):
        r = np.random.default_rng(2024)
        pairs = [(tuple(r.integers(0, 5, r.integers(0, 9))), tuple(r.integers(0, 5, r.integers(0, 9))))
                 for _ in range(1000)]
        t0 = time.perf_counter()
        dp = [levenshtein(g, p) for g, p in pairs]
        elapsed = time.perf_counter() - t0
        assert dp == [recursive_levenshtein(g, p) for g, p in pairs]
        assert elapsed < 5.0


def test_worked_example(criterion):
    with criterion("worked example: L=2, ES=33.33, AER=0.6667"):
        g, p = ["reach", "idle", "retract"], ["reach", "stabilize"]
        assert levenshtein(g, p) == 2
        assert abs(edit_score(g, p) - 33.33) <= 0.01
        assert abs(aer(g, p) - 0.6667) <= 0.0001


def test_focal_reduction(criterion):
    with criterion("focal loss: gamma=0,alpha=1 == CE (1e-9); 25*0.25*ln2 (1e-5)"):
        r = np.random.default_rng(7)
        for _ in range(100):
            B, W, C = r.integers(1, 4), r.integers(1, 20), r.integers(2, 8)
            z = r.normal(0, 4, (B, W, C))
            y = r.integers(0, C, (B, W))
            m = r.random((B, W)) < 0.8
            m.flat[0] = True
            ce = -np.take_along_axis(log_softmax(z), y[..., None], -1)[..., 0][m].mean()
            assert abs(focal_loss(z, y, m, FocalSpec(1.0, 0.0)) - ce) <= 1e-9
        closed = focal_loss(np.zeros((1, 1, 2)), np.zeros((1, 1), int), None, FocalSpec(25.0, 2.0))
        assert abs(closed - 4.33217) <= 1e-5


def test_gradient_checks(criterion):
    with criterion("gradient checks: focal < 1e-6, tiny model < 1e-3 at h=1e-4, < 60 s"):
        t0 = time.perf_counter()
        r = np.random.default_rng(11)
        spec = FocalSpec(25.0, 2.0)
        z = r.normal(0, 1.5, (1, 4, 3))
        y = r.integers(0, 3, (1, 4))
        m = np.ones((1, 4), bool)
        analytic = focal_loss_grad(z, y, m, spec)
        numeric = fd_grad(lambda: focal_loss(z, y, m, spec), {"z": z}, 1e-6)["z"]
        assert rel_err(analytic, numeric) < 1e-6

        cfg = ModelConfig(input_dim=3, num_classes=2, embed_dim=8, num_layers=1, num_heads=2,
                          ffn_hidden=4)
        params = {k: v.astype(np.float64) for k, v in init_params(cfg, 0).items()}
        x = r.standard_normal((2, 6, 3))
        logits, cache = forward(params, cfg, x)
        grads = backward(params, cfg, cache, np.full_like(logits, 1.0 / logits.size))
        numeric = fd_grad(lambda: forward(params, cfg, x)[0].mean(), params, 1e-4)
        assert max(rel_err(grads[k], numeric[k]) for k in params) < 1e-3

        labels = r.integers(0, 2, (2, 6))
        mask = np.ones((2, 6), bool)
        logits, cache = forward(params, cfg, x)
        grads = backward(params, cfg, cache, focal_loss_grad(logits, labels, mask, spec))
        numeric = fd_grad(lambda: focal_loss(forward(params, cfg, x)[0], labels, mask, spec), params, 1e-4)
        assert max(rel_err(grads[k], numeric[k]) for k in params) < 1e-3
        assert time.perf_counter() - t0 < 60


def test_windowing_arithmetic(criterion):
    with criterion("windowing: 81 training windows; [(0,200),(200,200),(400,50)]; round trip"):
        assert len(make_training_windows(1000, WindowSpec(200, 10))) == 81
        assert make_inference_windows(450, 200) == [(0, 200), (200, 200), (400, 50)]
        x = np.random.default_rng(0).standard_normal((1000, 6))
        for w in (37, 200, 1000):
            parts = [(s, v, extract_window(x, s, w)[0]) for s, v in make_inference_windows(1000, w)]
            assert np.array_equal(reassemble(parts, 1000), x)


def test_smoothing(criterion):
    with criterion("smoothing: k=1 identity, impulse -> thirds, row sums 1e-9"):
        p = np.random.default_rng(1).dirichlet(np.ones(5), size=500)
        assert np.array_equal(smooth(p, 1), p)
        out = smooth(np.array([[0.0], [0.0], [1.0], [0.0], [0.0]]), 3)[:, 0]
        assert np.allclose(out, [0, 1 / 3, 1 / 3, 1 / 3, 0], rtol=0, atol=1e-9)
        for k in (2, 3, 25, 200):
            assert np.abs(smooth(p, k).sum(1) - 1).max() <= 1e-9


def test_optimizer_trace(criterion):
    with criterion("optimizer: SGD 0.95 -> 0.855; clip (6,8)->(3,4); plateau 1e-3 -> 1e-5"):
        cfg = TrainConfig(lr=0.1, momentum=0.9, weight_decay=0.0)
        params, state = {"w": np.array([1.0])}, OptimizerState(lr=0.1)
        params, state = sgd_step(params, {"w": np.array([0.5])}, state, cfg)
        assert params["w"][0] == pytest.approx(0.95, abs=1e-15)
        params, state = sgd_step(params, {"w": np.array([0.5])}, state, cfg)
        assert params["w"][0] == pytest.approx(0.855, abs=1e-15)
        assert np.allclose(clip_gradients({"g": np.array([6.0, 8.0])}, 5)["g"], [3.0, 4.0],
                           rtol=0, atol=1e-15)
        pcfg = TrainConfig(lr=1e-3, plateau_factor=0.01, plateau_patience=5)
        st = OptimizerState(lr=1e-3)
        history = []
        for loss in [1.0] * 6:
            st = plateau_update(st, loss, pcfg)
            history.append(st.lr)
        assert history[:5] == [1e-3] * 5 and history[5] == pytest.approx(1e-5, rel=1e-12)


@pytest.mark.slow
def test_overfit_oracle(criterion):
    with criterion("overfit oracle: 200 epochs -> train frame acc >= 0.95, ES >= 90, < 10 min"):
        t0 = time.perf_counter()
        ds = generate(SynthSpec(num_trials=20, num_classes=5, feature_dim=8, noise_std=0.1,
                                duration_range=(20, 150), seed=0))
        mc = ModelConfig(input_dim=8, num_classes=5, embed_dim=64, num_layers=1, num_heads=2,
                         ffn_hidden=32)
        params, log = train(ds, mc, TrainConfig(epochs=200, batch_size=8, seed=0), WindowSpec(100, 10))
        report = evaluate(ds.subset("train"), params, mc, 100)
        elapsed = time.perf_counter() - t0
        print(f"overfit: acc={report.frame_accuracy:.4f} ES={report.edit_score:.2f} "
              f"final loss={log[-1]['train_loss']:.3g} time={elapsed:.0f}s")
        assert len(log) == 200
        assert report.frame_accuracy >= 0.95
        assert report.edit_score >= 90
        assert elapsed < 600


def test_smoothing_efficacy(criterion):
    with criterion("smoothing efficacy: ES(k=25) > ES(k=0) on flipped-frame fixture"):
        ds = generate(SynthSpec(num_trials=10, num_classes=5, duration_range=(20, 150), seed=5))
        r = np.random.default_rng(0)
        gts, probs = [], []
        for trial in ds.trials.values():
            y = trial.labels.labels
            p = np.eye(5)[y] * 0.9 + 0.02
            # isolated flips: every ~30 frames, never adjacent to each other
            for t in range(5, len(y) - 5, 30):
                t += int(r.integers(0, 10))
                p[t] = np.roll(p[t], int(r.integers(1, 5)))
            gts.append(y)
            probs.append(p)
        raw = evaluate_probabilities(gts, probs, 5, smooth_window=0)
        smoothed = evaluate_probabilities(gts, probs, 5, smooth_window=25)
        print(f"smoothing efficacy: ES k=0 {raw.edit_score:.2f}, k=25 {smoothed.edit_score:.2f}")
        assert smoothed.edit_score > raw.edit_score


def test_end_to_end_determinism(criterion, tmp_path):
    with criterion("determinism: two cmd_train runs, same seed -> identical checkpoint + log"):
        assert main(["gen", str(tmp_path / "data"), "--set", "num_trials=5", "--set", "val_trials=1",
                     "--set", "seed=2"]) == 0
        cfg = {"preset": "strokerehab-imu", "seed": 13, "data": {"root": "data"},
               "model": {"embed_dim": 16, "num_layers": 2, "num_heads": 2, "ffn_hidden": 8},
               "train": {"epochs": 3}, "window": {"size": 60, "stride": 10}}
        path = tmp_path / "cfg.yaml"
        path.write_text(yaml.safe_dump(cfg))
        for run in ("a", "b"):
            assert main(["train", str(path), "--out-dir", str(tmp_path / run)]) == 0
        for name in ("checkpoint.hrtr", "train_log.jsonl"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
