import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hrtr.errors import ConfigError
from hrtr.windowing import (SmoothSpec, WindowSpec, extract_window, make_inference_windows,
                            make_training_windows, reassemble, smooth)


@pytest.mark.parametrize("T,w,s,expected", [
    (1000, 200, 10, list(range(0, 801, 10))),
    (200, 200, 10, [0]),
    (205, 200, 10, [0, 5]),
    (50, 200, 10, [0]),
])
def test_training_windows(T, w, s, expected):
    assert make_training_windows(T, WindowSpec(w, s)) == expected


def test_training_window_count_formula():
    assert len(make_training_windows(1000, WindowSpec(200, 10))) == (1000 - 200) // 10 + 1 == 81


def test_tail_can_be_disabled():
    assert make_training_windows(205, WindowSpec(200, 10, tail=False)) == [0]


@pytest.mark.parametrize("size,stride", [(0, 1), (10, 0), (10, 11)])
def test_window_spec_invariants(size, stride):
    with pytest.raises(ConfigError):
        WindowSpec(size, stride)


@pytest.mark.parametrize("T,w,expected", [
    (450, 200, [(0, 200), (200, 200), (400, 50)]),
    (200, 200, [(0, 200)]),
    (1, 200, [(0, 1)]),
])
def test_inference_windows(T, w, expected):
    assert make_inference_windows(T, w) == expected


def test_short_trial_is_zero_padded():
    x = np.ones((1, 3))
    win, valid = extract_window(x, 0, 200)
    assert valid == 1 and win.shape == (200, 3)
    assert not win[1:].any()


@settings(max_examples=60, deadline=None)
@given(T=st.integers(1, 400), w=st.integers(1, 120), s_frac=st.floats(0.01, 1.0))
def test_coverage(T, w, s_frac):
    s = max(1, int(w * s_frac))
    covered = np.zeros(T, dtype=int)
    for start in make_training_windows(T, WindowSpec(w, s)):
        covered[start:start + w] += 1
    assert (covered >= 1).all()
    covered[:] = 0
    for start, valid in make_inference_windows(T, w):
        covered[start:start + valid] += 1
    assert (covered == 1).all()


def test_reassemble_simple():
    a = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(reassemble([(0, 3, a)], 3), a)
    out = reassemble([(0, 2, a[:2]), (2, 1, np.vstack([a[2:], np.full((1, 2), 99.0)]))], 3)
    np.testing.assert_array_equal(out, a)


def test_reassemble_round_trip(rng):
    x = rng.standard_normal((1000, 4))
    for w in (1, 7, 128, 999, 1000, 1500):
        parts = [(s, v, extract_window(x, s, w)[0]) for s, v in make_inference_windows(1000, w)]
        rng.shuffle(parts)
        np.testing.assert_array_equal(reassemble(parts, 1000), x)


@pytest.mark.parametrize("layout", [[(0, 2), (3, 1)], [(0, 2), (1, 2)], [(0, 2)]])
def test_reassemble_tiling_error(layout):
    parts = [(s, v, np.zeros((v, 1))) for s, v in layout]
    with pytest.raises(ValueError, match="window tiling error"):
        reassemble(parts, 4)


def test_smooth_identity(rng):
    p = rng.dirichlet(np.ones(4), size=30)
    np.testing.assert_array_equal(smooth(p, SmoothSpec(1)), p)
    np.testing.assert_array_equal(smooth(p, 0), p)


def test_smooth_impulse():
    out = smooth(np.array([[0.0], [0.0], [1.0], [0.0], [0.0]]), 3)
    np.testing.assert_allclose(out[:, 0], [0, 1 / 3, 1 / 3, 1 / 3, 0], atol=1e-15)


def test_smooth_truncates_at_edges():
    x = np.array([[3.0], [0.0], [0.0], [0.0]])
    # frame 0 sees frames 0..1, frame 1 sees 0..2
    np.testing.assert_allclose(smooth(x, 3)[:, 0], [1.5, 1.0, 0.0, 0.0])


def test_smooth_even_kernel_is_left_heavy():
    x = np.zeros((6, 1))
    x[2] = 4.0
    # k=4 at frame t covers t-2 .. t+1
    np.testing.assert_allclose(smooth(x, 4)[:, 0], [0, 4 / 3, 1, 1, 1, 0])


def brute_smooth(p, k):
    T = len(p)
    out = np.empty_like(p)
    for t in range(T):
        lo, hi = max(0, t - k // 2), min(T, t - k // 2 + k)
        out[t] = p[lo:hi].mean(axis=0)
    return out


@settings(max_examples=50, deadline=None)
@given(T=st.integers(1, 80), C=st.integers(1, 5), k=st.integers(1, 60), seed=st.integers(0, 2**16))
def test_smooth_matches_brute_force_and_preserves_rows(T, C, k, seed):
    p = np.random.default_rng(seed).dirichlet(np.ones(C), size=T)
    out = smooth(p, k)
    np.testing.assert_allclose(out, brute_smooth(p, k), atol=1e-12)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)
    assert (out >= 0).all()


@pytest.mark.parametrize("k", [1, 2, 3, 25, 200])
def test_smooth_constant_rows(k):
    p = np.tile([0.2, 0.3, 0.5], (40, 1))
    np.testing.assert_allclose(smooth(p, k), p, rtol=0, atol=1e-14)
