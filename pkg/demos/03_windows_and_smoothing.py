# %% [markdown]
# # Windows, reassembly and smoothing
#
# Training sees overlapping windows. Inference tiles the stream with
# non-overlapping windows and stitches the outputs back together.

# %%
import numpy as np

from hrtr.metrics import evaluate_probabilities
from hrtr.windowing import (WindowSpec, extract_window, make_inference_windows,
                            make_training_windows, reassemble, smooth)

print(len(make_training_windows(1000, WindowSpec(200, 10))), "training windows for T=1000")
print(make_inference_windows(450, 200))

x = np.arange(450, dtype=float)[:, None]
tiles = [(s, v, extract_window(x, s, 200)[0]) for s, v in make_inference_windows(450, 200)]
assert np.array_equal(reassemble(tiles, 450), x)

# %%
# Moving-average smoothing removes isolated flips in a prediction stream.
y = np.repeat([0, 1, 2, 0], 60)
probs = np.eye(3)[y] * 0.9 + 0.1 / 3
rng = np.random.default_rng(0)
for t in rng.choice(np.arange(5, 235), 12, replace=False):
    probs[t] = probs[t][[1, 2, 0]]

for k in (0, 5, 25):
    rep = evaluate_probabilities([y], [probs], 3, smooth_window=k)
    print(f"k={k:2d}  ES {rep.edit_score:6.1f}  acc {rep.frame_accuracy:.3f}")

print(smooth(np.array([[0.0], [0.0], [1.0], [0.0], [0.0]]), 3).ravel())
