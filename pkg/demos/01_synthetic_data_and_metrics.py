# %% [markdown]
# # Synthetic streams and segment metrics
#
# Generate a small synthetic dataset, look at one trial, and score a few
# hand-made predictions with the transcript-level metrics.

# %%
import numpy as np

from hrtr import SynthSpec, generate
from hrtr.metrics import aer, edit_score, levenshtein, report_from_frames, to_transcript
from hrtr.synthgen import class_means, nearest_mean_predict

spec = SynthSpec(num_trials=6, num_classes=4, feature_dim=3, noise_std=0.3, val_trials=1, seed=1)
ds = generate(spec)
trial = ds.trials["trial_000"]
print(trial.features.features.shape, ds.vocab.names)

# %%
# A trial is a run of segments; the transcript drops durations.
y = trial.labels.labels
print("transcript:", to_transcript(y))

# %%
# Transcript metrics on a toy pair.
g, p = ["reach", "idle", "retract"], ["reach", "stabilize"]
print("L =", levenshtein(g, p), "ES =", round(edit_score(g, p), 2), "AER =", round(aer(g, p), 4))

# %%
# Nearest-mean classification is a sanity baseline for the synthetic data.
# Frame accuracy is high, but noisy single-frame flips hurt the edit score.
means = class_means(spec)
gts = [t.labels.labels for t in ds.subset("train")]
preds = [nearest_mean_predict(t.features.features, means) for t in ds.subset("train")]
report = report_from_frames(gts, preds, 4, class_names=ds.vocab.names)
print(f"frame acc {report.frame_accuracy:.3f}  ES {report.edit_score:.1f}  AER {report.aer:.3f}")
