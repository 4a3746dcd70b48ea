# %% [markdown]
# # Training a tiny transformer on synthetic data
#
# Runs in well under a minute on a laptop CPU.

# %%
import numpy as np

from hrtr import ModelConfig, SynthSpec, TrainConfig, WindowSpec, generate, train
from hrtr.metrics import evaluate

ds = generate(SynthSpec(num_trials=12, num_classes=5, feature_dim=8, val_trials=2, seed=0))
mc = ModelConfig(input_dim=8, num_classes=5, embed_dim=32, num_layers=1, num_heads=2, ffn_hidden=16)
tc = TrainConfig(epochs=8, batch_size=8, seed=0)

params, log = train(ds, mc, tc, WindowSpec(100, 10),
                    log_fn=lambda r: print(f"epoch {r['epoch']:2d}  loss {r['train_loss']:.4f}  "
                                           f"val acc {r['val_frame_acc']:.3f}"))

# %%
# Evaluate on val with and without smoothing.
for k in (0, 25):
    rep = evaluate(ds.subset("val"), params, mc, 100, smooth_window=k, num_classes=5)
    print(f"k={k:2d}  acc {rep.frame_accuracy:.3f}  ES {rep.edit_score:.1f}")
