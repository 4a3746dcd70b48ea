# %% [markdown]
# # Checking the hand-written backward pass
#
# Compare analytic gradients against central differences in float64.

# %%
import numpy as np

from hrtr.loss import FocalSpec, focal_loss, focal_loss_grad
from hrtr.model import ModelConfig, backward, forward, init_params

cfg = ModelConfig(input_dim=3, num_classes=2, embed_dim=8, num_layers=1, num_heads=2, ffn_hidden=4)
params = {k: v.astype(np.float64) for k, v in init_params(cfg, 0).items()}
rng = np.random.default_rng(0)
x = rng.standard_normal((2, 6, 3))
y = rng.integers(0, 2, (2, 6))
mask = np.ones((2, 6), bool)
spec = FocalSpec(25.0, 2.0)


def loss():
    return focal_loss(forward(params, cfg, x)[0], y, mask, spec)


logits, cache = forward(params, cfg, x)
grads = backward(params, cfg, cache, focal_loss_grad(logits, y, mask, spec))

h = 1e-4
for name, p in params.items():
    num = np.zeros_like(p)
    for idx in np.ndindex(p.shape):
        old = p[idx]
        p[idx] = old + h
        fp = loss()
        p[idx] = old - h
        fm = loss()
        p[idx] = old
        num[idx] = (fp - fm) / (2 * h)
    err = np.abs(grads[name] - num).max() / max(np.abs(num).max(), 1e-6)
    print(f"{name:28s} {err:.2e}")
