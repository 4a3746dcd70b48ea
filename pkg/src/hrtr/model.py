"""Single-stage transformer encoder for per-frame action labeling.

Pipeline, applied to every window independently::

    linear(D -> E) -> dropout -> GELU -> LayerNorm -> + sinusoidal PE
    -> N x [ MHSA -> dropout -> +res -> LayerNorm
             -> linear(E -> F) -> act -> dropout -> linear(F -> E) -> dropout -> +res -> LayerNorm ]
    -> LayerNorm -> linear(E -> H) -> linear(H -> C)

Parameters live in a plain ``dict[str, ndarray]``; :func:`forward` returns the
logits plus a cache that :func:`backward` consumes to produce gradients for
every parameter. Computation runs in the parameters' dtype, so casting the
dict to float64 gives a double-precision model for gradient checking.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.special import erf

from .errors import ConfigError, NumericFault
from .windowing import extract_window, make_inference_windows, reassemble

LN_EPS = 1e-5
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    num_classes: int
    embed_dim: int = 1024
    num_layers: int = 3
    num_heads: int = 4
    ffn_hidden: int = 512
    head_dim: int | None = None  # width of the penultimate linear layer; None -> embed_dim
    dropout: float = 0.2
    ffn_activation: str = "relu"
    positional_encoding: bool = True

    def __post_init__(self):
        for name in ("input_dim", "embed_dim", "num_layers", "num_heads", "ffn_hidden"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"model.{name} must be positive")
        if self.num_classes < 2:
            raise ConfigError("model.num_classes must be >= 2")
        if self.head_dim is not None and self.head_dim < 1:
            raise ConfigError("model.head_dim must be positive")
        if self.embed_dim % self.num_heads:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.positional_encoding and self.embed_dim % 2:
            raise ConfigError("positional encoding needs an even embed_dim")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.ffn_activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown ffn_activation {self.ffn_activation!r}")

    @property
    def penultimate_dim(self) -> int:
        return self.head_dim or self.embed_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# ------------------------------------------------------------ primitives

def gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x):
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    return cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def relu(x):
    return np.maximum(x, 0)


def relu_grad(x):
    return (x > 0).astype(x.dtype)


_ACTIVATIONS = {"relu": (relu, relu_grad), "gelu": (gelu, gelu_grad)}


def layer_norm(x, gamma, beta):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * rstd
    return xhat * gamma + beta, (xhat, rstd)


def layer_norm_backward(dy, gamma, cache):
    xhat, rstd = cache
    red = tuple(range(dy.ndim - 1))
    dgamma = (dy * xhat).sum(axis=red)
    dbeta = dy.sum(axis=red)
    dxhat = dy * gamma
    dx = rstd * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgamma, dbeta


def _softmax(s):
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


@lru_cache(maxsize=32)
def _pe_cached(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    i2 = np.arange(0, dim, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i2 / dim)
    pe = np.empty((length, dim), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    pe.flags.writeable = False
    return pe


def positional_encoding(length: int, dim: int) -> np.ndarray:
    """Sinusoidal encoding: sin on even columns, cos on odd, positions 0..length-1."""
    if length < 1:
        raise ConfigError("positional encoding length must be >= 1")
    if dim < 2 or dim % 2:
        raise ConfigError(f"positional encoding dim must be even and >= 2, got {dim}")
    return _pe_cached(int(length), int(dim))


# ------------------------------------------------------------ parameters

def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Names and shapes of all learned tensors, in canonical order."""
    D, E, F = config.input_dim, config.embed_dim, config.ffn_hidden
    H, C = config.penultimate_dim, config.num_classes
    shapes = {
        "proj.weight": (D, E),
        "proj.bias": (E,),
        "proj_norm.weight": (E,),
        "proj_norm.bias": (E,),
    }
    for i in range(config.num_layers):
        p = f"layers.{i}."
        shapes.update({
            p + "attn.in_weight": (E, 3 * E),
            p + "attn.in_bias": (3 * E,),
            p + "attn.out_weight": (E, E),
            p + "attn.out_bias": (E,),
            p + "norm1.weight": (E,),
            p + "norm1.bias": (E,),
            p + "ffn.weight1": (E, F),
            p + "ffn.bias1": (F,),
            p + "ffn.weight2": (F, E),
            p + "ffn.bias2": (E,),
            p + "norm2.weight": (E,),
            p + "norm2.bias": (E,),
        })
    shapes.update({
        "final_norm.weight": (E,),
        "final_norm.bias": (E,),
        "fc.weight": (E, H),
        "fc.bias": (H,),
        "head.weight": (H, C),
        "head.bias": (C,),
    })
    return shapes


def param_count(config: ModelConfig) -> int:
    D, E, F = config.input_dim, config.embed_dim, config.ffn_hidden
    H, C = config.penultimate_dim, config.num_classes
    projection = D * E + E + 2 * E
    attention = E * 3 * E + 3 * E + E * E + E
    feed_forward = E * F + F + F * E + E
    norms = 2 * 2 * E
    per_layer = attention + feed_forward + norms
    head = 2 * E + E * H + H + H * C + C
    return projection + config.num_layers * per_layer + head


def init_params(config: ModelConfig, rng, dtype=np.float32) -> dict[str, np.ndarray]:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); LayerNorm scale 1, shift 0."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    params = {}
    for name, shape in param_shapes(config).items():
        if "norm" in name:
            fill = 1.0 if name.endswith("weight") else 0.0
            params[name] = np.full(shape, fill, dtype=dtype)
            continue
        # biases share the bound of their weight matrix
        bound = 1.0 / math.sqrt(_fan_in(name, config))
        params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return params


def _fan_in(name: str, config: ModelConfig) -> int:
    if name.startswith("proj."):
        return config.input_dim
    if "ffn.weight2" in name or "ffn.bias2" in name:
        return config.ffn_hidden
    if name.startswith("head."):
        return config.penultimate_dim
    return config.embed_dim


def check_params(params: dict, config: ModelConfig):
    shapes = param_shapes(config)
    if set(params) != set(shapes):
        missing = sorted(set(shapes) - set(params))
        extra = sorted(set(params) - set(shapes))
        raise ConfigError(f"parameter names do not match config (missing {missing}, extra {extra})")
    for name, shape in shapes.items():
        if params[name].shape != shape:
            raise ConfigError(f"parameter {name} has shape {params[name].shape}, expected {shape}")


# --------------------------------------------------------------- forward

def _dropout(x, rate, rng):
    if rate == 0.0 or rng is None:
        return x, None
    keep = rng.random(x.shape) >= rate
    scale = (keep / (1.0 - rate)).astype(x.dtype)
    return x * scale, scale


def forward(params, config: ModelConfig, x, mode: str = "eval", rng=None):
    """Run the encoder on a ``B x W x D`` batch.

    Returns ``(logits, cache)``; ``logits`` is ``B x W x C``. In ``"train"``
    mode dropout masks are drawn from ``rng`` (a numpy Generator); in
    ``"eval"`` mode dropout is off and the output is deterministic.
    """
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[-1] != config.input_dim:
        raise ConfigError(f"expected input B x W x {config.input_dim}, got {x.shape}")
    dtype = params["proj.weight"].dtype
    x = x.astype(dtype, copy=False)
    if not np.isfinite(x).all():
        raise NumericFault("non-finite input features")

    drop = config.dropout if mode == "train" else 0.0
    if drop and rng is None:
        raise ConfigError("train mode with dropout requires an rng")
    B, W, _ = x.shape
    E, nh = config.embed_dim, config.num_heads
    dk = E // nh
    act, _ = _ACTIVATIONS[config.ffn_activation]
    cache = {"x": x, "layers": [], "drop": drop}

    h0 = x @ params["proj.weight"] + params["proj.bias"]
    h1, cache["proj_drop"] = _dropout(h0, drop, rng)
    cache["h1"] = h1
    h2 = gelu(h1)
    h, cache["proj_norm"] = layer_norm(h2, params["proj_norm.weight"], params["proj_norm.bias"])
    if config.positional_encoding:
        h = h + positional_encoding(W, E).astype(dtype)

    for i in range(config.num_layers):
        p = f"layers.{i}."
        lc = {"in": h}
        qkv = h @ params[p + "attn.in_weight"] + params[p + "attn.in_bias"]
        qkv = qkv.reshape(B, W, 3, nh, dk).transpose(2, 0, 3, 1, 4)  # 3,B,nh,W,dk
        q, k, v = qkv[0], qkv[1], qkv[2]
        scale = 1.0 / math.sqrt(dk)
        attn = _softmax((q @ k.transpose(0, 1, 3, 2)) * scale)
        ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(B, W, E)
        a_out = ctx @ params[p + "attn.out_weight"] + params[p + "attn.out_bias"]
        a_out, lc["attn_drop"] = _dropout(a_out, drop, rng)
        lc.update(q=q, k=k, v=v, attn=attn, ctx=ctx, scale=scale)
        h, lc["norm1"] = layer_norm(h + a_out, params[p + "norm1.weight"], params[p + "norm1.bias"])
        lc["mid"] = h

        f_pre = h @ params[p + "ffn.weight1"] + params[p + "ffn.bias1"]
        f_act, lc["ffn_drop1"] = _dropout(act(f_pre), drop, rng)
        f_out = f_act @ params[p + "ffn.weight2"] + params[p + "ffn.bias2"]
        f_out, lc["ffn_drop2"] = _dropout(f_out, drop, rng)
        lc.update(f_pre=f_pre, f_act=f_act)
        h, lc["norm2"] = layer_norm(h + f_out, params[p + "norm2.weight"], params[p + "norm2.bias"])
        cache["layers"].append(lc)

    hf, cache["final_norm"] = layer_norm(h, params["final_norm.weight"], params["final_norm.bias"])
    cache["hf"] = hf
    penult = hf @ params["fc.weight"] + params["fc.bias"]
    cache["penult"] = penult
    logits = penult @ params["head.weight"] + params["head.bias"]
    if not np.isfinite(logits).all():
        raise NumericFault("non-finite activations in forward pass")
    return logits, cache


def _sum0(a):
    return a.reshape(-1, a.shape[-1]).sum(axis=0)


def _wgrad(inp, dout):
    return inp.reshape(-1, inp.shape[-1]).T @ dout.reshape(-1, dout.shape[-1])


def backward(params, config: ModelConfig, cache, dlogits) -> dict[str, np.ndarray]:
    """Gradients of a scalar objective w.r.t. every parameter, given ``dL/dlogits``."""
    dtype = params["proj.weight"].dtype
    dlogits = np.asarray(dlogits, dtype=dtype)
    grads = {}
    B, W, _ = cache["x"].shape
    E, nh = config.embed_dim, config.num_heads
    dk = E // nh
    _, act_grad = _ACTIVATIONS[config.ffn_activation]

    grads["head.weight"] = _wgrad(cache["penult"], dlogits)
    grads["head.bias"] = _sum0(dlogits)
    dpen = dlogits @ params["head.weight"].T
    grads["fc.weight"] = _wgrad(cache["hf"], dpen)
    grads["fc.bias"] = _sum0(dpen)
    dhf = dpen @ params["fc.weight"].T
    dh, grads["final_norm.weight"], grads["final_norm.bias"] = layer_norm_backward(
        dhf, params["final_norm.weight"], cache["final_norm"]
    )

    for i in reversed(range(config.num_layers)):
        p = f"layers.{i}."
        lc = cache["layers"][i]
        # second sublayer
        dsum, grads[p + "norm2.weight"], grads[p + "norm2.bias"] = layer_norm_backward(
            dh, params[p + "norm2.weight"], lc["norm2"]
        )
        df_out = dsum if lc["ffn_drop2"] is None else dsum * lc["ffn_drop2"]
        grads[p + "ffn.weight2"] = _wgrad(lc["f_act"], df_out)
        grads[p + "ffn.bias2"] = _sum0(df_out)
        df_act = df_out @ params[p + "ffn.weight2"].T
        if lc["ffn_drop1"] is not None:
            df_act = df_act * lc["ffn_drop1"]
        df_pre = df_act * act_grad(lc["f_pre"])
        grads[p + "ffn.weight1"] = _wgrad(lc["mid"], df_pre)
        grads[p + "ffn.bias1"] = _sum0(df_pre)
        dmid = dsum + df_pre @ params[p + "ffn.weight1"].T

        # first sublayer
        dsum, grads[p + "norm1.weight"], grads[p + "norm1.bias"] = layer_norm_backward(
            dmid, params[p + "norm1.weight"], lc["norm1"]
        )
        da_out = dsum if lc["attn_drop"] is None else dsum * lc["attn_drop"]
        grads[p + "attn.out_weight"] = _wgrad(lc["ctx"], da_out)
        grads[p + "attn.out_bias"] = _sum0(da_out)
        dctx = (da_out @ params[p + "attn.out_weight"].T).reshape(B, W, nh, dk).transpose(0, 2, 1, 3)
        attn, q, k, v, scale = lc["attn"], lc["q"], lc["k"], lc["v"], lc["scale"]
        dattn = dctx @ v.transpose(0, 1, 3, 2)
        dv = attn.transpose(0, 1, 3, 2) @ dctx
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True)) * scale
        dq = dscores @ k
        dk_ = dscores.transpose(0, 1, 3, 2) @ q
        dqkv = np.stack([dq, dk_, dv]).transpose(1, 3, 0, 2, 4).reshape(B, W, 3 * E)
        grads[p + "attn.in_weight"] = _wgrad(lc["in"], dqkv)
        grads[p + "attn.in_bias"] = _sum0(dqkv)
        dh = dsum + dqkv @ params[p + "attn.in_weight"].T

    # positional encoding is additive and constant: gradient passes straight through
    dh2, grads["proj_norm.weight"], grads["proj_norm.bias"] = layer_norm_backward(
        dh, params["proj_norm.weight"], cache["proj_norm"]
    )
    dh1 = dh2 * gelu_grad(cache["h1"])
    if cache["proj_drop"] is not None:
        dh1 = dh1 * cache["proj_drop"]
    grads["proj.weight"] = _wgrad(cache["x"], dh1)
    grads["proj.bias"] = _sum0(dh1)
    return {name: grads[name].astype(dtype, copy=False) for name in params}


# ------------------------------------------------------------- inference

def predict_proba(params, config: ModelConfig, features, window_size: int, batch_size: int = 16):
    """Per-frame class probabilities for one sequence via non-overlapping windows.

    The final window is zero-padded; its padded rows are discarded.
    """
    features = np.asarray(features)
    T = features.shape[0]
    tiles = make_inference_windows(T, window_size)
    out = []
    for b0 in range(0, len(tiles), batch_size):
        chunk = tiles[b0:b0 + batch_size]
        xb = np.stack([extract_window(features, start, window_size)[0] for start, _ in chunk])
        logits, _ = forward(params, config, xb, mode="eval")
        z = logits.astype(np.float64)
        z -= z.max(axis=-1, keepdims=True)
        probs = np.exp(z)
        probs /= probs.sum(axis=-1, keepdims=True)
        out.extend((start, valid, probs[j]) for j, (start, valid) in enumerate(chunk))
    return reassemble(out, T)


# ------------------------------------------------------------ checkpoint

CHECKPOINT_MAGIC = b"HRTRCKPT 1\n"


def save_checkpoint(path, params, config: ModelConfig, extra: dict | None = None):
    """Write config + named float32 tensors.

    Layout: magic line, one JSON header line, then the tensors' little-endian
    float32 bytes concatenated in header order.
    """
    check_params(params, config)
    names = list(param_shapes(config))
    header = {
        "config": config.to_dict(),
        "tensors": [{"name": n, "shape": list(params[n].shape)} for n in names],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(blob + b"\n")
        for n in names:
            fh.write(np.ascontiguousarray(params[n], dtype="<f4").tobytes())


def load_checkpoint(path):
    """Returns ``(params, config, extra)``."""
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise ConfigError(f"{path}: not a checkpoint file")
    rest = raw[len(CHECKPOINT_MAGIC):]
    nl = rest.index(b"\n")
    header = json.loads(rest[:nl].decode("utf-8"))
    payload = memoryview(rest)[nl + 1:]
    config = ModelConfig.from_dict(header["config"])
    params, offset = {}, 0
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=offset).reshape(shape)
        params[entry["name"]] = arr.astype(np.float32)
        offset += 4 * n
    if offset != len(payload):
        raise ConfigError(f"{path}: trailing or missing tensor bytes")
    check_params(params, config)
    return params, config, header.get("extra", {})
