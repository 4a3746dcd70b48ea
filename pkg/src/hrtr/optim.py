"""SGD with momentum, plateau LR schedule, gradient clipping, training loop."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import ConfigError, DataError, NumericFault
from .loss import FocalSpec, focal_loss, focal_loss_grad
from .metrics import evaluate
from .model import ModelConfig, backward, check_params, forward, init_params
from .windowing import WindowSpec, extract_window, make_inference_windows, make_training_windows

logger = logging.getLogger(__name__)

IMPROVEMENT_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 25
    batch_size: int = 8
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    plateau_factor: float = 0.01
    plateau_patience: int = 5
    plateau_monitor: str = "train_loss"  # or "val_loss"
    clip_max_norm: float = 5.0
    min_lr: float = 1e-6
    seed: int = 0
    model_selection: str = "final"  # or "best_val_frame_acc"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not (self.lr > 0 and self.min_lr > 0 and self.clip_max_norm > 0):
            raise ConfigError("lr, min_lr and clip_max_norm must be positive")
        if not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ConfigError("momentum must be in [0, 1) and weight_decay >= 0")
        if not 0 < self.plateau_factor < 1 or self.plateau_patience < 1:
            raise ConfigError("plateau_factor must be in (0, 1) and patience >= 1")
        if self.plateau_monitor not in ("train_loss", "val_loss"):
            raise ConfigError(f"unknown plateau_monitor {self.plateau_monitor!r}")
        if self.model_selection not in ("final", "best_val_frame_acc"):
            raise ConfigError(f"unknown model_selection {self.model_selection!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class OptimizerState:
    lr: float
    velocity: dict[str, np.ndarray] = field(default_factory=dict)
    best_loss: float = math.inf
    epochs_since_improvement: int = 0


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    """Rescale all gradients jointly so their global L2 norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if norm <= max_norm:
        return dict(grads)
    scale = max_norm / norm
    return {k: g * g.dtype.type(scale) for k, g in grads.items()}


def sgd_step(params, grads, state: OptimizerState, config: TrainConfig):
    """One momentum-SGD update with L2 weight decay folded into the gradient.

    ``g' = g + wd * p``; ``v = momentum * v + g'``; ``p = p - lr * v``.
    Returns new ``(params, state)``; inputs are not modified.
    """
    if set(params) != set(grads):
        raise ConfigError("parameter and gradient names differ")
    new_params, velocity = {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ConfigError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        dt = p.dtype.type
        g = g + dt(config.weight_decay) * p if config.weight_decay else g
        v_prev = state.velocity.get(name)
        v = g.copy() if v_prev is None else dt(config.momentum) * v_prev + g
        velocity[name] = v
        new_params[name] = p - dt(state.lr) * v
    new_state = OptimizerState(state.lr, velocity, state.best_loss, state.epochs_since_improvement)
    return new_params, new_state


def plateau_update(state: OptimizerState, epoch_loss: float, config: TrainConfig) -> OptimizerState:
    """Cut the learning rate after ``plateau_patience`` epochs without improvement."""
    if not math.isfinite(epoch_loss):
        raise NumericFault(f"non-finite epoch loss {epoch_loss}")
    lr, best, counter = state.lr, state.best_loss, state.epochs_since_improvement
    if epoch_loss < best - IMPROVEMENT_EPS:
        best, counter = epoch_loss, 0
    else:
        counter += 1
        if counter >= config.plateau_patience:
            lr = max(lr * config.plateau_factor, config.min_lr)
            counter = 0
    return OptimizerState(lr, state.velocity, best, counter)


# ------------------------------------------------------------ training

def _epoch_rng(seed: int, stream: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream, epoch])


def _batch_from(trials, index, w):
    B = len(index)
    D = trials[0].features.dim
    xb = np.zeros((B, w, D), dtype=np.float32)
    yb = np.zeros((B, w), dtype=np.int64)
    mb = np.zeros((B, w), dtype=bool)
    for j, (ti, start) in enumerate(index):
        feats, valid = extract_window(trials[ti].features.features, start, w)
        labels, _ = extract_window(trials[ti].labels.labels, start, w)
        xb[j], yb[j], mb[j, :valid] = feats, labels, True
    return xb, yb, mb


def train(dataset, model_config: ModelConfig, train_config: TrainConfig, window_spec: WindowSpec,
          focal: FocalSpec = FocalSpec(), log_fn=None, params=None):
    """Fit the model on ``dataset.split.train``.

    Every epoch shuffles all training windows across trials, then runs
    forward, masked focal loss, backward, clipping and an SGD step per batch.
    Returns ``(params, log)`` where ``log`` has one dict per epoch. Given the
    same seed the run is bitwise reproducible.
    """
    trials = dataset.subset("train")
    if not trials:
        raise DataError("empty train split")
    if model_config.input_dim != dataset.feature_dim or model_config.num_classes != dataset.num_classes:
        raise ConfigError(
            f"model expects D={model_config.input_dim}, C={model_config.num_classes}; "
            f"data has D={dataset.feature_dim}, C={dataset.num_classes}"
        )
    val_trials = dataset.subset("val")
    if train_config.plateau_monitor == "val_loss" and not val_trials:
        raise ConfigError("plateau_monitor=val_loss requires a val split")
    if train_config.model_selection == "best_val_frame_acc" and not val_trials:
        raise ConfigError("model_selection=best_val_frame_acc requires a val split")

    cfg, w = train_config, window_spec.size
    if params is None:
        params = init_params(model_config, np.random.default_rng([cfg.seed, 0]))
    check_params(params, model_config)
    index = [(ti, s) for ti, tr in enumerate(trials)
             for s in make_training_windows(tr.features.num_frames, window_spec)]
    state = OptimizerState(lr=cfg.lr)
    log, best = [], (-math.inf, None)

    for epoch in range(1, cfg.epochs + 1):
        order = _epoch_rng(cfg.seed, 1, epoch).permutation(len(index))
        drop_rng = _epoch_rng(cfg.seed, 2, epoch)
        losses = []
        lr_used = state.lr
        for b, b0 in enumerate(range(0, len(order), cfg.batch_size)):
            batch = [index[i] for i in order[b0:b0 + cfg.batch_size]]
            xb, yb, mb = _batch_from(trials, batch, w)
            try:
                logits, cache = forward(params, model_config, xb, mode="train", rng=drop_rng)
                loss = focal_loss(logits, yb, mb, focal)
            except NumericFault as exc:
                raise NumericFault(f"epoch {epoch} batch {b}: {exc}") from None
            if not math.isfinite(loss):
                raise NumericFault(f"NaN loss at epoch {epoch} batch {b}")
            grads = backward(params, model_config, cache, focal_loss_grad(logits, yb, mb, focal))
            grads = clip_gradients(grads, cfg.clip_max_norm)
            params, state = sgd_step(params, grads, state, cfg)
            losses.append(loss)

        record = {"epoch": epoch, "train_loss": float(np.mean(losses)), "lr": lr_used}
        monitored = record["train_loss"]
        if val_trials:
            report = evaluate(val_trials, params, model_config, w, num_classes=dataset.num_classes)
            record["val_frame_acc"] = report.frame_accuracy
            record["val_es"] = report.edit_score
            if cfg.plateau_monitor == "val_loss":
                record["val_loss"] = _dataset_loss(val_trials, params, model_config, w, focal)
                monitored = record["val_loss"]
            if cfg.model_selection == "best_val_frame_acc" and report.frame_accuracy > best[0]:
                best = (report.frame_accuracy, {k: v.copy() for k, v in params.items()})
        state = plateau_update(state, monitored, cfg)
        log.append(record)
        logger.info("epoch %d loss %.6f lr %.3g", epoch, record["train_loss"], lr_used)
        if log_fn is not None:
            log_fn(record)

    if cfg.model_selection == "best_val_frame_acc" and best[1] is not None:
        params = best[1]
    return params, log


def _dataset_loss(trials, params, model_config, w, focal):
    total, count = 0.0, 0
    for tr in trials:
        T = tr.features.num_frames
        tiles = make_inference_windows(T, w)
        batch = [(0, s) for s, _ in tiles]
        xb, yb, mb = _batch_from([tr], batch, w)
        logits, _ = forward(params, model_config, xb, mode="eval")
        n = int(mb.sum())
        total += focal_loss(logits, yb, mb, focal) * n
        count += n
    return total / count
