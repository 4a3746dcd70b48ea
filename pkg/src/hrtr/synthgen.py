"""Synthetic streams of short action segments with Gaussian class features."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .data import ClassVocabulary, Dataset, DatasetSplit, FeatureSequence, LabelSequence, Trial
from .errors import ConfigError


@dataclass(frozen=True)
class SynthSpec:
    num_trials: int = 20
    num_classes: int = 5
    feature_dim: int = 8
    duration_range: tuple[int, int] = (20, 150)
    segments_range: tuple[int, int] = (4, 10)
    noise_std: float = 0.1
    # minimum pairwise distance between generated class means
    mean_separation: float = 1.0
    class_means: tuple[tuple[float, ...], ...] | None = None
    sample_rate_hz: float = 100.0
    val_trials: int = 0
    test_trials: int = 0
    seed: int = 0

    def __post_init__(self):
        for name in ("duration_range", "segments_range"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        d_min, d_max = self.duration_range
        s_min, s_max = self.segments_range
        if d_min < 1 or d_max < d_min:
            raise ConfigError(f"invalid duration_range {self.duration_range}")
        if s_min < 1 or s_max < s_min:
            raise ConfigError(f"invalid segments_range {self.segments_range}")
        if self.num_classes < 2 or self.feature_dim < 1 or self.num_trials < 1:
            raise ConfigError("need num_classes >= 2, feature_dim >= 1, num_trials >= 1")
        if self.noise_std < 0 or self.mean_separation <= 0:
            raise ConfigError("noise_std must be >= 0 and mean_separation > 0")
        if self.val_trials + self.test_trials >= self.num_trials:
            raise ConfigError("val_trials + test_trials must leave at least one training trial")
        if self.class_means is not None:
            means = np.asarray(self.class_means, dtype=np.float64)
            if means.shape != (self.num_classes, self.feature_dim):
                raise ConfigError(f"class_means must be {self.num_classes} x {self.feature_dim}")
            if _min_pairwise(means) <= 0:
                raise ConfigError("class means must be pairwise distinct")
            object.__setattr__(self, "class_means", tuple(tuple(map(float, r)) for r in means))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown synth spec keys: {sorted(unknown)}")
        return cls(**d)


def _min_pairwise(means: np.ndarray) -> float:
    diff = means[:, None, :] - means[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))
    return float(dist[~np.eye(len(means), dtype=bool)].min())


def class_means(spec: SynthSpec) -> np.ndarray:
    """Per-class mean vectors, ``C x D``, rescaled to the requested separation."""
    if spec.class_means is not None:
        return np.asarray(spec.class_means, dtype=np.float64)
    rng = np.random.default_rng([spec.seed, 0xC1A55])
    means = rng.standard_normal((spec.num_classes, spec.feature_dim))
    return means * (spec.mean_separation / _min_pairwise(means))


def generate_trial(spec: SynthSpec, means: np.ndarray, index: int):
    rng = np.random.default_rng([spec.seed, index])
    n_seg = int(rng.integers(spec.segments_range[0], spec.segments_range[1] + 1))
    labels = []
    prev = -1
    for _ in range(n_seg):
        choices = [c for c in range(spec.num_classes) if c != prev]
        cls = int(choices[rng.integers(len(choices))])
        dur = int(rng.integers(spec.duration_range[0], spec.duration_range[1] + 1))
        labels.extend([cls] * dur)
        prev = cls
    labels = np.asarray(labels, dtype=np.int64)
    feats = means[labels] + spec.noise_std * rng.standard_normal((labels.size, spec.feature_dim))
    return feats, labels


def generate(spec: SynthSpec) -> Dataset:
    """Deterministic synthetic dataset; trial ``i`` depends only on ``(seed, i)``.

    Trials are assigned to splits in order: train first, then val, then test.
    """
    means = class_means(spec)
    vocab = ClassVocabulary(tuple(f"class{c}" for c in range(spec.num_classes)))
    width = max(3, len(str(spec.num_trials - 1)))
    trials = {}
    for i in range(spec.num_trials):
        tid = f"trial_{i:0{width}d}"
        feats, labels = generate_trial(spec, means, i)
        trials[tid] = Trial(FeatureSequence(tid, feats, spec.sample_rate_hz), LabelSequence(tid, labels))
    ids = list(trials)
    n_train = spec.num_trials - spec.val_trials - spec.test_trials
    split = DatasetSplit(
        train=ids[:n_train],
        val=ids[n_train:n_train + spec.val_trials],
        test=ids[n_train + spec.val_trials:],
    )
    return Dataset(vocab, trials, split)


def nearest_mean_predict(features: np.ndarray, means: np.ndarray) -> np.ndarray:
    d2 = ((features[:, None, :] - means[None, :, :]) ** 2).sum(-1)
    return np.argmin(d2, axis=1)
