"""Sliding windows for training, tiled windows for inference, output smoothing."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class WindowSpec:
    size: int
    stride: int
    # add a final window aligned to the sequence end when the stride grid misses it
    tail: bool = True

    def __post_init__(self):
        if int(self.size) < 1:
            raise ConfigError(f"window size must be >= 1, got {self.size}")
        if not 1 <= int(self.stride) <= int(self.size):
            raise ConfigError(f"stride must satisfy 1 <= stride <= size, got {self.stride}")


@dataclass(frozen=True)
class SmoothSpec:
    window: int = 0  # 0 disables smoothing

    def __post_init__(self):
        if int(self.window) < 0:
            raise ConfigError(f"smoothing window must be >= 0, got {self.window}")

    @property
    def enabled(self) -> bool:
        return self.window > 1


@dataclass
class Window:
    trial_id: str
    start: int
    features: np.ndarray
    labels: np.ndarray | None
    valid_len: int


def make_training_windows(T: int, spec: WindowSpec) -> list[int]:
    """Start offsets of the overlapping training windows for a length-T sequence."""
    if T < 1:
        raise ConfigError("sequence length must be >= 1")
    w, s = spec.size, spec.stride
    if T <= w:
        return [0]
    starts = list(range(0, T - w + 1, s))
    if spec.tail and starts[-1] != T - w:
        starts.append(T - w)
    return starts


def make_inference_windows(T: int, w: int) -> list[tuple[int, int]]:
    """Non-overlapping ``(start, valid_len)`` tiling of ``[0, T)``."""
    if T < 1:
        raise ConfigError("sequence length must be >= 1")
    if w < 1:
        raise ConfigError("window size must be >= 1")
    return [(start, min(w, T - start)) for start in range(0, T, w)]


def extract_window(x: np.ndarray, start: int, w: int) -> tuple[np.ndarray, int]:
    """Slice ``x[start:start+w]`` along axis 0, zero-padding past the end."""
    chunk = x[start:start + w]
    valid = chunk.shape[0]
    if valid == w:
        return chunk, valid
    out = np.zeros((w,) + x.shape[1:], dtype=x.dtype)
    out[:valid] = chunk
    return out, valid


def reassemble(window_probs, T: int) -> np.ndarray:
    """Stack the valid prefixes of tiled windows back into a T x C array.

    ``window_probs`` is a sequence of ``(start, valid_len, array)`` with the
    array having at least ``valid_len`` rows.
    """
    pieces = sorted(window_probs, key=lambda item: item[0])
    pos = 0
    out = []
    for start, valid_len, arr in pieces:
        if start != pos or valid_len < 1 or arr.shape[0] < valid_len:
            raise ValueError(f"window tiling error at frame {pos} (window start {start})")
        out.append(np.asarray(arr)[:valid_len])
        pos += valid_len
    if pos != T:
        raise ValueError(f"window tiling error: windows cover {pos} of {T} frames")
    return np.concatenate(out, axis=0)


def smooth(probs: np.ndarray, spec: SmoothSpec | int) -> np.ndarray:
    """Centered moving average over time, truncated at the sequence edges.

    Frame ``t`` averages frames ``t - k//2 .. t - k//2 + k - 1`` that exist,
    dividing by the number of frames actually averaged. For even ``k`` the
    window has one more frame before ``t`` than after it.
    """
    k = spec.window if isinstance(spec, SmoothSpec) else int(spec)
    if k < 0:
        raise ConfigError(f"smoothing window must be >= 0, got {k}")
    probs = np.asarray(probs, dtype=np.float64)
    if k <= 1 or probs.shape[0] == 0:
        return probs.copy()
    T = probs.shape[0]
    csum = np.zeros((T + 1,) + probs.shape[1:], dtype=np.float64)
    np.cumsum(probs, axis=0, out=csum[1:])
    t = np.arange(T)
    lo = np.clip(t - k // 2, 0, T)
    hi = np.clip(t - k // 2 + k, 0, T)
    counts = (hi - lo).reshape((T,) + (1,) * (probs.ndim - 1))
    return (csum[hi] - csum[lo]) / counts
