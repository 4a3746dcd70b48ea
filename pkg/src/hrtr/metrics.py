"""Segment-level edit metrics and frame-level classification metrics."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .windowing import smooth


def to_transcript(labels) -> list:
    """Collapse runs of identical adjacent labels, keeping order."""
    out = []
    for lab in labels:
        lab = lab.item() if isinstance(lab, np.generic) else lab
        if not out or out[-1] != lab:
            out.append(lab)
    return out


def levenshtein(g: Sequence, p: Sequence) -> int:
    """Unit-cost edit distance (insertions, deletions, substitutions)."""
    if len(g) < len(p):
        g, p = p, g
    prev = list(range(len(p) + 1))
    for i, gi in enumerate(g, 1):
        cur = [i] + [0] * len(p)
        for j, pj in enumerate(p, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (gi != pj))
        prev = cur
    return prev[-1]


def edit_score(g: Sequence, p: Sequence) -> float:
    """``(1 - L(G, P) / max(|G|, |P|)) * 100``; two empty transcripts score 100."""
    n = max(len(g), len(p))
    if n == 0:
        return 100.0
    return (1.0 - levenshtein(g, p) / n) * 100.0


def aer(g: Sequence, p: Sequence) -> float:
    """Action error rate ``L(G, P) / |G|``. Not bounded by 1."""
    if len(g) == 0:
        raise ValueError("AER undefined for an empty ground-truth transcript")
    return levenshtein(g, p) / len(g)


def confusion_matrix(gt, pred, num_classes: int) -> np.ndarray:
    gt = np.asarray(gt, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if gt.shape != pred.shape:
        raise ValueError(f"length mismatch: {gt.shape[0]} ground-truth vs {pred.shape[0]} predicted frames")
    for arr in (gt, pred):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"class id out of range for {num_classes} classes")
    return np.bincount(gt * num_classes + pred, minlength=num_classes ** 2).reshape(
        num_classes, num_classes
    )


def _safe_div(num, den, empty):
    num, den = np.asarray(num, dtype=np.float64), np.asarray(den, dtype=np.float64)
    out = np.full(num.shape, float(empty))
    np.divide(num, den, out=out, where=den > 0)
    return out


def per_class_metrics(cm: np.ndarray) -> dict[str, np.ndarray]:
    """One-vs-rest sensitivity, specificity, precision and F1 from a confusion matrix.

    0/0 resolves to 0 for sensitivity, precision and F1, and to 1 for
    specificity (a class that covers every frame has no negatives to reject).
    """
    cm = np.asarray(cm, dtype=np.int64)
    tp = np.diag(cm)
    fn = cm.sum(axis=1) - tp
    fp = cm.sum(axis=0) - tp
    tn = cm.sum() - tp - fn - fp
    sens = _safe_div(tp, tp + fn, 0.0)
    spec = _safe_div(tn, tn + fp, 1.0)
    prec = _safe_div(tp, tp + fp, 0.0)
    f1 = _safe_div(2 * prec * sens, prec + sens, 0.0)
    return {"sensitivity": sens, "specificity": spec, "precision": prec, "f1": f1}


@dataclass
class MetricsReport:
    edit_score: float
    aer: float
    frame_accuracy: float
    sensitivity: list[float]
    specificity: list[float]
    f1: list[float]
    confusion: list[list[int]]
    num_trials: int = 0
    class_names: list[str] = field(default_factory=list)
    aggregate: str = "mean"

    def to_dict(self) -> dict:
        d = {
            "edit_score": self.edit_score,
            "aer": self.aer,
            "frame_accuracy": self.frame_accuracy,
            "num_trials": self.num_trials,
            "aggregate": self.aggregate,
            "per_class": {},
            "confusion": self.confusion,
        }
        names = self.class_names or [str(i) for i in range(len(self.f1))]
        for i, name in enumerate(names):
            d["per_class"][name] = {
                "sensitivity": self.sensitivity[i],
                "specificity": self.specificity[i],
                "f1": self.f1[i],
            }
        d["class_names"] = names
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def write_confusion_csv(self, path):
        names = self.class_names or [str(i) for i in range(len(self.confusion))]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["ground_truth", *names])
            for name, row in zip(names, self.confusion):
                writer.writerow([name, *row])


def frame_metrics(gt_frames, pred_frames, num_classes: int) -> dict:
    cm = confusion_matrix(gt_frames, pred_frames, num_classes)
    pcm = per_class_metrics(cm)
    total = cm.sum()
    return {
        "confusion": cm,
        "frame_accuracy": float(np.trace(cm) / total) if total else 0.0,
        **pcm,
    }


def report_from_frames(gt_list, pred_list, num_classes: int, class_names=None,
                       aggregate: str = "mean") -> MetricsReport:
    """Build a report from per-trial ground-truth and predicted frame labels.

    ``aggregate="mean"`` averages ES and AER over trials; ``"pooled"`` sums
    edit distances and normalizers over all trials before dividing.
    """
    if aggregate not in ("mean", "pooled"):
        raise ValueError(f"unknown aggregate {aggregate!r}")
    if len(gt_list) != len(pred_list) or not gt_list:
        raise ValueError("need matching, non-empty lists of trials")
    es_vals, aer_vals = [], []
    dist_sum = max_sum = g_sum = 0
    for gt, pred in zip(gt_list, pred_list):
        if len(gt) != len(pred):
            raise ValueError(f"length mismatch: {len(gt)} vs {len(pred)} frames")
        g, p = to_transcript(gt), to_transcript(pred)
        dist = levenshtein(g, p)
        es_vals.append(edit_score(g, p))
        aer_vals.append(aer(g, p))
        dist_sum += dist
        max_sum += max(len(g), len(p))
        g_sum += len(g)
    if aggregate == "mean":
        es, err = float(np.mean(es_vals)), float(np.mean(aer_vals))
    else:
        es = (1.0 - dist_sum / max_sum) * 100.0
        err = dist_sum / g_sum
    fm = frame_metrics(np.concatenate(gt_list), np.concatenate(pred_list), num_classes)
    return MetricsReport(
        edit_score=es,
        aer=err,
        frame_accuracy=fm["frame_accuracy"],
        sensitivity=fm["sensitivity"].tolist(),
        specificity=fm["specificity"].tolist(),
        f1=fm["f1"].tolist(),
        confusion=fm["confusion"].tolist(),
        num_trials=len(gt_list),
        class_names=list(class_names or []),
        aggregate=aggregate,
    )


def evaluate_probabilities(gt_list, probs_list, num_classes: int, smooth_window: int = 0,
                           class_names=None, aggregate: str = "mean") -> MetricsReport:
    """Optional smoothing, then argmax, then :func:`report_from_frames`."""
    preds = []
    for probs in probs_list:
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 2 or probs.shape[1] != num_classes:
            raise ValueError(f"probabilities must be T x {num_classes}")
        if smooth_window > 1:
            probs = smooth(probs, smooth_window)
        preds.append(np.argmax(probs, axis=1))
    return report_from_frames([np.asarray(g) for g in gt_list], preds, num_classes,
                              class_names, aggregate)


def evaluate(trials, params, model_config, window_size: int, smooth_window: int = 0,
             num_classes: int | None = None, class_names=None, aggregate: str = "mean",
             return_probs: bool = False):
    """Non-overlapping inference over ``trials`` followed by metric computation."""
    from .model import predict_proba

    if not trials:
        raise ValueError("cannot evaluate an empty split")
    C = num_classes or model_config.num_classes
    if model_config.num_classes != C:
        raise ValueError(f"model has {model_config.num_classes} classes, data has {C}")
    probs = [predict_proba(params, model_config, t.features.features, window_size) for t in trials]
    report = evaluate_probabilities([t.labels.labels for t in trials], probs, C,
                                    smooth_window, class_names, aggregate)
    return (report, probs) if return_probs else report
