"""Dataset types and on-disk formats.

Layout of a dataset directory as written by :func:`write_dataset`::

    features/<trial_id>.feat   text header line + row-major little-endian float32
    labels/<trial_id>.csv      frame_index,class_name
    vocab.txt                  one class name per line, line order = class id
    split.txt                  ``train:`` / ``val:`` / ``test:`` sections

Feature header line (ASCII, newline terminated)::

    HRTRFEAT trial_id=<id> T=<frames> D=<dim> sample_rate=<hz>
"""
from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

FEATURE_MAGIC = "HRTRFEAT"
FEATURE_SUFFIX = ".feat"
LABEL_SUFFIX = ".csv"
SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class ClassVocabulary:
    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if len(names) < 2:
            raise DataError(f"vocabulary needs at least 2 classes, got {len(names)}")
        for name in names:
            if not name or name != name.strip() or "," in name:
                raise DataError(f"invalid class name: {name!r}")
        if len(set(names)) != len(names):
            raise DataError("duplicate class names in vocabulary")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise DataError(f"unknown class: {name!r}") from None

    def name(self, class_id: int) -> str:
        return self.names[class_id]


@dataclass(frozen=True)
class FeatureSequence:
    trial_id: str
    features: np.ndarray
    sample_rate_hz: float = 100.0

    def __post_init__(self):
        _check_trial_id(self.trial_id)
        feats = np.array(self.features, dtype=np.float32, copy=True)
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise DataError(f"{self.trial_id}: features must be a non-empty T x D matrix")
        if not np.isfinite(feats).all():
            raise DataError(f"{self.trial_id}: corrupt feature data (non-finite values)")
        if not self.sample_rate_hz > 0:
            raise DataError(f"{self.trial_id}: sample rate must be positive")
        feats.flags.writeable = False
        object.__setattr__(self, "features", feats)

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class LabelSequence:
    trial_id: str
    labels: np.ndarray

    def __post_init__(self):
        _check_trial_id(self.trial_id)
        labels = np.array(self.labels, dtype=np.int64, copy=True)
        if labels.ndim != 1:
            raise DataError(f"{self.trial_id}: labels must be one-dimensional")
        if labels.size and labels.min() < 0:
            raise DataError(f"{self.trial_id}: negative class id")
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.labels.shape[0]


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[str, ...] = ()
    val: tuple[str, ...] = ()
    test: tuple[str, ...] = ()

    def __post_init__(self):
        for name in SPLIT_NAMES:
            object.__setattr__(self, name, tuple(getattr(self, name)))
        seen: dict[str, str] = {}
        for name in SPLIT_NAMES:
            ids = getattr(self, name)
            if len(set(ids)) != len(ids):
                raise DataError(f"duplicate trial id within split section {name!r}")
            for tid in ids:
                if tid in seen:
                    raise DataError(f"trial {tid!r} appears in both {seen[tid]!r} and {name!r}")
                seen[tid] = name

    def __getitem__(self, name: str) -> tuple[str, ...]:
        if name not in SPLIT_NAMES:
            raise KeyError(name)
        return getattr(self, name)

    def all_ids(self) -> list[str]:
        return [*self.train, *self.val, *self.test]


@dataclass(frozen=True)
class Trial:
    features: FeatureSequence
    labels: LabelSequence

    @property
    def trial_id(self) -> str:
        return self.features.trial_id


@dataclass(frozen=True)
class Dataset:
    vocab: ClassVocabulary
    trials: dict[str, Trial]
    split: DatasetSplit = field(default_factory=DatasetSplit)

    def __post_init__(self):
        dims = {t.features.dim for t in self.trials.values()}
        if len(dims) > 1:
            raise DataError(f"feature dimension mismatch across trials: {sorted(dims)}")
        n_classes = len(self.vocab)
        for tid, trial in self.trials.items():
            if trial.features.trial_id != tid or trial.labels.trial_id != tid:
                raise DataError(f"trial id mismatch for {tid!r}")
            if trial.features.num_frames != len(trial.labels):
                raise DataError(
                    f"length mismatch for trial {tid}: features T={trial.features.num_frames}, "
                    f"labels T={len(trial.labels)}"
                )
            if len(trial.labels) and trial.labels.labels.max() >= n_classes:
                raise DataError(f"unknown class id in trial {tid}")
        for tid in self.split.all_ids():
            if tid not in self.trials:
                raise DataError(f"trial not found: {tid}")

    @property
    def feature_dim(self) -> int:
        if not self.trials:
            raise DataError("empty dataset")
        return next(iter(self.trials.values())).features.dim

    @property
    def num_classes(self) -> int:
        return len(self.vocab)

    def subset(self, split_name: str) -> list[Trial]:
        return [self.trials[tid] for tid in self.split[split_name]]


def _check_trial_id(trial_id: str):
    if not trial_id or any(c.isspace() for c in trial_id) or "/" in trial_id or "," in trial_id:
        raise DataError(f"invalid trial id: {trial_id!r}")


# ---------------------------------------------------------------- features

def write_features(path, seq: FeatureSequence):
    T, D = seq.features.shape
    header = f"{FEATURE_MAGIC} trial_id={seq.trial_id} T={T} D={D} sample_rate={seq.sample_rate_hz!r}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(seq.features, dtype="<f4").tobytes())


def read_feature_header(fh) -> dict:
    line = fh.readline()
    try:
        text = line.decode("ascii").rstrip("\n")
    except UnicodeDecodeError:
        raise DataError("corrupt feature header") from None
    parts = text.split(" ")
    if not parts or parts[0] != FEATURE_MAGIC:
        raise DataError("corrupt feature header: bad magic")
    fields = {}
    for part in parts[1:]:
        key, sep, value = part.partition("=")
        if not sep:
            raise DataError(f"corrupt feature header field {part!r}")
        fields[key] = value
    try:
        return {
            "trial_id": fields["trial_id"],
            "T": int(fields["T"]),
            "D": int(fields["D"]),
            "sample_rate": float(fields["sample_rate"]),
        }
    except (KeyError, ValueError) as exc:
        raise DataError(f"corrupt feature header: {exc}") from None


def read_features(path) -> FeatureSequence:
    with open(path, "rb") as fh:
        header = read_feature_header(fh)
        payload = fh.read()
    T, D = header["T"], header["D"]
    if T < 1 or D < 1:
        raise DataError(f"{header['trial_id']}: header declares empty feature matrix")
    if len(payload) != 4 * T * D:
        raise DataError(
            f"corrupt feature data for {header['trial_id']}: expected {4 * T * D} bytes, got {len(payload)}"
        )
    feats = np.frombuffer(payload, dtype="<f4").reshape(T, D).astype(np.float32)
    if not np.isfinite(feats).all():
        raise DataError(f"corrupt feature data in trial {header['trial_id']} (non-finite values)")
    return FeatureSequence(header["trial_id"], feats, header["sample_rate"])


# ------------------------------------------------------------------ labels

def write_labels(path, seq: LabelSequence, vocab: ClassVocabulary):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["frame_index", "class_name"])
        for i, cid in enumerate(seq.labels):
            writer.writerow([i, vocab.name(int(cid))])


def read_labels(path, trial_id: str, vocab: ClassVocabulary) -> LabelSequence:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["frame_index", "class_name"]:
        raise DataError(f"{trial_id}: label file must start with 'frame_index,class_name' header")
    labels = []
    for expected, row in enumerate(rows[1:]):
        if len(row) != 2:
            raise DataError(f"{trial_id}: malformed label row {expected}")
        try:
            idx = int(row[0])
        except ValueError:
            raise DataError(f"{trial_id}: bad frame index {row[0]!r}") from None
        if idx != expected:
            raise DataError(f"{trial_id}: frame indices must be consecutive from 0 (row {expected})")
        name = row[1].strip()
        if name not in vocab._index:
            raise DataError(f"unknown class {name!r} in trial {trial_id}")
        labels.append(vocab._index[name])
    return LabelSequence(trial_id, np.asarray(labels, dtype=np.int64))


# ----------------------------------------------------------- vocab / split

def read_vocab(path) -> ClassVocabulary:
    with open(path) as fh:
        names = [line.strip() for line in fh if line.strip()]
    return ClassVocabulary(tuple(names))


def write_vocab(path, vocab: ClassVocabulary):
    with open(path, "w") as fh:
        fh.write("".join(f"{n}\n" for n in vocab.names))


def read_split(path) -> DatasetSplit:
    sections: dict[str, list[str]] = {name: [] for name in SPLIT_NAMES}
    current = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.endswith(":") and line[:-1] in SPLIT_NAMES:
                current = line[:-1]
                continue
            if current is None:
                raise DataError(f"split file line {lineno}: trial id before any section header")
            sections[current].extend(line.split())
    return DatasetSplit(**sections)


def write_split(path, split: DatasetSplit):
    with open(path, "w") as fh:
        for name in SPLIT_NAMES:
            fh.write(f"{name}:\n")
            for tid in split[name]:
                fh.write(f"{tid}\n")


# ---------------------------------------------------------------- datasets

def load_dataset(features_dir, labels_dir, vocab_file, split_file, workers: int = 1) -> Dataset:
    """Load and validate every trial referenced by ``split_file``.

    All type invariants are enforced here; a returned dataset is always valid.
    """
    features_dir, labels_dir = Path(features_dir), Path(labels_dir)
    for d in (features_dir, labels_dir):
        if not d.is_dir():
            raise DataError(f"directory not found: {d}")
    vocab = read_vocab(vocab_file)
    split = read_split(split_file)

    def load_one(tid):
        fpath = features_dir / f"{tid}{FEATURE_SUFFIX}"
        lpath = labels_dir / f"{tid}{LABEL_SUFFIX}"
        if not fpath.is_file() or not lpath.is_file():
            raise DataError(f"trial not found: {tid}")
        feats = read_features(fpath)
        if feats.trial_id != tid:
            raise DataError(f"trial id mismatch: file {fpath.name} declares {feats.trial_id!r}")
        return tid, feats, read_labels(lpath, tid, vocab)

    ids = split.all_ids()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            loaded = list(pool.map(load_one, ids))
    else:
        loaded = [load_one(tid) for tid in ids]

    dims = {}
    for tid, feats, labels in loaded:
        dims.setdefault(feats.dim, tid)
        if len(dims) > 1:
            raise DataError(f"feature dimension mismatch: {dict((d, t) for d, t in dims.items())}")
        if feats.num_frames != len(labels):
            raise DataError(
                f"length mismatch for trial {tid}: features T={feats.num_frames}, labels T={len(labels)}"
            )
    trials = {tid: Trial(f, l) for tid, f, l in loaded}
    return Dataset(vocab, trials, split)


def write_dataset(dataset: Dataset, out_dir) -> dict[str, Path]:
    """Write ``dataset`` in the on-disk layout; returns the four paths load_dataset needs."""
    out = Path(out_dir)
    paths = {
        "features_dir": out / "features",
        "labels_dir": out / "labels",
        "vocab_file": out / "vocab.txt",
        "split_file": out / "split.txt",
    }
    paths["features_dir"].mkdir(parents=True, exist_ok=True)
    paths["labels_dir"].mkdir(parents=True, exist_ok=True)
    for tid, trial in dataset.trials.items():
        write_features(paths["features_dir"] / f"{tid}{FEATURE_SUFFIX}", trial.features)
        write_labels(paths["labels_dir"] / f"{tid}{LABEL_SUFFIX}", trial.labels, dataset.vocab)
    write_vocab(paths["vocab_file"], dataset.vocab)
    write_split(paths["split_file"], dataset.split)
    return paths


# ------------------------------------------------------------- predictions

def argmax_lowest(probs: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximal index, i.e. the lowest class id on ties
    return np.argmax(probs, axis=-1)


def write_predictions(path, trial_id: str, probs, vocab: ClassVocabulary):
    """Write per-frame class probabilities with the argmax label as CSV."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.size == 0:
        probs = probs.reshape(0, len(vocab))
    if probs.ndim != 2 or probs.shape[1] != len(vocab):
        raise DataError(f"{trial_id}: probabilities must be T x {len(vocab)}")
    if not np.isfinite(probs).all():
        raise DataError(f"{trial_id}: non-finite probabilities")
    pred = argmax_lowest(probs) if len(probs) else np.zeros(0, dtype=np.int64)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["frame_index", "predicted", *vocab.names])
    for t, row in enumerate(probs):
        writer.writerow([t, vocab.name(int(pred[t])), *(repr(float(v)) for v in row)])
    Path(path).write_text(buf.getvalue())


def read_predictions(path, vocab: ClassVocabulary) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`write_predictions`: returns (labels, probs)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    if header[:2] != ["frame_index", "predicted"] or tuple(header[2:]) != vocab.names:
        raise DataError("prediction file header does not match vocabulary")
    labels = np.array([vocab.index(r[1]) for r in rows[1:]], dtype=np.int64)
    probs = np.array([[float(v) for v in r[2:]] for r in rows[1:]], dtype=np.float64)
    return labels, probs.reshape(len(rows) - 1, len(vocab))
