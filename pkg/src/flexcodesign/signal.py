"""Dataset ingestion, synthetic data, windowing, normalization and fold plans.

Feature entries are identified by ``(channel, kind)`` pairs. Their order is
channel-major with kinds ordered as in :data:`KINDS`; the position of an entry
in that order is the index of its gate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, FormatError, ParseError, SchemaError, UsageError

KINDS = ("Min", "Max", "Mean", "Sum")

FeatureEntry = tuple  # (channel name, kind)


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Subject:
    subject_id: str
    samples: np.ndarray  # (num_channels, num_samples)
    labels: np.ndarray  # (num_samples,)

    def __post_init__(self):
        object.__setattr__(self, "samples", _frozen(np.atleast_2d(self.samples)))
        object.__setattr__(self, "labels", _frozen(self.labels, dtype=np.int64))
        if self.samples.shape[1] != self.labels.shape[0]:
            raise FormatError(
                f"subject {self.subject_id}: {self.samples.shape[1]} samples "
                f"but {self.labels.shape[0]} labels"
            )


@dataclass(frozen=True)
class Dataset:
    channels: tuple
    sample_rate_hz: float
    num_classes: int
    subjects: tuple

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "subjects", tuple(self.subjects))
        if not self.sample_rate_hz > 0:
            raise ConfigError("sample_rate_hz must be positive")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be at least 2")
        for s in self.subjects:
            if s.samples.shape[0] != len(self.channels):
                raise FormatError(
                    f"subject {s.subject_id} has {s.samples.shape[0]} channels, "
                    f"expected {len(self.channels)}"
                )
            if s.labels.size and (s.labels.min() < 0 or s.labels.max() >= self.num_classes):
                raise FormatError(f"subject {s.subject_id} has labels outside [0, {self.num_classes})")

    @property
    def subject_ids(self):
        return [s.subject_id for s in self.subjects]


@dataclass(frozen=True)
class Window:
    subject_id: str
    samples: np.ndarray  # (num_channels, samples_per_window)
    label: int
    t_step_s: float


@dataclass(frozen=True)
class WindowSet:
    """Non-overlapping windows stored as one (n, channels, samples) block."""

    channels: tuple
    t_step_s: float
    samples: np.ndarray
    labels: np.ndarray
    subject_ids: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "samples", _frozen(self.samples))
        object.__setattr__(self, "labels", _frozen(self.labels, dtype=np.int64))
        object.__setattr__(self, "subject_ids", _frozen(self.subject_ids, dtype=object))

    def __len__(self):
        return self.labels.shape[0]

    def __getitem__(self, i) -> Window:
        return Window(self.subject_ids[i], self.samples[i], int(self.labels[i]), self.t_step_s)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def samples_per_window(self) -> int:
        return self.samples.shape[2]

    @property
    def window_s(self) -> float:
        return self.samples_per_window * self.t_step_s

    def select(self, mask) -> "WindowSet":
        mask = np.asarray(mask)
        return WindowSet(self.channels, self.t_step_s, self.samples[mask],
                         self.labels[mask], self.subject_ids[mask])

    def for_subjects(self, ids: Iterable[str]) -> "WindowSet":
        ids = set(ids)
        return self.select(np.array([s in ids for s in self.subject_ids], dtype=bool))

    def with_samples(self, samples) -> "WindowSet":
        return WindowSet(self.channels, self.t_step_s, samples, self.labels, self.subject_ids)


# --------------------------------------------------------------------------
# ingestion

def load_csv(path, schema=None) -> Dataset:
    """Read ``subject_id,<ch1>,...,<chN>,label`` rows into a :class:`Dataset`.

    ``schema`` may override ``subject_column``, ``label_column``, ``channels``
    (the ordered channel columns), ``sample_rate_hz`` and ``num_classes``.
    """
    schema = dict(schema or {})
    subj_col = schema.get("subject_column", "subject_id")
    label_col = schema.get("label_column", "label")
    rate = float(schema.get("sample_rate_hz", 1.0))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        for col in (subj_col, label_col):
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r}")
        channels = schema.get("channels") or [h for h in header if h not in (subj_col, label_col)]
        missing = [c for c in channels if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing channel column(s) {missing}")
        if not channels:
            raise SchemaError(f"{path}: no channel columns")
        si, li = header.index(subj_col), header.index(label_col)
        ci = [header.index(c) for c in channels]

        order, data = [], {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            sid = row[si].strip()
            if sid not in data:
                data[sid] = ([[] for _ in channels], [])
                order.append(sid)
            elif order[-1] != sid:
                raise FormatError(f"{path}: rows of subject {sid!r} are not contiguous (line {lineno})")
            chans, labels = data[sid]
            for k, idx in enumerate(ci):
                cell = row[idx].strip() if idx < len(row) else ""
                if cell == "":
                    continue
                try:
                    chans[k].append(float(cell))
                except ValueError:
                    raise ParseError(f"{path}: non-numeric sample {cell!r} at row {lineno}", row=lineno) from None
            try:
                labels.append(int(row[li]))
            except (ValueError, IndexError):
                raise ParseError(f"{path}: bad label at row {lineno}", row=lineno) from None

    subjects = []
    for sid in order:
        chans, labels = data[sid]
        lengths = {len(c) for c in chans}
        if len(lengths) != 1 or lengths.pop() != len(labels):
            raise FormatError(f"{path}: ragged channel lengths for subject {sid!r}")
        subjects.append(Subject(sid, np.array(chans), np.array(labels)))
    all_labels = [l for _, labels in data.values() for l in labels]
    num_classes = int(schema.get("num_classes", max(max(all_labels, default=0) + 1, 2)))
    return Dataset(tuple(channels), rate, num_classes, tuple(subjects))


def save_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["subject_id", *dataset.channels, "label"])
        for s in dataset.subjects:
            for t in range(s.labels.shape[0]):
                w.writerow([s.subject_id, *(repr(float(v)) for v in s.samples[:, t]), int(s.labels[t])])


@dataclass
class SyntheticSpec:
    num_subjects: int = 10
    num_channels: int = 3
    sample_rate_hz: float = 16.0
    duration_s: float = 120.0
    num_classes: int = 2
    informative_features: list = field(default_factory=lambda: [[0, "Max"], [1, "Min"]])
    window_s: float = 1.0
    label_noise: float = 0.05


def _channel_index(ref, num_channels):
    if isinstance(ref, str) and ref.startswith("ch"):
        ref = ref[2:]
    try:
        idx = int(ref)
    except (TypeError, ValueError):
        raise ConfigError(f"unknown channel {ref!r}") from None
    if not 0 <= idx < num_channels:
        raise ConfigError(f"informative feature references channel {idx}, "
                          f"but only {num_channels} channels exist")
    return idx


def generate_synthetic(spec: SyntheticSpec, seed: int) -> Dataset:
    """Labeled multi-channel series whose class depends only on chosen window statistics.

    Every window gets one latent value ``a ~ U(0, 1)`` per informative feature.
    The class is the quantile bin of ``mean(a) + U(-label_noise, label_noise)``.
    Each latent is written into its channel so that only the named statistic
    carries it: a level shift for Mean/Sum, a single spike for Max and a
    single dip for Min. All other content is label-independent noise.
    """
    if not spec.informative_features:
        raise ConfigError("at least one informative feature is required")
    inf = []
    for ch, kind in spec.informative_features:
        if kind not in KINDS:
            raise ConfigError(f"unknown feature kind {kind!r}")
        inf.append((_channel_index(ch, spec.num_channels), kind))
    spw = int(round(spec.window_s * spec.sample_rate_hz))
    if spw < 1:
        raise ConfigError("window_s * sample_rate_hz must be at least 1")
    total = int(round(spec.duration_s * spec.sample_rate_hz))
    n_win = total // spw
    rng = np.random.default_rng(seed)

    latents, scores, signals = [], [], []
    for _ in range(spec.num_subjects):
        a = rng.uniform(0.0, 1.0, size=(n_win, len(inf)))
        score = a.mean(axis=1) + rng.uniform(-spec.label_noise, spec.label_noise, size=n_win)
        x = 0.5 + rng.normal(0.0, 0.02, size=(spec.num_channels, n_win, 1))
        x = x + rng.normal(0.0, 0.02, size=(spec.num_channels, n_win, spw))
        spike_pos = rng.integers(0, spw, size=(spec.num_channels, n_win))
        dip_pos = (spike_pos + 1 + rng.integers(0, max(spw - 1, 1), size=spike_pos.shape)) % spw
        rows = np.arange(n_win)
        for j, (ch, kind) in enumerate(inf):
            if kind in ("Mean", "Sum"):
                x[ch] += 0.6 * (a[:, j:j + 1] - 0.5)
            elif kind == "Max":
                x[ch, rows, spike_pos[ch]] += 0.1 + 0.5 * a[:, j]
            else:
                x[ch, rows, dip_pos[ch]] -= 0.1 + 0.5 * a[:, j]
        tail = 0.5 + rng.normal(0.0, 0.02, size=(spec.num_channels, total - n_win * spw))
        signals.append(np.concatenate([x.reshape(spec.num_channels, -1), tail], axis=1))
        latents.append(a)
        scores.append(score)

    all_scores = np.concatenate(scores) if scores else np.zeros(0)
    qs = np.arange(1, spec.num_classes) / spec.num_classes
    thresholds = np.quantile(all_scores, qs) if all_scores.size else np.zeros(len(qs))
    subjects = []
    for i, (sig, score) in enumerate(zip(signals, scores)):
        win_labels = np.searchsorted(thresholds, score, side="right")
        labels = np.repeat(win_labels, spw)
        tail_label = win_labels[-1] if n_win else 0
        labels = np.concatenate([labels, np.full(total - n_win * spw, tail_label)])
        subjects.append(Subject(f"s{i:02d}", sig, labels))
    channels = tuple(f"ch{c}" for c in range(spec.num_channels))
    return Dataset(channels, float(spec.sample_rate_hz), spec.num_classes, tuple(subjects))


# --------------------------------------------------------------------------
# windowing and normalization

def make_windows(dataset: Dataset, window_s: float) -> WindowSet:
    if window_s <= 0:
        raise UsageError("window_s must be positive")
    spw = int(round(window_s * dataset.sample_rate_hz))
    if spw < 1:
        raise UsageError("window shorter than one sample")
    nch = len(dataset.channels)
    blocks, labels, ids = [np.zeros((0, nch, spw))], [np.zeros(0, dtype=np.int64)], [np.zeros(0, dtype=object)]
    for s in dataset.subjects:
        n = s.labels.shape[0] // spw
        if n == 0:
            continue
        x = s.samples[:, : n * spw].reshape(nch, n, spw).transpose(1, 0, 2)
        lab = s.labels[: n * spw].reshape(n, spw)
        counts = (lab[:, :, None] == np.arange(dataset.num_classes)).sum(axis=1)
        blocks.append(x)
        labels.append(counts.argmax(axis=1))  # argmax picks the lowest index on ties
        ids.append(np.full(n, s.subject_id, dtype=object))
    return WindowSet(dataset.channels, 1.0 / dataset.sample_rate_hz,
                     np.concatenate(blocks), np.concatenate(labels), np.concatenate(ids))


@dataclass(frozen=True)
class Normalizer:
    min: np.ndarray
    max: np.ndarray

    def to_dict(self):
        return {"min": self.min.tolist(), "max": self.max.tolist()}


def fit_normalizer(train: WindowSet) -> Normalizer:
    if len(train) == 0:
        raise UsageError("cannot fit a normalizer on an empty window set")
    return Normalizer(train.samples.min(axis=(0, 2)), train.samples.max(axis=(0, 2)))


def apply_normalizer(n: Normalizer, w):
    """Scale per channel into [0, 1]; constant channels map to 0.5."""
    x = w.samples
    lo = n.min[:, None]
    span = (n.max - n.min)[:, None]
    safe = np.where(span > 0, span, 1.0)
    y = np.where(span > 0, np.clip((x - lo) / safe, 0.0, 1.0), 0.5)
    if isinstance(w, WindowSet):
        return w.with_samples(y)
    return Window(w.subject_id, y, w.label, w.t_step_s)


# --------------------------------------------------------------------------
# software reference features

@dataclass(frozen=True)
class FeatureVector:
    entries: tuple  # ((channel, kind, value), ...)

    @property
    def values(self):
        return np.array([v for _, _, v in self.entries])

    def keys(self):
        return [(c, k) for c, k, _ in self.entries]


def candidate_entries(channels: Sequence[str], kinds: Sequence[str] = KINDS) -> list:
    for k in kinds:
        if k not in KINDS:
            raise ConfigError(f"unknown feature kind {k!r}")
    return [(c, k) for c in channels for k in KINDS if k in kinds]


def _stat(x, kind):
    if kind == "Min":
        return x.min(axis=-1)
    if kind == "Max":
        return x.max(axis=-1)
    if kind == "Mean":
        return x.mean(axis=-1)
    if kind == "Sum":
        return x.sum(axis=-1)
    raise ConfigError(f"unknown feature kind {kind!r}")


def reference_features(window: Window, kinds=KINDS, channels=None) -> FeatureVector:
    if window.samples.shape[-1] == 0:
        raise UsageError("empty window")
    channels = channels or [f"ch{i}" for i in range(window.samples.shape[0])]
    entries = []
    for ci, c in enumerate(channels):
        for k in KINDS:
            if k in kinds:
                entries.append((c, k, float(_stat(window.samples[ci], k))))
    return FeatureVector(tuple(entries))


def feature_table(ws: WindowSet, entries) -> np.ndarray:
    """Reference feature values for every window, shape (n, len(entries))."""
    out = np.zeros((len(ws), len(entries)))
    for j, (c, k) in enumerate(entries):
        if c not in ws.channels:
            raise ConfigError(f"unknown channel {c!r}")
        out[:, j] = _stat(ws.samples[:, ws.channels.index(c), :], k)
    return out


def classifier_inputs(ws: WindowSet, entries) -> np.ndarray:
    """Reference features scaled into [0, 1]; Sum is divided by the window length."""
    x = feature_table(ws, entries)
    for j, (_, k) in enumerate(entries):
        if k == "Sum":
            x[:, j] /= ws.samples_per_window
    return x


# --------------------------------------------------------------------------
# subject-level folds

@dataclass(frozen=True)
class FoldPlan:
    k: int
    train: tuple  # per fold, tuple of subject ids
    test: tuple


def kfold_split(dataset, k: int = 5, seed: int = 0) -> FoldPlan:
    ids = dataset.subject_ids if isinstance(dataset, Dataset) else list(dataset)
    if k < 2:
        raise ConfigError("k must be at least 2")
    if k > len(ids):
        raise ConfigError(f"k={k} exceeds the number of subjects ({len(ids)})")
    perm = np.random.default_rng(seed).permutation(len(ids))
    groups = np.array_split(perm, k)
    test = tuple(tuple(ids[i] for i in sorted(g)) for g in groups)
    train = tuple(tuple(s for s in ids if s not in set(t)) for t in test)
    return FoldPlan(k, train, test)


def validation_split(train_ids, fraction: float = 0.2, seed: int = 0):
    """Split training subjects into (fit, validation) subject lists; at least one each."""
    ids = list(train_ids)
    if len(ids) < 2:
        raise ConfigError("need at least two training subjects to carve a validation split")
    n_val = min(max(1, int(round(fraction * len(ids)))), len(ids) - 1)
    perm = np.random.default_rng(seed).permutation(len(ids))
    val = set(ids[i] for i in perm[:n_val])
    return [s for s in ids if s not in val], [s for s in ids if s in val]
