"""Labeled envelope data, repetition blocks, CSV I/O and a synthetic generator.

A *block* is one captured repetition of one gesture; it is the grouping
unit for leave-one-group-out cross-validation, so every block carries a
single label.
"""
from __future__ import annotations

import csv
import hashlib
import io
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, ParseError, StructuralError

REST = "rs"
GESTURES = ("rs", "pw", "pn", "fl", "ex", "pr", "su")
MAGNITUDE_FLOOR = 1e-9

_LABEL_RE = re.compile(r"^[!-+\--~]{1,8}$")  # printable ASCII, no comma, no space


def check_label(label: str) -> str:
    if not isinstance(label, str) or not _LABEL_RE.match(label):
        raise StructuralError(f"invalid gesture label {label!r} (1-8 printable ASCII chars, no comma)")
    return label


def fmt(value: float) -> str:
    """Float formatting used by every text artifact (9 significant digits)."""
    return format(float(value), ".9g")


# --- magnitude and normalization -------------------------------------------

def magnitude(x) -> float:
    """Mean over channels, floored at zero."""
    m = float(np.mean(np.asarray(x, dtype=float)))
    return m if m > 0.0 else 0.0


def magnitudes(X) -> np.ndarray:
    """Row-wise :func:`magnitude` of an (n, channels) array."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] == 0:
        return np.zeros(0)
    return np.maximum(X.mean(axis=1), 0.0)


def below_floor(x) -> bool:
    return magnitude(x) <= MAGNITUDE_FLOOR


def normalize(x) -> np.ndarray:
    """Scale a sample to unit mean; sub-floor samples are returned unchanged."""
    x = np.asarray(x, dtype=float)
    m = magnitude(x)
    if m <= MAGNITUDE_FLOOR:
        return x.copy()
    return x / m


def normalize_rows(X) -> tuple[np.ndarray, np.ndarray]:
    """Normalize each row; also return the mask of sub-floor rows left as-is."""
    X = np.asarray(X, dtype=float)
    m = magnitudes(X)
    sub = m <= MAGNITUDE_FLOOR
    out = X.copy()
    ok = ~sub
    out[ok] = X[ok] / m[ok, None]
    return out, sub


# --- containers ------------------------------------------------------------

@dataclass(frozen=True)
class LabeledSample:
    features: np.ndarray
    label: str
    block_id: int
    timestamp: float = 0.0


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Immutable labeled sample table.

    ``class_list`` defaults to labels in order of first appearance; it fixes
    the deterministic class order used for tie-breaking and initialization.
    """

    features: np.ndarray
    labels: tuple
    blocks: np.ndarray
    timestamps: np.ndarray | None = None
    class_list: tuple | None = None
    channel_count: int | None = None

    def __post_init__(self):
        X = np.array(self.features, dtype=float)
        labels = tuple(self.labels)
        n = len(labels)
        C = self.channel_count
        if X.size == 0 and n == 0:
            if C is None:
                C = X.shape[1] if X.ndim == 2 else 0
            X = np.zeros((0, C))
        if X.ndim != 2 or X.shape[0] != n:
            raise StructuralError(f"features shape {X.shape} does not match {n} labels")
        if C is None:
            C = X.shape[1]
        if X.shape[1] != C:
            raise StructuralError(f"features have {X.shape[1]} channels, expected {C}")
        blocks = np.array(self.blocks, dtype=np.int64).reshape(-1)
        if blocks.shape[0] != n:
            raise StructuralError("one block id per sample is required")
        if n and blocks.min() < 0:
            raise StructuralError("block ids must be nonnegative")
        t = self.timestamps
        t = np.arange(n, dtype=float) if t is None else np.array(t, dtype=float).reshape(-1)
        if t.shape[0] != n:
            raise StructuralError("one timestamp per sample is required")
        for lab in set(labels):
            check_label(lab)
        if self.class_list is None:
            classes = tuple(dict.fromkeys(labels))
        else:
            classes = tuple(self.class_list)
            missing = set(labels) - set(classes)
            if missing:
                raise StructuralError(f"labels {sorted(missing)} missing from class_list")
        block_label: dict[int, str] = {}
        for b, lab in zip(blocks.tolist(), labels):
            prev = block_label.setdefault(b, lab)
            if prev != lab:
                raise StructuralError(f"block {b} mixes labels {prev!r} and {lab!r}")
        for arr in (X, blocks, t):
            arr.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "class_list", classes)
        object.__setattr__(self, "channel_count", int(C))

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self) -> Iterator[LabeledSample]:
        for i in range(len(self)):
            yield LabeledSample(self.features[i], self.labels[i], int(self.blocks[i]),
                                float(self.timestamps[i]))

    def __eq__(self, other):
        if not isinstance(other, TrainingSet):
            return NotImplemented
        return (self.labels == other.labels and self.class_list == other.class_list
                and self.channel_count == other.channel_count
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.blocks, other.blocks)
                and np.array_equal(self.timestamps, other.timestamps))

    @property
    def codes(self) -> np.ndarray:
        """Label of each sample as an index into ``class_list``."""
        index = {c: i for i, c in enumerate(self.class_list)}
        return np.fromiter((index[l] for l in self.labels), dtype=np.int64, count=len(self))

    @property
    def block_ids(self) -> list[int]:
        return sorted(set(self.blocks.tolist()))

    def block_label(self, block: int) -> str:
        i = int(np.flatnonzero(self.blocks == block)[0])
        return self.labels[i]

    def subset(self, mask) -> "TrainingSet":
        """Rows selected by a boolean mask or index array; class_list is kept."""
        idx = np.arange(len(self))[mask]
        return TrainingSet(self.features[idx], tuple(self.labels[i] for i in idx),
                           self.blocks[idx], self.timestamps[idx], self.class_list,
                           self.channel_count)

    def class_rows(self, label: str) -> np.ndarray:
        return self.features[np.fromiter((l == label for l in self.labels), dtype=bool,
                                         count=len(self))]

    def normalized(self) -> "TrainingSet":
        X, _ = normalize_rows(self.features)
        return TrainingSet(X, self.labels, self.blocks, self.timestamps, self.class_list,
                           self.channel_count)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.features).tobytes())
        h.update("\x1f".join(self.labels).encode())
        h.update(self.blocks.tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class StreamTrial:
    stimulus_label: str
    stimulus_level: float
    samples: np.ndarray
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        X = np.array(self.samples, dtype=float)
        if X.ndim != 2 or X.shape[0] == 0:
            raise StructuralError("a trial needs a nonempty (n, channels) array")
        if not 0.0 < self.stimulus_level <= 1.0:
            raise StructuralError(f"stimulus level {self.stimulus_level} outside (0, 1]")
        check_label(self.stimulus_label)
        t = self.timestamps
        t = np.arange(X.shape[0], dtype=float) if t is None else np.array(t, dtype=float)
        if t.shape != (X.shape[0],):
            raise StructuralError("one timestamp per trial sample is required")
        object.__setattr__(self, "samples", X)
        object.__setattr__(self, "timestamps", t)

    def __len__(self):
        return self.samples.shape[0]


# --- CSV -------------------------------------------------------------------

def _channel_header(C: int) -> list[str]:
    return [f"ch{i}" for i in range(C)]


def _parse_header(header: list[str], tail: list[str], path) -> int:
    if len(header) < 2 + len(tail) or header[0] != "t" or header[-len(tail):] != tail:
        raise ParseError(f"{path}: expected header t,ch0..,{','.join(tail)}", 1)
    chans = header[1:-len(tail)]
    if chans != _channel_header(len(chans)):
        raise ParseError(f"{path}: channel columns must be ch0..ch{len(chans) - 1}", 1)
    return len(chans)


def _float(text: str, line: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"not a number: {text!r}", line) from None


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: missing header", 1)
    return rows


def load_csv(path) -> TrainingSet:
    """Read a labeled CSV (``t,ch0..chN,label,block``)."""
    rows = _read_rows(path)
    C = _parse_header(rows[0], ["label", "block"], path)
    X, labels, blocks, t = [], [], [], []
    block_label: dict[int, str] = {}
    for line, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != C + 3:
            raise ParseError(f"expected {C + 3} fields, got {len(row)}", line)
        t.append(_float(row[0], line))
        X.append([_float(v, line) for v in row[1:C + 1]])
        label = row[C + 1]
        if not _LABEL_RE.match(label):
            raise ParseError(f"invalid label {label!r}", line)
        try:
            block = int(row[C + 2])
        except ValueError:
            raise ParseError(f"block id {row[C + 2]!r} is not an integer", line) from None
        if block < 0:
            raise ParseError(f"negative block id {block}", line)
        if block_label.setdefault(block, label) != label:
            raise ParseError(f"block {block} mixes labels {block_label[block]!r} and {label!r}", line)
        labels.append(label)
        blocks.append(block)
    return TrainingSet(np.array(X, dtype=float).reshape(len(labels), C), tuple(labels),
                       np.array(blocks, dtype=np.int64), np.array(t, dtype=float),
                       channel_count=C)


def dumps_csv(ts: TrainingSet) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", *_channel_header(ts.channel_count), "label", "block"])
    for i in range(len(ts)):
        w.writerow([fmt(ts.timestamps[i]), *map(fmt, ts.features[i]), ts.labels[i],
                    int(ts.blocks[i])])
    return buf.getvalue()


def save_csv(ts: TrainingSet, path) -> None:
    Path(path).write_text(dumps_csv(ts), encoding="utf-8", newline="")


def save_trial_csv(trial: StreamTrial, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    C = trial.samples.shape[1]
    w.writerow(["t", *_channel_header(C), "stimulus", "level"])
    level = fmt(trial.stimulus_level)
    for t, row in zip(trial.timestamps, trial.samples):
        w.writerow([fmt(t), *map(fmt, row), trial.stimulus_label, level])
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


def load_trial_csv(path) -> StreamTrial:
    rows = _read_rows(path)
    C = _parse_header(rows[0], ["stimulus", "level"], path)
    body = [(line, r) for line, r in enumerate(rows[1:], start=2) if r]
    if not body:
        raise ParseError(f"{path}: trial has no samples", 2)
    X, t = [], []
    stim = level = None
    for line, row in body:
        if len(row) != C + 3:
            raise ParseError(f"expected {C + 3} fields, got {len(row)}", line)
        t.append(_float(row[0], line))
        X.append([_float(v, line) for v in row[1:C + 1]])
        if stim is None:
            stim, level = row[C + 1], _float(row[C + 2], line)
        elif row[C + 1] != stim or _float(row[C + 2], line) != level:
            raise ParseError("stimulus and level must be constant within a trial file", line)
    try:
        return StreamTrial(stim, level, np.array(X), np.array(t))
    except StructuralError as exc:
        raise ParseError(f"{path}: {exc}") from None


def load_stream(path) -> tuple[np.ndarray, np.ndarray, list[str], list[list[str]]]:
    """Read any CSV whose leading columns are ``t,ch0..chN``.

    Returns timestamps, the (n, channels) array, the trailing column names
    and the trailing cell values per row (passed through untouched).
    """
    rows = _read_rows(path)
    header = rows[0]
    if not header or header[0] != "t":
        raise ParseError(f"{path}: first column must be t", 1)
    C = 0
    while 1 + C < len(header) and header[1 + C] == f"ch{C}":
        C += 1
    if C == 0:
        raise ParseError(f"{path}: no channel columns", 1)
    tail_names = header[1 + C:]
    t, X, tails = [], [], []
    for line, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line)
        t.append(_float(row[0], line))
        X.append([_float(v, line) for v in row[1:1 + C]])
        tails.append(row[1 + C:])
    return (np.array(t, dtype=float), np.array(X, dtype=float).reshape(len(t), C),
            tail_names, tails)


def save_stream(path, t, X, tail_names: Sequence[str] = (), tails=None) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    X = np.asarray(X, dtype=float)
    w.writerow(["t", *_channel_header(X.shape[1]), *tail_names])
    for i in range(X.shape[0]):
        w.writerow([fmt(t[i]), *map(fmt, X[i]), *(tails[i] if tails else [])])
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


# --- synthetic data --------------------------------------------------------

def default_patterns(channels: int = 8, classes: Sequence[str] = GESTURES[1:]) -> dict:
    """Distinct nonnegative activation patterns, one per non-rest gesture.

    Each gesture activates a different arc of the electrode ring; two of
    them add a secondary lobe so no pattern is a rotation of another.
    """
    pos = np.arange(channels)
    out = {}
    for i, label in enumerate(classes):
        center = (i * channels / max(len(classes), 1)) % channels
        ang = 2 * np.pi * (pos - center) / channels
        p = 0.15 + np.maximum(np.cos(ang), 0.0) ** 2
        if i % 3 == 1:
            p = p + 0.5 * np.maximum(np.cos(ang - np.pi * 0.75), 0.0)
        out[label] = np.round(p * (1.0 + 0.25 * i), 6)
    return out


@dataclass(frozen=True)
class SynthConfig:
    """Generator configuration.

    Non-rest samples are ``level * pattern + N(0, sigma)``; rest samples are
    ``|N(0, sigma)|``.  Training data is captured at level 1.
    """

    patterns: Mapping[str, Sequence[float]] = field(default_factory=default_patterns)
    sigma: float = 0.05
    samples_per_block: int = 400
    blocks_per_class: int = 4
    trial_samples: int = 400
    levels: tuple = (1 / 3, 2 / 3, 1.0)
    sample_rate_hz: float = 200.0
    rest_label: str = REST
    include_rest: bool = True

    def validate(self) -> None:
        if not self.sigma >= 0:
            raise ConfigurationError(f"sigma must be >= 0, got {self.sigma}")
        if not self.patterns:
            raise ConfigurationError("at least one activation pattern is required")
        widths = set()
        for label, p in self.patterns.items():
            check_label(label)
            p = np.asarray(p, dtype=float)
            if p.ndim != 1 or p.size == 0:
                raise ConfigurationError(f"pattern for {label!r} is empty")
            if np.any(p < 0):
                raise ConfigurationError(f"pattern for {label!r} has negative entries")
            widths.add(p.size)
        if len(widths) != 1:
            raise ConfigurationError("all patterns need the same channel count")
        if self.samples_per_block < 1 or self.blocks_per_class < 1 or self.trial_samples < 1:
            raise ConfigurationError("sample and block counts must be >= 1")
        for lv in self.levels:
            if not 0 < lv <= 1:
                raise ConfigurationError(f"trial level {lv} outside (0, 1]")

    @property
    def channel_count(self) -> int:
        return len(next(iter(self.patterns.values())))

    @property
    def class_list(self) -> tuple:
        rest = (self.rest_label,) if self.include_rest else ()
        return rest + tuple(l for l in self.patterns if l != self.rest_label)


def _draw(rng, label, level, n, cfg: SynthConfig) -> np.ndarray:
    noise = rng.normal(0.0, 1.0, size=(n, cfg.channel_count)) * cfg.sigma
    if label == cfg.rest_label:
        return np.abs(noise)
    return level * np.asarray(cfg.patterns[label], dtype=float) + noise


def synthesize(cfg: SynthConfig | None = None, seed: int = 42
               ) -> tuple[TrainingSet, list[StreamTrial]]:
    """Generate a block-structured training set and trials at each level.

    Blocks are laid out in capture order (repetition-major, class-minor) and
    numbered consecutively.  Deterministic under ``seed``.
    """
    cfg = cfg or SynthConfig()
    cfg.validate()
    rng = np.random.default_rng(seed)
    classes = cfg.class_list
    n = cfg.samples_per_block
    parts, labels, blocks = [], [], []
    for rep in range(cfg.blocks_per_class):
        for ci, label in enumerate(classes):
            parts.append(_draw(rng, label, 1.0, n, cfg))
            labels.extend([label] * n)
            blocks.extend([rep * len(classes) + ci] * n)
    X = np.vstack(parts)
    t = np.arange(X.shape[0]) / cfg.sample_rate_hz
    ts = TrainingSet(X, tuple(labels), np.array(blocks), t, classes)
    trials = []
    tt = np.arange(cfg.trial_samples) / cfg.sample_rate_hz
    for label in classes:
        if label == cfg.rest_label:
            continue
        for level in cfg.levels:
            trials.append(StreamTrial(label, float(level),
                                      _draw(rng, label, level, cfg.trial_samples, cfg), tt))
    return ts, trials


def synthesize_raw(cfg: SynthConfig | None = None, seed: int = 42
                   ) -> tuple[TrainingSet, list[StreamTrial]]:
    """Raw-signal counterpart of :func:`synthesize`.

    Each envelope value ``a`` becomes ``a * sqrt(pi/2) * N(0, 1)``, whose
    rectified mean is ``|a|``, so the linear envelope of the output tracks
    the :func:`synthesize` data for the same seed.
    """
    ts, trials = synthesize(cfg, seed)
    rng = np.random.default_rng([seed, 1])
    gain = math.sqrt(math.pi / 2)

    def carrier(X):
        return X * gain * rng.normal(size=X.shape)

    raw = TrainingSet(carrier(ts.features), ts.labels, ts.blocks, ts.timestamps, ts.class_list)
    raw_trials = [StreamTrial(tr.stimulus_label, tr.stimulus_level, carrier(tr.samples),
                              tr.timestamps) for tr in trials]
    return raw, raw_trials
