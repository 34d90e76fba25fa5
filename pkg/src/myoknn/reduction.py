"""Fixed-size prototype generation with DSM and LVQ3.

Prototypes start at the class centroids; any further prototypes are drawn
round-robin over the classes, uniformly without replacement inside each
class.  Each iteration then visits every training sample in stored order
and moves prototypes online:

* reward:   ``p + alpha * (x - p)``
* penalize: ``p - alpha * (x - p)``

DSM penalizes the nearest prototype when its label differs from the
sample's and rewards the nearest prototype carrying the sample's label.
LVQ3 looks at the two nearest prototypes: inside the window, a split
decision rewards the agreeing one and penalizes the other; if both agree
with the sample, both are rewarded.

Prototypes are only moved, never added or removed, and their labels never
change.  The nearest-prototype search is Euclidean.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .classifier import KnnConfig, KnnModel
from .dataset import TrainingSet
from .errors import ConfigurationError, StructuralError

log = logging.getLogger(__name__)

VARIANTS = ("dsm", "lvq3")


@dataclass(frozen=True)
class ReductionConfig:
    variant: str = "dsm"
    M: int = 7
    I: int = 40
    alpha: float = 0.01
    seed: int = 42
    window: float = 0.3

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if int(self.M) != self.M or self.M < 1:
            raise ConfigurationError(f"M must be a positive integer, got {self.M}")
        if int(self.I) != self.I or self.I < 1:
            raise ConfigurationError(f"I must be a positive integer, got {self.I}")
        if not 0 <= self.alpha < 1:
            raise ConfigurationError(f"alpha must lie in [0, 1), got {self.alpha}")
        if not 0 < self.window < 1:
            raise ConfigurationError(f"window must lie in (0, 1), got {self.window}")
        if self.variant == "lvq3" and self.M < 2:
            raise ConfigurationError("LVQ3 needs at least two prototypes")


@dataclass(frozen=True, eq=False)
class PrototypeSet:
    features: np.ndarray
    labels: tuple
    class_list: tuple
    config: ReductionConfig | None = None
    source: str = ""
    with_replacement: bool = False

    def __post_init__(self):
        P = np.array(self.features, dtype=float)
        if P.ndim != 2 or P.shape[0] != len(self.labels):
            raise StructuralError("one label per prototype is required")
        P.setflags(write=False)
        object.__setattr__(self, "features", P)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "class_list", tuple(self.class_list))

    def __len__(self) -> int:
        return len(self.labels)

    def __eq__(self, other):
        if not isinstance(other, PrototypeSet):
            return NotImplemented
        return (self.labels == other.labels and self.class_list == other.class_list
                and np.array_equal(self.features, other.features))

    @property
    def codes(self) -> np.ndarray:
        index = {c: i for i, c in enumerate(self.class_list)}
        return np.array([index[l] for l in self.labels], dtype=np.int64)

    def to_model(self, config: KnnConfig | None = None, inv_cov=None) -> KnnModel:
        """kNN model over the prototypes (rows used as stored)."""
        config = config or KnnConfig()
        return KnnModel(self.features, self.labels, config, inv_cov, self.class_list)


def reward(p, x, alpha: float) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return p + alpha * (np.asarray(x, dtype=float) - p)


def penalize(p, x, alpha: float) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return p - alpha * (np.asarray(x, dtype=float) - p)


def initialize(ts: TrainingSet, M: int, seed: int = 42) -> PrototypeSet:
    """Class centroids first, then round-robin random picks.

    A class that runs out of distinct samples is sampled with replacement
    and the returned set is flagged ``with_replacement``.
    """
    classes = ts.class_list
    C = len(classes)
    if M < C:
        raise ConfigurationError(f"M < class count ({M} < {C})")
    codes = ts.codes
    members = [np.flatnonzero(codes == ci) for ci in range(C)]
    for label, idx in zip(classes, members):
        if idx.size == 0:
            raise StructuralError(f"class {label!r} has no samples")
    X = ts.features
    rng = np.random.default_rng(seed)
    perms = [rng.permutation(idx.size) for idx in members]
    taken = [0] * C
    rows = [X[idx].mean(axis=0) for idx in members]
    labels = list(classes)
    replaced = False
    for j in range(M - C):
        ci = j % C
        idx = members[ci]
        if taken[ci] < idx.size:
            pick = idx[perms[ci][taken[ci]]]
            taken[ci] += 1
        else:
            pick = idx[rng.integers(idx.size)]
            replaced = True
        rows.append(X[pick])
        labels.append(classes[ci])
    if replaced:
        warnings.warn("a class ran out of distinct samples; sampled with replacement",
                      RuntimeWarning, stacklevel=2)
    return PrototypeSet(np.array(rows), labels, classes, source=ts.fingerprint(),
                        with_replacement=replaced)


# In-place updates on a working (M, channels) array and its label codes.

def _dsm_update(P, pc, x, y, alpha, search="min"):
    diff = P - x
    d2 = np.einsum("ij,ij->i", diff, diff)
    if search == "min":
        i0 = int(np.argmin(d2))
        if pc[i0] == y:
            return
        same = np.flatnonzero(pc == y)
        i_s = int(same[np.argmin(d2[same])]) if same.size else -1
    else:
        order = np.argsort(d2, kind="stable")
        i0 = int(order[0])
        if pc[i0] == y:
            return
        hits = order[pc[order] == y]
        i_s = int(hits[0]) if hits.size else -1
    P[i0] = P[i0] - alpha * (x - P[i0])
    if i_s >= 0:
        P[i_s] = P[i_s] + alpha * (x - P[i_s])


def _in_window(d0: float, d1: float, window: float) -> bool:
    if d1 == 0.0:
        return True
    return d0 / d1 > (1.0 - window) / (1.0 + window)


def _lvq3_update(P, pc, x, y, alpha, window):
    diff = P - x
    d = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    i0 = int(np.argmin(d))
    d0 = d[i0]
    d[i0] = np.inf
    i1 = int(np.argmin(d))
    d1 = d[i1]
    ok0, ok1 = pc[i0] == y, pc[i1] == y
    if ok0 and ok1:
        P[i0] = P[i0] + alpha * (x - P[i0])
        P[i1] = P[i1] + alpha * (x - P[i1])
    elif ok0 != ok1 and _in_window(d0, d1, window):
        good, bad = (i0, i1) if ok0 else (i1, i0)
        P[good] = P[good] + alpha * (x - P[good])
        P[bad] = P[bad] - alpha * (x - P[bad])


def _sample_code(protos: PrototypeSet, label: str) -> int:
    try:
        return protos.class_list.index(label)
    except ValueError:
        return -1


def dsm_step(protos: PrototypeSet, x, label: str, alpha: float,
             search: str = "min") -> PrototypeSet:
    P = np.array(protos.features)
    _dsm_update(P, protos.codes, np.asarray(x, dtype=float), _sample_code(protos, label),
                alpha, search)
    return PrototypeSet(P, protos.labels, protos.class_list, protos.config, protos.source,
                        protos.with_replacement)


def lvq3_step(protos: PrototypeSet, x, label: str, alpha: float,
              window: float = 0.3) -> PrototypeSet:
    if len(protos) < 2:
        raise StructuralError("LVQ3 needs at least two prototypes")
    P = np.array(protos.features)
    _lvq3_update(P, protos.codes, np.asarray(x, dtype=float), _sample_code(protos, label),
                 alpha, window)
    return PrototypeSet(P, protos.labels, protos.class_list, protos.config, protos.source,
                        protos.with_replacement)


def reduce(ts: TrainingSet, config: ReductionConfig | None = None, search: str = "min",
           on_step: Callable[[np.ndarray, np.ndarray], None] | None = None) -> PrototypeSet:
    """Run the configured reduction and return exactly ``config.M`` prototypes.

    Args:
        search: ``"min"`` (two linear minimum searches) or ``"sort"`` (full
            stable sort of prototype distances); DSM only, both give
            bit-identical results.
        on_step: called with the working prototype array and label codes
            after every sample update (instrumentation hook).
    """
    config = config or ReductionConfig()
    if search not in ("min", "sort"):
        raise ConfigurationError(f"unknown search {search!r}")
    init = initialize(ts, config.M, config.seed)
    P = np.array(init.features)
    pc = init.codes
    X = ts.features
    y = ts.codes
    a = config.alpha
    n = X.shape[0]
    for _ in range(config.I):
        if config.variant == "dsm":
            for j in range(n):
                _dsm_update(P, pc, X[j], y[j], a, search)
                if on_step is not None:
                    on_step(P, pc)
        else:
            w = config.window
            for j in range(n):
                _lvq3_update(P, pc, X[j], y[j], a, w)
                if on_step is not None:
                    on_step(P, pc)
    log.debug("reduced %d samples to %d prototypes (%s)", n, config.M, config.variant)
    return PrototypeSet(P, init.labels, init.class_list, config, init.source,
                        init.with_replacement)
