"""Nearest-neighbour classification over a reference sample set.

Neighbours are ranked by distance with ties going to the lower reference
index.  Each of the k nearest votes with weight ``d ** -exponent``
(exponent 0 means weight 1) and the class with the largest weight sum
wins.  Two deterministic rules cover the cases a plain weighted vote
leaves open:

* with a positive exponent, if any neighbour sits at distance 0 only the
  zero-distance neighbours vote, unweighted; equal counts go to the class
  of the lowest-index neighbour;
* equal weight sums go to the class whose nearest member is closest, then
  to the earlier class in ``class_list``.

:func:`classify_1nn` is the k=1 path: one linear scan keeping the running
minimum, no sorting.  It is plain Python over tuples on purpose, so its
per-call cost is proportional to the number of references with almost no
fixed overhead, which is what makes small prototype sets cheap.
"""
from __future__ import annotations

import math
import operator
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import TrainingSet, normalize, normalize_rows
from .errors import ConfigurationError, NumericalError, StructuralError

METRICS = ("manhattan", "euclidean", "chebyshev", "mahalanobis")

# rows of the query chunk times references times channels kept per pass
_CHUNK_ELEMS = 1 << 22


@dataclass(frozen=True)
class KnnConfig:
    k: int = 1
    metric: str = "euclidean"
    weighting: float = 2.0
    normalize_inputs: bool = True

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ConfigurationError(f"k must be a positive integer, got {self.k}")
        if self.metric not in METRICS:
            raise ConfigurationError(f"unknown metric {self.metric!r}; choose from {METRICS}")
        if not self.weighting >= 0:
            raise ConfigurationError(f"weighting exponent must be >= 0, got {self.weighting}")
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "weighting", float(self.weighting))


# --- distances -------------------------------------------------------------

def _check_inv_cov(metric, inv_cov, dim):
    if metric == "mahalanobis":
        if inv_cov is None:
            raise ConfigurationError("mahalanobis distance needs an inverse covariance matrix")
        if np.shape(inv_cov) != (dim, dim):
            raise StructuralError(f"inverse covariance must be {dim}x{dim}")
    elif metric not in METRICS:
        raise ConfigurationError(f"unknown metric {metric!r}")


def distance(metric: str, a, b, inv_cov=None) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise StructuralError(f"dimension mismatch: {a.shape} vs {b.shape}")
    _check_inv_cov(metric, inv_cov, a.shape[0])
    diff = a - b
    if metric == "manhattan":
        return float(np.abs(diff).sum())
    if metric == "euclidean":
        return float(np.sqrt(np.dot(diff, diff)))
    if metric == "chebyshev":
        return float(np.abs(diff).max())
    q = float(diff @ np.asarray(inv_cov, dtype=float) @ diff)
    return math.sqrt(max(q, 0.0))


def pairwise_distances(metric: str, Q, R, inv_cov=None) -> np.ndarray:
    """(len(Q), len(R)) distance matrix, computed from explicit differences
    so identical vectors are at distance exactly 0."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.asarray(R, dtype=float)
    if Q.shape[1] != R.shape[1]:
        raise StructuralError(f"dimension mismatch: {Q.shape[1]} vs {R.shape[1]}")
    _check_inv_cov(metric, inv_cov, R.shape[1])
    out = np.empty((Q.shape[0], R.shape[0]))
    step = max(1, _CHUNK_ELEMS // max(1, R.size))
    for s in range(0, Q.shape[0], step):
        diff = Q[s:s + step, None, :] - R[None, :, :]
        if metric == "manhattan":
            out[s:s + step] = np.abs(diff).sum(axis=2)
        elif metric == "euclidean":
            out[s:s + step] = np.sqrt(np.einsum("qnc,qnc->qn", diff, diff))
        elif metric == "chebyshev":
            out[s:s + step] = np.abs(diff).max(axis=2)
        else:
            quad = np.einsum("qnc,cd,qnd->qn", diff, inv_cov, diff)
            out[s:s + step] = np.sqrt(np.maximum(quad, 0.0))
    return out


def default_ridge(cov: np.ndarray) -> float:
    return 1e-6 * float(np.trace(cov)) / cov.shape[0]


def covariance(X) -> np.ndarray:
    """Pooled covariance of all rows (divisor n-1, or 1 for a single row)."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] == 0:
        raise StructuralError("covariance of an empty set")
    D = X - X.mean(axis=0)
    return D.T @ D / max(X.shape[0] - 1, 1)


def inverse_covariance(data, ridge: float | None = 0.0) -> np.ndarray:
    """Inverse of the pooled covariance plus ``ridge * I``.

    ``data`` is a :class:`TrainingSet` or an (n, channels) array; all classes
    are pooled.  ``ridge=None`` selects ``1e-6 * trace / dim``.

    Raises:
        NumericalError: if the regularized covariance is not positive definite.
    """
    X = data.features if isinstance(data, TrainingSet) else np.asarray(data, dtype=float)
    cov = covariance(X)
    if ridge is None:
        ridge = default_ridge(cov)
    if ridge < 0:
        raise ConfigurationError(f"ridge must be >= 0, got {ridge}")
    A = cov + ridge * np.eye(cov.shape[0])
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise NumericalError("covariance is singular; increase the ridge") from None
    if np.linalg.cond(A) > 1e12:
        raise NumericalError("covariance is numerically singular; increase the ridge")
    Linv = np.linalg.solve(L, np.eye(A.shape[0]))
    inv = Linv.T @ Linv
    return (inv + inv.T) / 2.0


# --- model -----------------------------------------------------------------

def _mahalanobis_scalar(inv_cov):
    rows = [tuple(map(float, r)) for r in np.asarray(inv_cov)]

    def dist(r, q):
        d = [a - b for a, b in zip(r, q)]
        s = 0.0
        for di, row in zip(d, rows):
            s += di * sum(map(operator.mul, row, d))
        return math.sqrt(s) if s > 0.0 else 0.0
    return dist


def _scalar_distance(metric, inv_cov):
    if metric == "euclidean":
        return math.dist
    if metric == "manhattan":
        return lambda r, q: sum(map(abs, map(operator.sub, r, q)))
    if metric == "chebyshev":
        return lambda r, q: max(map(abs, map(operator.sub, r, q)))
    return _mahalanobis_scalar(inv_cov)


class KnnModel:
    """Reference samples plus configuration; immutable once built.

    ``references`` are stored as given, so callers pass normalized rows when
    ``config.normalize_inputs`` is set (:meth:`fit` does this).  Queries go
    through :meth:`prepare` first.
    """

    def __init__(self, references, labels: Sequence[str], config: KnnConfig,
                 inv_cov=None, class_list: Sequence[str] | None = None, blocks=None):
        R = np.array(references, dtype=float)
        labels = tuple(labels)
        if R.ndim != 2 or R.shape[0] == 0:
            raise StructuralError("empty model: at least one reference is required")
        if R.shape[0] != len(labels):
            raise StructuralError("one label per reference is required")
        if config.k > R.shape[0]:
            raise ConfigurationError(f"k={config.k} exceeds {R.shape[0]} references")
        if (config.metric == "mahalanobis") != (inv_cov is not None):
            raise ConfigurationError("an inverse covariance is required for mahalanobis only")
        if inv_cov is not None:
            inv_cov = np.array(inv_cov, dtype=float)
            if inv_cov.shape != (R.shape[1], R.shape[1]):
                raise StructuralError("inverse covariance shape does not match channels")
            if not np.allclose(inv_cov, inv_cov.T, rtol=0, atol=1e-9):
                raise StructuralError("inverse covariance is not symmetric")
            inv_cov.setflags(write=False)
        classes = tuple(dict.fromkeys(labels)) if class_list is None else tuple(class_list)
        index = {c: i for i, c in enumerate(classes)}
        try:
            codes = np.array([index[l] for l in labels], dtype=np.int64)
        except KeyError as exc:
            raise StructuralError(f"label {exc.args[0]!r} missing from class_list") from None
        R.setflags(write=False)
        self.references = R
        self.labels = labels
        self.codes = codes
        self.class_list = classes
        self.config = config
        self.inv_cov = inv_cov
        self.blocks = (np.arange(len(labels)) if blocks is None
                       else np.asarray(blocks, dtype=np.int64))
        self._rows = tuple(map(tuple, R.tolist()))
        self._dist = _scalar_distance(config.metric, inv_cov)
        self._subsets: dict = {}

    @classmethod
    def fit(cls, ts: TrainingSet, config: KnnConfig, ridge: float | None = None) -> "KnnModel":
        """Normalize (if configured), then compute the inverse covariance
        (if mahalanobis) on the stored references."""
        if len(ts) == 0:
            raise StructuralError("empty model: the training set has no samples")
        R = normalize_rows(ts.features)[0] if config.normalize_inputs else ts.features
        inv = inverse_covariance(R, ridge) if config.metric == "mahalanobis" else None
        return cls(R, ts.labels, config, inv, ts.class_list, ts.blocks)

    def __len__(self) -> int:
        return self.references.shape[0]

    @property
    def channel_count(self) -> int:
        return self.references.shape[1]

    def prepare(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.channel_count:
            raise StructuralError(
                f"query has {x.shape[-1]} channels, model has {self.channel_count}")
        if not self.config.normalize_inputs:
            return x
        return normalize(x) if x.ndim == 1 else normalize_rows(x)[0]

    def without(self, label: str) -> "KnnModel":
        """Same model with every reference of ``label`` dropped (cached)."""
        if label not in self._subsets:
            keep = np.array([l != label for l in self.labels])
            if not keep.any():
                raise StructuralError(f"model holds only {label!r} references")
            k = min(self.config.k, int(keep.sum()))
            cfg = KnnConfig(k, self.config.metric, self.config.weighting,
                            self.config.normalize_inputs)
            classes = tuple(c for c in self.class_list if c != label)
            self._subsets[label] = KnnModel(self.references[keep],
                                            [l for l, m in zip(self.labels, keep) if m],
                                            cfg, self.inv_cov, classes, self.blocks[keep])
        return self._subsets[label]

    def with_config(self, config: KnnConfig) -> "KnnModel":
        return KnnModel(self.references, self.labels, config, self.inv_cov,
                        self.class_list, self.blocks)

    def distances(self, Q) -> np.ndarray:
        return pairwise_distances(self.config.metric, Q, self.references, self.inv_cov)


# --- neighbour search and voting -------------------------------------------

def _check_query(model: KnnModel, query) -> np.ndarray:
    if model is None or len(model) == 0:
        raise StructuralError("empty model")
    q = np.asarray(query, dtype=float)
    if q.shape != (model.channel_count,):
        raise StructuralError(
            f"query shape {q.shape} does not match {model.channel_count} channels")
    return q


def sorted_neighbors(model: KnnModel, Q, k: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Neighbour indices and distances per query row, ascending, ties by index.

    Returns the first ``k`` columns (all references if ``k`` is None).
    """
    D = model.distances(Q)
    order = np.argsort(D, axis=1, kind="stable")
    if k is not None:
        order = order[:, :k]
    return order, np.take_along_axis(D, order, axis=1)


def k_nearest(model: KnnModel, query) -> list[tuple[int, float]]:
    q = _check_query(model, query)
    idx, d = sorted_neighbors(model, q[None, :], model.config.k)
    return [(int(i), float(x)) for i, x in zip(idx[0], d[0])]


def weights(d, exponent: float) -> np.ndarray:
    """Vote weight ``d ** -exponent`` (1 for exponent 0; inf at d = 0)."""
    d = np.asarray(d, dtype=float)
    if exponent == 0:
        return np.ones_like(d)
    with np.errstate(divide="ignore"):
        return d ** -exponent


def vote(codes: np.ndarray, dists: np.ndarray, exponent: float, n_classes: int) -> np.ndarray:
    """Weighted majority vote for each row of sorted neighbour codes/distances.

    Returns the winning class index per row.
    """
    codes = np.asarray(codes, dtype=np.int64)
    dists = np.asarray(dists, dtype=float)
    q, k = codes.shape
    rows = np.repeat(np.arange(q), k)
    flat = codes.ravel()
    first_pos = np.full((q, n_classes), k, dtype=np.int64)
    np.minimum.at(first_pos, (rows, flat), np.tile(np.arange(k), q))
    present = first_pos < k
    first_d = np.where(present, np.take_along_axis(
        dists, np.minimum(first_pos, k - 1), axis=1), np.inf)

    sums = np.zeros((q, n_classes))
    zero_rows = np.zeros(q, dtype=bool)
    if exponent > 0:
        zero = dists == 0.0
        zero_rows = zero[:, 0]
        w = weights(np.where(zero, 1.0, dists), exponent)
    else:
        w = np.ones_like(dists)
    np.add.at(sums, (rows, flat), w.ravel())
    best = sums.max(axis=1, keepdims=True)
    key = np.where(sums == best, first_d, np.inf)
    winner = np.argmax(key == key.min(axis=1, keepdims=True), axis=1)

    if zero_rows.any():
        zr = np.flatnonzero(zero_rows)
        zc = np.zeros((zr.size, n_classes))
        np.add.at(zc, (np.repeat(np.arange(zr.size), k), codes[zr].ravel()),
                  zero[zr].ravel().astype(float))
        zkey = np.where(zc == zc.max(axis=1, keepdims=True), first_pos[zr], k + 1)
        winner[zr] = np.argmin(zkey, axis=1)
    return winner


def classify_many(model: KnnModel, Q) -> list[str]:
    """Classify each row of ``Q`` (rows are used as given, not prepared)."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if Q.shape[1] != model.channel_count:
        raise StructuralError(f"queries have {Q.shape[1]} channels, model {model.channel_count}")
    idx, d = sorted_neighbors(model, Q, model.config.k)
    win = vote(model.codes[idx], d, model.config.weighting, len(model.class_list))
    return [model.class_list[c] for c in win]


def classify(model: KnnModel, query) -> str:
    q = _check_query(model, query)
    return classify_many(model, q[None, :])[0]


def classify_1nn(model: KnnModel, query) -> str:
    """Label of the nearest reference by a single minimum scan.

    Equal distances keep the earlier reference (strict ``<``), matching the
    stable ordering used by :func:`classify`.
    """
    q = tuple(_check_query(model, query).tolist())
    dist = model._dist
    best = math.inf
    best_i = 0
    for i, r in enumerate(model._rows):
        d = dist(r, q)
        if d < best:
            best = d
            best_i = i
    return model.labels[best_i]


def min_search(values) -> int:
    """Index of the first minimum of an iterable, one comparison per item."""
    it = iter(values)
    try:
        best = next(it)
    except StopIteration:
        raise StructuralError("minimum of an empty sequence") from None
    best_i = 0
    for i, v in enumerate(it, start=1):
        if v < best:
            best, best_i = v, i
    return best_i


def regress(model: KnnModel, query, label_vectors) -> np.ndarray:
    """Weighted mean of the k nearest references' label vectors.

    With a positive exponent and a zero-distance neighbour, only the
    zero-distance neighbours are averaged (uniformly).
    """
    q = _check_query(model, query)
    Y = np.asarray(label_vectors, dtype=float)
    if Y.shape[0] != len(model):
        raise StructuralError("one label vector per reference is required")
    idx, d = sorted_neighbors(model, q[None, :], model.config.k)
    idx, d = idx[0], d[0]
    e = model.config.weighting
    if e > 0 and d[0] == 0.0:
        w = (d == 0.0).astype(float)
    else:
        w = weights(d, e)
    return np.tensordot(w, Y[idx], axes=1) / w.sum()
