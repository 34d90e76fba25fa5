"""Block-wise cross-validation, parameter sweeps, target-achievement replay
and latency benchmarking."""
from __future__ import annotations

import csv
import gc
import io
import itertools
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .classifier import KnnConfig, KnnModel, classify, classify_1nn, sorted_neighbors, vote
from .dataset import StreamTrial, TrainingSet, fmt, magnitudes
from .errors import ConfigurationError
from .proportional import ProportionalModel, scale

DEFAULT_TAT_MARGIN = 0.15


def default_dwell(sample_rate_hz: float = 200.0, seconds: float = 0.5) -> int:
    return max(1, int(round(sample_rate_hz * seconds)))


# --- cross-validation ------------------------------------------------------

@dataclass(frozen=True)
class Fold:
    held_out: int
    train_idx: np.ndarray
    test_idx: np.ndarray


def logo_splits(ts: TrainingSet) -> Iterator[Fold]:
    """One fold per block id (ascending): that block is the test set."""
    blocks = ts.blocks
    ids = ts.block_ids
    if len(ids) < 2:
        raise ConfigurationError(f"cross-validation needs >= 2 blocks, got {len(ids)}")
    for b in ids:
        test = blocks == b
        yield Fold(b, np.flatnonzero(~test), np.flatnonzero(test))


def k_from_rel(k_rel: float, n_train: int) -> int:
    """Absolute k: round half up, at least 1, at most the fold size."""
    if not 0 < k_rel <= 1:
        raise ConfigurationError(f"k_rel must lie in (0, 1], got {k_rel}")
    return min(max(1, math.floor(k_rel * n_train + 0.5)), n_train)


@dataclass
class CvReport:
    held_out: list = field(default_factory=list)
    accuracies: list = field(default_factory=list)
    train_blocks: list = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies)) if self.accuracies else float("nan")


def logo_cv(ts: TrainingSet, config: KnnConfig, k_rel: float | None = None,
            ridge: float | None = None) -> CvReport:
    """Leave-one-group-out accuracy; ``k_rel`` overrides ``config.k`` per fold."""
    report = CvReport()
    for fold in logo_splits(ts):
        n_train = fold.train_idx.size
        k = config.k if k_rel is None else k_from_rel(k_rel, n_train)
        if k > n_train:
            raise ConfigurationError(
                f"k={k} exceeds the {n_train} training samples of fold {fold.held_out}")
        cfg = KnnConfig(k, config.metric, config.weighting, config.normalize_inputs)
        model = KnnModel.fit(ts.subset(fold.train_idx), cfg, ridge)
        Q = model.prepare(ts.features[fold.test_idx])
        idx, d = sorted_neighbors(model, Q, k)
        pred = vote(model.codes[idx], d, cfg.weighting, len(model.class_list))
        truth = ts.codes[fold.test_idx]
        report.held_out.append(fold.held_out)
        report.accuracies.append(float(np.mean(pred == truth)))
        report.train_blocks.append(tuple(sorted(set(ts.blocks[fold.train_idx].tolist()))))
    return report


@dataclass(frozen=True)
class SweepGrid:
    k_rels: tuple = (0.001, 0.01, 0.05, 0.1, 0.25, 0.5)
    metrics: tuple = ("euclidean",)
    exponents: tuple = (0.0, 0.5, 1.0, 2.0)
    normalize_inputs: bool = True

    def __post_init__(self):
        if not (self.k_rels and self.metrics and self.exponents):
            raise ConfigurationError("sweep grid must be nonempty in every dimension")
        for kr in self.k_rels:
            k_from_rel(kr, 1)
        for m in self.metrics:
            KnnConfig(1, m, 0.0)
        for e in self.exponents:
            KnnConfig(1, "euclidean", e)


@dataclass(frozen=True)
class SweepRow:
    k_rel: float
    metric: str
    exponent: float
    accuracy: float


def _sweep_metric(ts: TrainingSet, grid: SweepGrid, metric: str, ridge) -> dict:
    acc = {(kr, e): [] for kr in grid.k_rels for e in grid.exponents}
    for fold in logo_splits(ts):
        model = KnnModel.fit(ts.subset(fold.train_idx),
                             KnnConfig(1, metric, 0.0, grid.normalize_inputs), ridge)
        Q = model.prepare(ts.features[fold.test_idx])
        n_train = fold.train_idx.size
        k_max = max(k_from_rel(kr, n_train) for kr in grid.k_rels)
        idx, d = sorted_neighbors(model, Q, k_max)
        codes = model.codes[idx]
        truth = ts.codes[fold.test_idx]
        for kr in grid.k_rels:
            k = k_from_rel(kr, n_train)
            for e in grid.exponents:
                pred = vote(codes[:, :k], d[:, :k], e, len(model.class_list))
                acc[kr, e].append(float(np.mean(pred == truth)))
    return acc


def sweep(ts: TrainingSet, grid: SweepGrid, max_workers: int | None = None,
          ridge: float | None = None) -> list[SweepRow]:
    """Cross-validated accuracy for every grid cell, in grid order.

    Per fold the neighbour ordering is computed once per metric and reused
    for every k and weighting, so each cell equals :func:`logo_cv`.
    """
    if max_workers and max_workers > 1:
        with ThreadPoolExecutor(max_workers) as ex:
            per_metric = list(ex.map(lambda m: _sweep_metric(ts, grid, m, ridge), grid.metrics))
    else:
        per_metric = [_sweep_metric(ts, grid, m, ridge) for m in grid.metrics]
    rows = []
    for kr, (mi, metric), e in itertools.product(grid.k_rels, enumerate(grid.metrics),
                                                 grid.exponents):
        rows.append(SweepRow(kr, metric, e, float(np.mean(per_metric[mi][kr, e]))))
    return rows


# --- online replay ---------------------------------------------------------

def predict_many(knn: KnnModel, prop: ProportionalModel, X) -> tuple[list[str], np.ndarray]:
    """Vectorized :func:`~myoknn.proportional.predict_proportional` over rows."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    m = magnitudes(X)
    labels = [prop.rest_label] * X.shape[0]
    scales = np.zeros(X.shape[0])
    active_rows = np.flatnonzero(m > prop.t)
    if active_rows.size:
        active = knn.without(prop.rest_label) if prop.rest_label in knn.labels else knn
        Q = active.prepare(X[active_rows])
        idx, d = sorted_neighbors(active, Q, active.config.k)
        win = vote(active.codes[idx], d, active.config.weighting, len(active.class_list))
        for r, c in zip(active_rows, win):
            label = active.class_list[c]
            if label != prop.rest_label:
                labels[r] = label
                scales[r] = scale(prop, label, m[r])
    return labels, scales


@dataclass
class TatResult:
    flags: list
    margin: float
    dwell: int

    @property
    def rate(self) -> float:
        return sum(self.flags) / len(self.flags) if self.flags else float("nan")


def trial_success(labels: Sequence[str], scales, stimulus: str, level: float,
                  margin: float, dwell: int) -> bool:
    run = 0
    for lab, s in zip(labels, scales):
        if lab == stimulus and abs(s - level) <= margin:
            run += 1
            if run >= dwell:
                return True
        else:
            run = 0
    return False


def tat_replay(knn: KnnModel, prop: ProportionalModel, trials: Sequence[StreamTrial],
               margin: float = DEFAULT_TAT_MARGIN, dwell: int | None = None) -> TatResult:
    """Offline target-achievement test: a trial succeeds once ``dwell``
    consecutive predictions match the stimulus class within ``margin`` of
    its level."""
    dwell = default_dwell() if dwell is None else int(dwell)
    if dwell < 1:
        raise ConfigurationError(f"dwell must be >= 1, got {dwell}")
    flags = []
    for tr in trials:
        labels, scales = predict_many(knn, prop, tr.samples)
        flags.append(trial_success(labels, scales, tr.stimulus_label, tr.stimulus_level,
                                   margin, dwell))
    return TatResult(flags, margin, dwell)


# --- latency ---------------------------------------------------------------

@dataclass
class LatencyReport:
    name: str
    n: int
    times: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.times))

    @property
    def median(self) -> float:
        return float(np.median(self.times))

    @property
    def p99(self) -> float:
        return float(np.percentile(self.times, 99))


def bench_latency(model: KnnModel, queries, warmup: int = 100, reps: int = 1000,
                  name: str = "model") -> LatencyReport:
    """Per-call wall-clock time of single-sample classification.

    Times :func:`classify_1nn` for k=1 models, :func:`classify` otherwise.
    Queries are cycled and used as given.
    """
    if reps < 1000:
        raise ConfigurationError(f"reps must be >= 1000, got {reps}")
    Q = np.atleast_2d(np.asarray(queries, dtype=float))
    fn = classify_1nn if model.config.k == 1 else classify
    nq = Q.shape[0]
    for i in range(warmup):
        fn(model, Q[i % nq])
    times = np.empty(reps)
    clock = time.perf_counter
    gc_was = gc.isenabled()
    gc.disable()
    try:
        for i in range(reps):
            q = Q[i % nq]
            t0 = clock()
            fn(model, q)
            times[i] = clock() - t0
    finally:
        if gc_was:
            gc.enable()
    return LatencyReport(name, len(model), times)


# --- CSV reports -----------------------------------------------------------

def _write(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


def write_cv_csv(report: CvReport, path) -> None:
    _write(path, ["fold", "accuracy"],
           [[b, fmt(a)] for b, a in zip(report.held_out, report.accuracies)])


def write_sweep_csv(rows: Sequence[SweepRow], path) -> None:
    _write(path, ["k_rel", "metric", "exponent", "accuracy"],
           [[fmt(r.k_rel), r.metric, fmt(r.exponent), fmt(r.accuracy)] for r in rows])


def write_tat_csv(result: TatResult, trials: Sequence[StreamTrial], path) -> None:
    _write(path, ["trial", "stimulus", "level", "success"],
           [[i, tr.stimulus_label, fmt(tr.stimulus_level), int(ok)]
            for i, (tr, ok) in enumerate(zip(trials, result.flags))])


def write_latency_csv(reports: Sequence[LatencyReport], path) -> None:
    _write(path, ["model", "n", "mean_s", "median_s", "p99_s"],
           [[r.name, r.n, fmt(r.mean), fmt(r.median), fmt(r.p99)] for r in reports])
