"""Rest magnitude thresholding and linear proportionality scaling.

Magnitudes are channel means of the unnormalized envelope.  A sample is
rest unless its magnitude exceeds ``t = g * t0``, with ``t0`` the mean rest
magnitude seen in training.  Above the threshold the kNN vote runs over
non-rest references only, and the winning class is scaled by::

    s(m) = (m - m0) / (m_max[class] - m0),   m0 = t / v,

clamped to [0, 1].  ``v = inf`` removes the offset.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .classifier import KnnModel, classify, classify_1nn
from .dataset import REST, TrainingSet, magnitude, magnitudes
from .errors import ConfigurationError, ModelFitError, StructuralError


@dataclass(frozen=True)
class ProportionalModel:
    t0: float
    g: float
    v: float
    m_max: dict = field(default_factory=dict)
    rest_label: str = REST

    def __post_init__(self):
        if not self.t0 >= 0:
            raise ConfigurationError(f"t0 must be >= 0, got {self.t0}")
        if not self.g >= 1:
            raise ConfigurationError(f"g must be >= 1, got {self.g}")
        if not self.v > 0:
            raise ConfigurationError(f"v must be > 0 or inf, got {self.v}")
        object.__setattr__(self, "m_max", dict(self.m_max))
        for label, mm in self.m_max.items():
            if not mm > self.m0:
                raise ModelFitError(
                    f"class {label!r}: mean magnitude {mm} does not exceed offset {self.m0}")

    @property
    def t(self) -> float:
        return self.g * self.t0

    @property
    def m0(self) -> float:
        return 0.0 if math.isinf(self.v) else self.t / self.v


@dataclass(frozen=True)
class Prediction:
    label: str
    scale: float


def fit_proportional(ts: TrainingSet, g: float = 2.5, v: float = 5.0,
                     rest_label: str = REST) -> ProportionalModel:
    """Mean rest magnitude and per-class mean magnitudes from training data.

    Raises:
        ModelFitError: no rest samples, no gesture classes, or a class whose
            mean magnitude does not exceed the scaling offset.
    """
    m = magnitudes(ts.features)
    is_rest = np.array([l == rest_label for l in ts.labels], dtype=bool)
    if not is_rest.any():
        raise ModelFitError(f"no {rest_label!r} samples to estimate the rest level")
    t0 = float(np.mean(m[is_rest]))
    m_max = {}
    labels = np.array(ts.labels, dtype=object)
    for c in ts.class_list:
        if c == rest_label:
            continue
        sel = labels == c
        if sel.any():
            m_max[c] = float(np.mean(m[sel]))
    if not m_max:
        raise ModelFitError("at least one non-rest class is required")
    return ProportionalModel(t0, float(g), float(v), m_max, rest_label)


def is_rest(model: ProportionalModel, m: float) -> bool:
    """Rest unless the magnitude strictly exceeds the threshold."""
    return m <= model.t


def scale(model: ProportionalModel, label: str, m: float) -> float:
    try:
        mm = model.m_max[label]
    except KeyError:
        raise StructuralError(f"no magnitude maximum for class {label!r}") from None
    m0 = model.m0
    s = (m - m0) / (mm - m0)
    return min(max(s, 0.0), 1.0)


def predict_proportional(knn: KnnModel, prop: ProportionalModel, sample) -> Prediction:
    """Rest gate, then kNN over non-rest references, then magnitude scaling."""
    x = np.asarray(sample, dtype=float)
    if x.shape != (knn.channel_count,):
        raise StructuralError(f"sample shape {x.shape} does not match {knn.channel_count} channels")
    m = magnitude(x)
    if is_rest(prop, m):
        return Prediction(prop.rest_label, 0.0)
    active = knn.without(prop.rest_label) if prop.rest_label in knn.labels else knn
    query = active.prepare(x)
    label = classify_1nn(active, query) if active.config.k == 1 else classify(active, query)
    if label == prop.rest_label:
        return Prediction(prop.rest_label, 0.0)
    return Prediction(label, scale(prop, label, m))
