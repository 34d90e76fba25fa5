"""Plain-text model files for full kNN models and reduced prototype sets.

Layout: ``#`` comment lines, ``key=value`` header lines (no commas), then
one reference per line as ``label,block,ch0,...`` and, for mahalanobis
models, the inverse covariance as ``cov,...`` rows.  Numbers use 9
significant digits, so a file read and written again is byte-identical.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classifier import KnnConfig, KnnModel
from .dataset import REST, check_label, fmt
from .errors import MyoError, ParseError
from .proportional import ProportionalModel
from .reduction import ReductionConfig

MAGIC = "# myoknn model"


@dataclass
class ModelBundle:
    knn: KnnModel
    prop: ProportionalModel | None = None
    reduction: ReductionConfig | None = None
    source: str = ""

    @property
    def is_reduced(self) -> bool:
        return self.reduction is not None


def dumps_model(bundle: ModelBundle) -> str:
    knn, prop, red = bundle.knn, bundle.prop, bundle.reduction
    cfg = knn.config
    out = io.StringIO()
    out.write(MAGIC + "\n")
    head = [("k", cfg.k), ("metric", cfg.metric), ("weighting", fmt(cfg.weighting)),
            ("channels", knn.channel_count), ("normalized", int(cfg.normalize_inputs)),
            ("classes", " ".join(knn.class_list))]
    if prop is not None:
        head += [("rest", prop.rest_label), ("t0", fmt(prop.t0)), ("g", fmt(prop.g)),
                 ("v", fmt(prop.v))]
        head += [(f"mmax.{c}", fmt(v)) for c, v in prop.m_max.items()]
    if red is not None:
        head += [("reduced", red.variant), ("M", red.M), ("I", red.I),
                 ("alpha", fmt(red.alpha)), ("seed", red.seed), ("window", fmt(red.window))]
    if bundle.source:
        head.append(("source", bundle.source))
    for key, val in head:
        out.write(f"{key}={val}\n")
    for label, block, row in zip(knn.labels, knn.blocks, knn.references):
        if label == "cov":
            raise MyoError("label 'cov' is reserved in model files")
        out.write(",".join([label, str(int(block)), *map(fmt, row)]) + "\n")
    if knn.inv_cov is not None:
        for row in knn.inv_cov:
            out.write(",".join(["cov", *map(fmt, row)]) + "\n")
    return out.getvalue()


def save_model(path, bundle: ModelBundle) -> None:
    Path(path).write_text(dumps_model(bundle), encoding="utf-8", newline="")


def _num(text, line, cast=float):
    try:
        return cast(text)
    except ValueError:
        raise ParseError(f"bad number {text!r}", line) from None


def load_model(path) -> ModelBundle:
    text = Path(path).read_text(encoding="utf-8")
    head: dict[str, tuple[str, int]] = {}
    labels, blocks, refs, cov = [], [], [], []
    in_body = False
    for line, raw in enumerate(text.split("\n"), start=1):
        if not raw or raw.startswith("#"):
            continue
        if "," not in raw:
            if in_body:
                raise ParseError("header line after reference rows", line)
            key, sep, val = raw.partition("=")
            if not sep:
                raise ParseError(f"expected key=value, got {raw!r}", line)
            head[key.strip()] = (val.strip(), line)
            continue
        in_body = True
        fields = raw.split(",")
        if fields[0] == "cov":
            cov.append([_num(v, line) for v in fields[1:]])
            continue
        if len(fields) < 3:
            raise ParseError("reference rows need label,block,channels", line)
        try:
            check_label(fields[0])
        except MyoError as exc:
            raise ParseError(str(exc), line) from None
        labels.append(fields[0])
        blocks.append(_num(fields[1], line, int))
        refs.append([_num(v, line) for v in fields[2:]])

    def get(key, cast=str, default=None):
        if key not in head:
            if default is not None:
                return default
            raise ParseError(f"{path}: missing header key {key!r}")
        val, line = head[key]
        return _num(val, line, cast) if cast is not str else val

    C = get("channels", int)
    for line_refs in refs:
        if len(line_refs) != C:
            raise ParseError(f"{path}: reference rows must have {C} channels")
    if cov and (len(cov) != C or any(len(r) != C for r in cov)):
        raise ParseError(f"{path}: inverse covariance must be {C}x{C}")
    try:
        cfg = KnnConfig(get("k", int), get("metric"), get("weighting", float),
                        bool(get("normalized", int)))
        classes = get("classes").split() if "classes" in head else None
        knn = KnnModel(np.array(refs).reshape(len(refs), C), labels, cfg,
                       np.array(cov) if cov else None, classes, blocks)
        prop = None
        if "t0" in head:
            mmax = {k[5:]: _num(v, line) for k, (v, line) in head.items() if k.startswith("mmax.")}
            prop = ProportionalModel(get("t0", float), get("g", float), get("v", float), mmax,
                                     get("rest", default=REST))
        red = None
        if "reduced" in head:
            red = ReductionConfig(get("reduced"), get("M", int), get("I", int),
                                  get("alpha", float), get("seed", int), get("window", float))
    except ParseError:
        raise
    except MyoError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return ModelBundle(knn, prop, red, get("source", default=""))
