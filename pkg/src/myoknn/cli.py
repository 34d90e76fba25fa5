"""Command-line front end.

Exit codes: 0 success, 1 data/model error, 2 usage error.  Every
subcommand is a pure function of its flags, input files and seed (flag
``--seed``, else ``MYOKNN_SEED``, else 42); ``bench`` output additionally
contains measured times.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .classifier import METRICS, KnnConfig, KnnModel
from .dataset import (GESTURES, REST, SynthConfig, TrainingSet, default_patterns, fmt,
                      load_csv, load_stream, load_trial_csv, save_csv, save_stream,
                      save_trial_csv, synthesize, synthesize_raw)
from .envelope import FilterState, design_butterworth, filter_block
from .errors import MyoError, StructuralError
from .evaluation import (SweepGrid, bench_latency, default_dwell, logo_cv, predict_many,
                         sweep, tat_replay, write_cv_csv, write_latency_csv, write_sweep_csv,
                         write_tat_csv)
from .modelfile import MAGIC, ModelBundle, load_model, save_model
from .proportional import fit_proportional
from .reduction import ReductionConfig, reduce

log = logging.getLogger("myoknn")


def _floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _names(text: str) -> tuple:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("MYOKNN_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise MyoError(f"MYOKNN_SEED must be an integer, got {env!r}") from None
    return 42


def _knn_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--metric", choices=METRICS, default="euclidean")
    p.add_argument("--weighting-exp", type=float, default=2.0)
    p.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--ridge", type=float, default=None,
                   help="covariance ridge for mahalanobis (default 1e-6*trace/dim)")


def _prop_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--g", type=float, default=2.5, help="rest threshold gain")
    p.add_argument("--v", type=float, default=5.0, help="scale offset divisor (inf: no offset)")


def _knn_config(args) -> KnnConfig:
    return KnnConfig(args.k, args.metric, args.weighting_exp, args.normalize)


# --- subcommands -----------------------------------------------------------

def cmd_generate(args) -> int:
    classes = _names(args.classes)
    unknown = [c for c in classes if c not in GESTURES]
    if unknown:
        raise MyoError(f"unknown gestures {unknown}; choose from {GESTURES}")
    gestures = [c for c in classes if c != "rs"]
    cfg = SynthConfig(patterns=default_patterns(8, gestures), sigma=args.sigma,
                      samples_per_block=args.samples_per_block,
                      blocks_per_class=args.blocks_per_class,
                      trial_samples=args.trial_samples, sample_rate_hz=args.rate_hz,
                      include_rest="rs" in classes)
    seed = _seed(args)
    out = Path(args.out_dir)
    (out / "trials").mkdir(parents=True, exist_ok=True)
    (out / "raw_trials").mkdir(parents=True, exist_ok=True)
    ts, trials = synthesize(cfg, seed)
    raw, raw_trials = synthesize_raw(cfg, seed)
    save_csv(ts, out / "train.csv")
    save_csv(raw, out / "raw_train.csv")
    for i, (tr, rtr) in enumerate(zip(trials, raw_trials)):
        save_trial_csv(tr, out / "trials" / f"trial_{i:03d}.csv")
        save_trial_csv(rtr, out / "raw_trials" / f"trial_{i:03d}.csv")
    log.info("wrote %d samples and %d trials to %s", len(ts), len(trials), out)
    return 0


def cmd_filter(args) -> int:
    t, X, tail_names, tails = load_stream(args.input)
    coeffs = design_butterworth(args.cutoff_hz, args.rate_hz)
    # a labeled file holds one capture per block: restart the filter at each block
    if tail_names == ["label", "block"]:
        keys = [row[1] for row in tails]
    else:
        keys = [None] * len(tails)
    out = np.empty_like(X)
    start = 0
    while start < len(keys):
        stop = start
        while stop < len(keys) and keys[stop] == keys[start]:
            stop += 1
        seg_t = t[start:stop]
        if np.any(np.diff(seg_t) <= 0):
            raise StructuralError(f"timestamps not strictly increasing in rows {start + 2}-{stop + 1}")
        out[start:stop] = filter_block(FilterState(X.shape[1]), coeffs, np.abs(X[start:stop]))
        start = stop
    save_stream(args.output, t, out, tail_names, tails)
    return 0


def cmd_train(args) -> int:
    ts = load_csv(args.input)
    knn = KnnModel.fit(ts, _knn_config(args), args.ridge)
    prop = fit_proportional(ts, args.g, args.v)
    save_model(args.output, ModelBundle(knn, prop, source=ts.fingerprint()))
    return 0


def cmd_crossval(args) -> int:
    ts = load_csv(args.input)
    grid = SweepGrid(args.k_rel, args.metrics, args.weighting_exps, args.normalize)
    rows = sweep(ts, grid, max_workers=args.workers, ridge=args.ridge)
    write_sweep_csv(rows, args.output)
    if args.folds_output:
        write_cv_csv(logo_cv(ts, _knn_config(args), ridge=args.ridge), args.folds_output)
    return 0


def _is_model_file(path) -> bool:
    with open(path, encoding="utf-8") as fh:
        return fh.readline().rstrip("\n") == MAGIC


def cmd_reduce(args) -> int:
    rcfg = ReductionConfig(args.variant, args.m, args.iters, args.alpha, _seed(args), args.window)
    if _is_model_file(args.input):
        src = load_model(args.input)
        knn, prop, source = src.knn, src.prop, src.source
        ts = TrainingSet(knn.references, knn.labels, knn.blocks, class_list=knn.class_list)
        cfg, inv = knn.config, knn.inv_cov
        raw = None
    else:
        raw = load_csv(args.input)
        cfg = _knn_config(args)
        source = raw.fingerprint()
        ts = raw.normalized() if cfg.normalize_inputs else raw
        inv = KnnModel.fit(raw, cfg, args.ridge).inv_cov if cfg.metric == "mahalanobis" else None
        prop = None
    protos = reduce(ts, rcfg)
    if raw is not None and REST in raw.labels:
        # a set without rest samples still reduces; it just cannot gate rest
        prop = fit_proportional(raw, args.g, args.v)
    model = protos.to_model(cfg, inv)
    save_model(args.output, ModelBundle(model, prop, rcfg, source or protos.source))
    return 0


def _bundle_with_prop(path) -> ModelBundle:
    b = load_model(path)
    if b.prop is None:
        raise MyoError(f"{path}: model file has no proportional parameters")
    return b


def cmd_predict(args) -> int:
    b = _bundle_with_prop(args.model)
    t, X, _, _ = load_stream(args.input)
    labels, scales = predict_many(b.knn, b.prop, X) if len(t) else ([], [])
    rows = [[fmt(ti), lab, fmt(s)] for ti, lab, s in zip(t, labels, scales)]
    text = "t,label,scale\n" + "".join(",".join(r) + "\n" for r in rows)
    Path(args.output).write_text(text, encoding="utf-8", newline="")
    return 0


def cmd_replay(args) -> int:
    b = _bundle_with_prop(args.model)
    paths = []
    for p in map(Path, args.trials):
        paths.extend(sorted(p.glob("*.csv")) if p.is_dir() else [p])
    if not paths:
        raise MyoError("no trial files given")
    trials = [load_trial_csv(p) for p in paths]
    dwell = args.dwell if args.dwell is not None else default_dwell(args.rate_hz)
    result = tat_replay(b.knn, b.prop, trials, args.margin, dwell)
    write_tat_csv(result, trials, args.output)
    print(f"success rate {result.rate:.3f} ({sum(result.flags)}/{len(result.flags)})")
    return 0


def cmd_bench(args) -> int:
    bundles = [(Path(p).name, load_model(p).knn) for p in args.model]
    C = bundles[0][1].channel_count
    if args.queries:
        _, Q, _, _ = load_stream(args.queries)
        if Q.shape[0] == 0:
            raise MyoError("query file is empty")
    else:
        rng = np.random.default_rng(_seed(args))
        Q = np.abs(rng.normal(0.5, 0.3, size=(256, C)))
    reports = []
    for name, knn in bundles:
        if knn.channel_count != Q.shape[1]:
            raise StructuralError(f"{name}: {knn.channel_count} channels, queries {Q.shape[1]}")
        reports.append(bench_latency(knn, knn.prepare(Q), args.warmup, args.reps, name))
    write_latency_csv(reports, args.output)
    if len(reports) > 1:
        base = reports[0]
        for r in reports[1:]:
            print(f"{base.name} / {r.name} mean-time ratio: {base.mean / r.mean:.1f}x")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="myoknn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic training set and trials")
    g.add_argument("--out-dir", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--classes", default=",".join(GESTURES))
    g.add_argument("--sigma", type=float, default=0.05)
    g.add_argument("--samples-per-block", type=int, default=400)
    g.add_argument("--blocks-per-class", type=int, default=4)
    g.add_argument("--trial-samples", type=int, default=400)
    g.add_argument("--rate-hz", type=float, default=200.0)
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("filter", help="raw CSV to linear-envelope CSV")
    f.add_argument("--input", required=True)
    f.add_argument("--output", required=True)
    f.add_argument("--cutoff-hz", type=float, default=1.0)
    f.add_argument("--rate-hz", type=float, default=200.0)
    f.set_defaults(func=cmd_filter)

    t = sub.add_parser("train", help="labeled envelope CSV to model file")
    t.add_argument("--input", required=True)
    t.add_argument("--output", required=True)
    _knn_flags(t)
    _prop_flags(t)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("crossval", help="leave-one-block-out sweep to CSV")
    c.add_argument("--input", required=True)
    c.add_argument("--output", required=True)
    c.add_argument("--k-rel", type=_floats, default=(0.001, 0.01, 0.05, 0.1, 0.25, 0.5))
    c.add_argument("--metrics", type=_names, default=("euclidean",))
    c.add_argument("--weighting-exps", type=_floats, default=(0.0, 0.5, 1.0, 2.0))
    c.add_argument("--folds-output", help="also write per-fold accuracy for --k/--metric/--weighting-exp")
    c.add_argument("--workers", type=int, default=None)
    _knn_flags(c)
    c.set_defaults(func=cmd_crossval)

    r = sub.add_parser("reduce", help="model file or labeled CSV to prototype file")
    r.add_argument("--input", required=True)
    r.add_argument("--output", required=True)
    r.add_argument("--variant", choices=("dsm", "lvq3"), default="dsm")
    r.add_argument("--m", type=int, default=7)
    r.add_argument("--iters", type=int, default=40)
    r.add_argument("--alpha", type=float, default=0.01)
    r.add_argument("--window", type=float, default=0.3)
    r.add_argument("--seed", type=int)
    _knn_flags(r)
    _prop_flags(r)
    r.set_defaults(func=cmd_reduce)

    pr = sub.add_parser("predict", help="model + envelope stream to t,label,scale CSV")
    pr.add_argument("--model", required=True)
    pr.add_argument("--input", required=True)
    pr.add_argument("--output", required=True)
    pr.set_defaults(func=cmd_predict)

    rp = sub.add_parser("replay", help="offline target-achievement test over trial files")
    rp.add_argument("--model", required=True)
    rp.add_argument("--trials", nargs="+", required=True, help="trial CSV files or directories")
    rp.add_argument("--output", required=True)
    rp.add_argument("--margin", type=float, default=0.15)
    rp.add_argument("--dwell", type=int, default=None, help="samples (default 0.5 s)")
    rp.add_argument("--rate-hz", type=float, default=200.0)
    rp.set_defaults(func=cmd_replay)

    b = sub.add_parser("bench", help="per-prediction latency of one or more model files")
    b.add_argument("--model", nargs="+", required=True)
    b.add_argument("--output", required=True)
    b.add_argument("--queries", help="stream CSV of query samples (default: seeded random)")
    b.add_argument("--reps", type=int, default=1000)
    b.add_argument("--warmup", type=int, default=100)
    b.add_argument("--seed", type=int)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if not hasattr(args, "seed"):
        args.seed = None
    try:
        return args.func(args)
    except (MyoError, OSError) as exc:
        print(f"myoknn {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
