"""Command-line front end.

Verbs: ``run``, ``baseline``, ``sweep``, ``predict`` and ``validate-config``.
Exit codes: 0 success, 1 config error, 2 data error, 3 numerical failure.
Reports hold no timings so identical runs give byte-identical files; timings
go to ``run.log``.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, describe_fields, load_config
from .data_io import (Dataset, FoldPlan, load_dataset, load_schema, stratified_holdout,
                      stratified_kfold)
from .errors import ConfigError, DataError, DsaeemError, NumericalError
from .metrics import (METRIC_NAMES, TABLE_LABELS, MetricsReport, comparison_table, compute_metrics,
                      confusion, fmt_pct, fold_table)
from .pipeline import VARIANTS, FittedPipeline, cross_validate

log = logging.getLogger("dsaeem")

REPORT_FORMAT = "dsaeem.report/1"
BASELINES = ("svm_raw", "l1_only", "wlpdp_only", "fssae_only")

# Published scores of the full method, in percent, shown for comparison only.
REFERENCE = {
    ("heart", "kfold"): {"acc": 96.67, "prec": 97.59, "sens": 95.83, "spec": 97.50, "f1": 96.65},
    ("pid", "kfold"): {"acc": 84.54, "prec": 88.50, "sens": 80.99, "spec": 88.11, "f1": 84.18},
    ("heart", "holdout"): {"acc": 95.83, "prec": 92.31, "sens": 100.0, "spec": 91.67, "f1": 96.00},
    ("pid", "holdout"): {"acc": 83.18, "prec": 90.91, "sens": 74.07, "spec": 92.45, "f1": 81.63},
}
HOLDOUT_ORDER = ("acc", "sens", "spec", "prec", "f1")


# ---------------------------------------------------------------- helpers

def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False, allow_nan=False) + "\n"


def load_experiment_data(cfg: ExperimentConfig):
    schema = load_schema(cfg.path("schema"))
    ds = load_dataset(cfg.path("dataset"), schema, cfg["missing"])
    return ds, schema


def make_plan(cfg: ExperimentConfig, ds: Dataset) -> FoldPlan:
    if cfg["cv_mode"] == "holdout":
        return stratified_holdout(ds, cfg["holdout_ratio"], cfg["seed"])
    return stratified_kfold(ds, cfg["k"], cfg["seed"])


def reference_for(cfg: ExperimentConfig):
    if cfg["reference"] is None:
        return None
    return REFERENCE[(cfg["reference"], cfg["cv_mode"])]


def output_dir(cfg: ExperimentConfig, override, config_path) -> Path:
    if override:
        out = Path(override)
    else:
        out = cfg.path("output_dir") / Path(config_path).stem
    out.mkdir(parents=True, exist_ok=True)
    return out


class _RunLog:
    """Attach a file handler for the duration of one verb."""

    def __init__(self, path):
        self.handler = logging.FileHandler(path, mode="w")
        self.handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))

    def __enter__(self):
        root = logging.getLogger("dsaeem")
        root.addHandler(self.handler)
        root.setLevel(logging.INFO)
        return self

    def __exit__(self, *exc):
        logging.getLogger("dsaeem").removeHandler(self.handler)
        self.handler.close()


def _check_finite(result, variant):
    for fold in result.report.folds:
        if not np.isfinite(fold["acc"]):
            raise NumericalError(f"{variant}: non-finite accuracy", last_state=fold)


def run_variant(cfg: ExperimentConfig, ds, plan, variant, schema, keep_models=True):
    t0 = time.perf_counter()
    try:
        res = cross_validate(cfg.pipeline_config(), ds, plan, variant, schema.positive_class,
                             keep_models=keep_models)
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        raise NumericalError(f"{variant}: {exc}") from exc
    _check_finite(res, variant)
    log.info("%s finished in %.2fs; fold times %s", variant, time.perf_counter() - t0,
             [round(t, 3) for t in res.timings])
    return res


def holdout_table(report: MetricsReport, reference, title="") -> str:
    """Single-split layout: one metric per row, optional reference column."""
    m = report.folds[0]
    head = "metric".ljust(10) + "this run".rjust(12) + ("reference".rjust(12) if reference else "")
    lines = [title] if title else []
    lines += [head, "-" * len(head)]
    for k in HOLDOUT_ORDER:
        row = TABLE_LABELS[k].ljust(10) + fmt_pct(m[k], 12)
        if reference:
            row += f"{reference[k]:.2f}".rjust(12)
        lines.append(row)
    return "\n".join(lines) + "\n"


def metrics_text(cfg, reports: dict, reference, name) -> str:
    """Human-readable tables for one or more variants over the same plan."""
    parts = []
    if cfg["cv_mode"] == "holdout" and len(reports) == 1:
        (variant, rep), = reports.items()
        parts.append(holdout_table(rep, reference, f"{name}: {variant}, holdout"))
    else:
        for variant, rep in reports.items():
            parts.append(fold_table(rep, f"{name}: {variant}"))
        ref = {"reference": reference} if reference else None
        parts.append(comparison_table(reports, ref, f"{name}: comparison (mean +- std over folds)"))
    return "\n".join(parts)


def build_report(cfg, ds, plan, results: dict, name) -> dict:
    out = {"format": REPORT_FORMAT, "version": __version__, "name": name,
           "dataset": {"name": ds.name, "n_samples": ds.n_samples, "n_features": ds.n_features,
                       "class_count": ds.class_count},
           "config": cfg.echo(), "fold_plan": plan.to_dict(), "reference": reference_for(cfg),
           "variants": {}}
    for variant, res in results.items():
        out["variants"][variant] = {
            "metrics": res.report.to_dict(),
            "predictions": res.predictions,
            "fold_info": [m.info for m in res.models] if res.models else [],
        }
    return out


def write_outputs(out: Path, cfg, ds, plan, results, name, bundles=True):
    report = build_report(cfg, ds, plan, results, name)
    (out / "report.json").write_text(_dump(report))
    reports = {v: r.report for v, r in results.items()}
    (out / "metrics.txt").write_text(metrics_text(cfg, reports, reference_for(cfg), name))
    (out / "config_echo.json").write_text(_dump(cfg.echo()))
    if bundles:
        for variant, res in results.items():
            mdir = out / "models" / variant
            mdir.mkdir(parents=True, exist_ok=True)
            for i, model in enumerate(res.models):
                (mdir / f"fold_{i}.json").write_text(_dump(model.to_dict()))
    return report


# ---------------------------------------------------------------- verbs

def cmd_validate(args):
    if args.keys:
        print(describe_fields())
        return 0
    cfg = load_config(args.config)
    print(_dump(cfg.echo()), end="")
    return 0


def cmd_run(args):
    cfg = load_config(args.config)
    out = output_dir(cfg, args.output, args.config)
    with _RunLog(out / "run.log"):
        log.info("run %s seed=%d variant=%s", args.config, cfg["seed"], cfg["variant"])
        ds, schema = load_experiment_data(cfg)
        plan = make_plan(cfg, ds)
        res = run_variant(cfg, ds, plan, cfg["variant"], schema)
        write_outputs(out, cfg, ds, plan, {cfg["variant"]: res}, Path(args.config).stem)
    print((out / "metrics.txt").read_text(), end="")
    print(f"reports written to {out}")
    return 0


def cmd_baseline(args):
    cfg = load_config(args.config)
    names = args.baselines.split(",") if args.baselines else list(BASELINES)
    for b in names:
        if b not in VARIANTS:
            raise ConfigError(f"baseline: unknown variant {b!r}; choose from {', '.join(VARIANTS)}")
    if not args.no_full and "full" not in names:
        names = ["full"] + names
    out = output_dir(cfg, args.output, Path(args.config).stem + "_baselines")
    with _RunLog(out / "run.log"):
        ds, schema = load_experiment_data(cfg)
        plan = make_plan(cfg, ds)  # shared by every variant
        results = {}
        for v in names:
            log.info("baseline %s seed=%d", v, cfg["seed"])
            results[v] = run_variant(cfg, ds, plan, v, schema)
        write_outputs(out, cfg, ds, plan, results, Path(args.config).stem)
    print((out / "metrics.txt").read_text(), end="")
    print(f"reports written to {out}")
    return 0


def _parse_values(text, key):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"sweep: --{key} expects comma-separated numbers, got {text!r}") from None
    if not vals:
        raise ConfigError(f"sweep: --{key} grid is empty")
    return vals


def sweep_points(args):
    if args.rho is not None and (args.lam is not None or args.beta is not None):
        raise ConfigError("sweep: give either --rho or --lam with --beta, not both")
    if args.rho is not None:
        return ["rho"], [{"rho": r} for r in _parse_values(args.rho, "rho")]
    if args.lam is not None and args.beta is not None:
        lams = _parse_values(args.lam, "lam")
        betas = _parse_values(args.beta, "beta")
        return ["lam", "beta"], [{"lam": a, "beta": b} for a in lams for b in betas]
    raise ConfigError("sweep: an axis is required (--rho, or --lam together with --beta)")


def run_sweep(cfg: ExperimentConfig, axes, points, variant="full"):
    """Cross-validate every grid point on one shared plan; returns CSV text."""
    ds, schema = load_experiment_data(cfg)
    plan = make_plan(cfg, ds)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(axes + [f"{m}_mean" for m in METRIC_NAMES] + ["acc_std"])
    for point in points:
        pcfg = cfg.replace(**point)
        log.info("sweep point %s", point)
        res = run_variant(pcfg, ds, plan, variant, schema, keep_models=False)
        rep = res.report
        row = [repr(point[a]) for a in axes]
        row += ["" if rep.mean(m) is None else repr(rep.mean(m)) for m in METRIC_NAMES]
        row.append(repr(rep.std("acc")))
        writer.writerow(row)
    return buf.getvalue()


def cmd_sweep(args):
    cfg = load_config(args.config)
    axes, points = sweep_points(args)
    # validate every grid point before any work
    for p in points:
        cfg.replace(**p)
    out = output_dir(cfg, args.output, Path(args.config).stem + "_sweep")
    name = "sweep_" + "_".join(axes) + ".csv"
    with _RunLog(out / "run.log"):
        text = run_sweep(cfg, axes, points, cfg["variant"])
    (out / name).write_text(text)
    (out / "config_echo.json").write_text(_dump(cfg.echo()))
    print(text, end="")
    print(f"series written to {out / name}")
    return 0


def cmd_predict(args):
    try:
        bundle = json.loads(Path(args.bundle).read_text())
    except FileNotFoundError:
        raise DataError(f"bundle not found: {args.bundle}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"bundle is not valid JSON: {exc.msg}") from None
    model = FittedPipeline.from_dict(bundle)
    schema = load_schema(args.schema)
    ds = load_dataset(args.data, schema, verify_checksum=False)
    pred = model.predict(ds.features)
    lines = ["row,predicted"] + [f"{i + 1},{p}" for i, p in enumerate(pred.tolist())]
    text = "\n".join(lines) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        print(text, end="")
    m = compute_metrics(confusion(ds.labels, pred, schema.positive_class, ds.class_count))
    summary = "  ".join(f"{TABLE_LABELS[k]} {fmt_pct(m[k])}" for k in METRIC_NAMES)
    print(f"scored {ds.n_samples} rows against their labels: {summary}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------- entry point

def build_parser():
    p = argparse.ArgumentParser(prog="dsaeem", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"dsaeem {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="cross-validate the configured pipeline")
    r.add_argument("config")
    r.add_argument("-o", "--output", help="output directory (default: <output_dir>/<config name>)")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("baseline", help="run baselines on the same folds as the full pipeline")
    b.add_argument("config")
    b.add_argument("--baselines", help=f"comma-separated subset of {', '.join(BASELINES)}")
    b.add_argument("--no-full", action="store_true", help="skip the full pipeline column")
    b.add_argument("-o", "--output")
    b.set_defaults(func=cmd_baseline)

    s = sub.add_parser("sweep", help="accuracy against rho, or against a (lam, beta) grid")
    s.add_argument("config")
    s.add_argument("--rho", help="comma-separated rho values")
    s.add_argument("--lam", help="comma-separated lam values (with --beta)")
    s.add_argument("--beta", help="comma-separated beta values (with --lam)")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_sweep)

    q = sub.add_parser("predict", help="score a CSV with a saved model bundle")
    q.add_argument("bundle")
    q.add_argument("data")
    q.add_argument("--schema", required=True)
    q.add_argument("-o", "--output", help="write predictions here instead of stdout")
    q.set_defaults(func=cmd_predict)

    v = sub.add_parser("validate-config", help="check a config and print its full echo")
    v.add_argument("config", nargs="?")
    v.add_argument("--keys", action="store_true", help="list every accepted key")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verb == "validate-config" and not args.keys and not args.config:
        parser.error("validate-config needs a config path or --keys")
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        with np.errstate(over="ignore", under="ignore"):
            return args.func(args)
    except DsaeemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
