"""Flat experiment configuration.

A config file is one JSON object whose keys come from :data:`FIELDS`.
Unknown keys are errors, every value is validated before any data is
touched, and :meth:`ExperimentConfig.echo` lists every key with its
effective value so nothing is silently defaulted. Relative paths are
resolved against the config file's directory.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from .ensemble import EnsembleConfig
from .errors import ConfigError
from .fssae import FssaeConfig
from .pipeline import VARIANTS, PipelineConfig
from .reduction import WlpdpConfig
from .svm import SvmConfig

CONFIG_FORMAT = "dsaeem.config/1"


def _num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _opt(check):
    return lambda x: x is None or check(x)


def _list_of(check, nonempty=True):
    return lambda x: isinstance(x, list) and (len(x) > 0 or not nonempty) and all(check(v) for v in x)


def _choice(*opts):
    return lambda x: x in opts


def _pos_int(x):
    return _int(x) and x >= 1


def _nonneg_int(x):
    return _int(x) and x >= 0


def _nonneg(x):
    return _num(x) and x >= 0


def _pos(x):
    return _num(x) and x > 0


def _open_unit(x):
    return _num(x) and 0 < x < 1


def _half_open_unit(x):
    return _num(x) and 0 < x <= 1


# key -> (default, check, constraint text, meaning)
FIELDS = {
    # data and evaluation
    "dataset": (None, lambda x: isinstance(x, str) and x != "", "nonempty path", "CSV file"),
    "schema": (None, lambda x: isinstance(x, str) and x != "", "nonempty path", "schema JSON"),
    "missing": ("reject", _choice("reject", "impute_mean"), "'reject' or 'impute_mean'",
                "policy for missing cells"),
    "normalization": ("min_max", _choice("min_max", "z_score"), "'min_max' or 'z_score'",
                      "feature scaling fitted on training rows"),
    "cv_mode": ("kfold", _choice("kfold", "holdout"), "'kfold' or 'holdout'", "evaluation layout"),
    "k": (5, lambda x: _int(x) and x >= 2, "integer >= 2", "number of folds"),
    "holdout_ratio": (0.2, _open_unit, "in (0, 1)", "test share for holdout"),
    "seed": (0, _nonneg_int, "integer >= 0", "master seed for folds, training and weights"),
    "reference": (None, _opt(_choice("heart", "pid")), "null, 'heart' or 'pid'",
                  "published reference values printed beside the results"),
    "output_dir": ("runs", lambda x: isinstance(x, str) and x != "", "nonempty path",
                   "directory for reports and bundles"),
    # feature expansion
    "hidden": ([120, 40, 16], _list_of(_pos_int), "nonempty list of positive integers",
               "hidden widths of the stacked autoencoder"),
    "lam": (1e-5, _nonneg, "real >= 0", "weight decay coefficient"),
    "beta": (3.0, _nonneg, "real >= 0", "sparsity penalty coefficient"),
    "rho": (0.05, _open_unit, "in (0, 1)", "target mean activation"),
    "pretrain_iterations": (400, _pos_int, "integer >= 1", "descent steps per autoencoder"),
    "learn_rate": (1.0, _pos, "real > 0", "initial pretraining step size"),
    "momentum": (0.9, lambda x: _num(x) and 0 <= x < 1, "in [0, 1)", "pretraining momentum"),
    "embed_d": (None, _opt(_list_of(_pos_int)), "null or list of positive integers",
                "rows kept per embed unit; null keeps the previous hidden width"),
    "min_original": (None, _opt(_nonneg_int), "null or integer >= 0",
                     "original rows guaranteed per embed unit; null means ceil(M/2)"),
    "softmax_iterations": (100, _nonneg_int, "integer >= 0", "softmax head warm-up iterations"),
    "fine_tune_iterations": (100, _nonneg_int, "integer >= 0", "joint fine-tuning iterations"),
    "early_stop_ratio": (0.0, lambda x: _num(x) and 0 <= x < 1, "in [0, 1)",
                         "rows held out to stop fine-tuning early; 0 disables"),
    "early_stop_patience": (10, _pos_int, "integer >= 1",
                            "accepted steps without held-out improvement before stopping"),
    "optimizer": ("scg", _choice("scg", "gd"), "'scg' or 'gd'", "fine-tuning optimizer"),
    "use_fine_tuned": (True, _choice(True, False), "boolean",
                       "expand with fine-tuned rather than pretrained weights"),
    # stage 1
    "alpha_grid": ([0.001, 0.01, 0.1, 1.0], _list_of(_nonneg), "nonempty list of reals >= 0",
                   "L1 strengths tried on the inner split"),
    "min_keep": (None, _opt(_pos_int), "null or integer >= 1",
                 "smallest selection; null means max(3, ceil(0.1 M))"),
    "val_ratio": (0.2, _open_unit, "in (0, 1)", "inner validation share"),
    # stage 2 and ensemble
    "gamma": (0.1, _nonneg, "real >= 0", "locality term weight"),
    "gamma_scale": ("none", _choice("none", "trace"), "'none' or 'trace'",
                    "'trace' makes gamma relative to tr(S_B) / tr(X^T L X)"),
    "l": (None, _opt(_pos_int), "null or integer >= 1", "projection width; null means min(4C, m-1)"),
    "k_nn": (7, _pos_int, "integer >= 1", "neighbours in the affinity graph"),
    "sigma": (None, _opt(_pos), "null or real > 0", "heat kernel width; null means median distance"),
    "eps_scale": (1e-6, _nonneg, "real >= 0", "within-class ridge relative to its mean diagonal"),
    "T": (10, _pos_int, "integer >= 1", "ensemble members"),
    "delta_s": (0.7, _half_open_unit, "in (0, 1]", "sample share per member"),
    "delta_f": (0.5, _half_open_unit, "in (0, 1]", "feature share per member"),
    "weight_candidates": (200, _nonneg_int, "integer >= 0", "random weight vectors searched"),
    "standardize_projection": (True, _choice(True, False), "boolean",
                               "standardize projected coordinates per member"),
    "refit_members": (False, _choice(True, False), "boolean",
                      "refit members on all training rows after the weight search"),
    "max_member_retries": (5, _nonneg_int, "integer >= 0", "resamples for a failing member"),
    # classifier
    "svm_kernel": ("rbf", _choice("rbf", "linear"), "'rbf' or 'linear'", "SVM kernel"),
    "svm_gamma": (None, _opt(_pos), "null or real > 0", "rbf width; null means 1/features"),
    "svm_C": (1.0, _pos, "real > 0", "box constraint"),
    "svm_tol": (1e-3, _pos, "real > 0", "KKT tolerance"),
    "svm_max_iter": (100_000, _pos_int, "integer >= 1", "SMO iteration cap"),
    "variant": ("full", _choice(*VARIANTS), "one of " + ", ".join(VARIANTS),
                "pipeline used by the run verb"),
}

REQUIRED = ("dataset", "schema")


def _normalize_value(v):
    return list(v) if isinstance(v, tuple) else v


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated configuration values.

    Parameters
    ----------
    values : dict
        Every key of :data:`FIELDS` with its effective value.
    base_dir : Path
        Directory against which relative paths resolve.
    explicit : frozenset
        Keys given in the source file (the rest are defaults).
    """

    values: dict
    base_dir: Path = Path(".")
    explicit: frozenset = frozenset()

    def __getitem__(self, key):
        return self.values[key]

    def path(self, key) -> Path:
        p = Path(self.values[key])
        return p if p.is_absolute() else (self.base_dir / p)

    def echo(self) -> dict:
        """All keys, including defaulted ones, in declaration order."""
        return {"format": CONFIG_FORMAT, "values": {k: self.values[k] for k in FIELDS},
                "defaulted": sorted(k for k in FIELDS if k not in self.explicit)}

    def replace(self, **changes) -> "ExperimentConfig":
        merged = {k: v for k, v in self.values.items() if k in self.explicit or k in changes}
        merged.update(changes)
        return from_dict(merged, self.base_dir)

    def pipeline_config(self) -> PipelineConfig:
        v = self.values
        seed = v["seed"]
        svm = SvmConfig(kernel=v["svm_kernel"], gamma=v["svm_gamma"], C=float(v["svm_C"]),
                        tol=float(v["svm_tol"]), max_iter=v["svm_max_iter"])
        fcfg = FssaeConfig(
            hidden=tuple(v["hidden"]), lam=float(v["lam"]), beta=float(v["beta"]),
            rho=float(v["rho"]), pretrain_iterations=v["pretrain_iterations"],
            learn_rate=float(v["learn_rate"]), momentum=float(v["momentum"]),
            embed_d=None if v["embed_d"] is None else tuple(v["embed_d"]),
            min_original=v["min_original"], softmax_iterations=v["softmax_iterations"],
            fine_tune_iterations=v["fine_tune_iterations"],
            early_stop_ratio=float(v["early_stop_ratio"]),
            early_stop_patience=v["early_stop_patience"], optimizer=v["optimizer"],
            use_fine_tuned=v["use_fine_tuned"], seed=seed)
        wl = WlpdpConfig(gamma=float(v["gamma"]), gamma_scale=v["gamma_scale"], l=v["l"], k_nn=v["k_nn"], sigma=v["sigma"],
                         eps_scale=float(v["eps_scale"]))
        ens = EnsembleConfig(T=v["T"], delta_s=float(v["delta_s"]), delta_f=float(v["delta_f"]),
                             wlpdp=wl, svm=svm, weight_candidates=v["weight_candidates"],
                             val_ratio=float(v["val_ratio"]),
                             standardize_projection=v["standardize_projection"],
                             refit_members=v["refit_members"],
                             max_member_retries=v["max_member_retries"], seed=seed)
        return PipelineConfig(normalization=v["normalization"], fssae=fcfg,
                              alpha_grid=tuple(float(a) for a in v["alpha_grid"]),
                              min_keep=v["min_keep"], val_ratio=float(v["val_ratio"]),
                              ensemble=ens, svm=svm, seed=seed)


def from_dict(raw: dict, base_dir=".") -> ExperimentConfig:
    """Validate ``raw`` and fill defaults; raises ConfigError naming every bad field."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    problems = []
    for key in raw:
        if key not in FIELDS:
            problems.append(f"{key}: unknown key")
    for key in REQUIRED:
        if raw.get(key) is None:
            problems.append(f"{key}: required")
    values = {}
    for key, (default, check, constraint, _) in FIELDS.items():
        val = _normalize_value(raw.get(key, default))
        if key in raw and not (key in REQUIRED and raw[key] is None) and not check(val):
            problems.append(f"{key}: must be {constraint}, got {json.dumps(val)}")
        values[key] = val
    if not problems:
        problems += _cross_checks(values)
    if problems:
        raise ConfigError("invalid config:\n  " + "\n  ".join(problems))
    return ExperimentConfig(values, Path(base_dir), frozenset(raw))


def _cross_checks(v):
    out = []
    if v["embed_d"] is not None and len(v["embed_d"]) != len(v["hidden"]) - 1:
        out.append(f"embed_d: needs {len(v['hidden']) - 1} entries (one per layer after the first)")
    return out


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None
    return from_dict(raw, path.parent)


def describe_fields() -> str:
    """Plain-text key reference, one line per key."""
    w = max(len(k) for k in FIELDS)
    lines = []
    for k, (default, _, constraint, meaning) in FIELDS.items():
        lines.append(f"{k.ljust(w)}  {json.dumps(default):>22}  {meaning} ({constraint})")
    return "\n".join(lines)
