"""End-to-end pipelines and cross-validation.

``full`` is normalize -> FSSAE expansion -> L1 selection -> bagged ensemble.
The baselines drop stages: ``svm_raw`` (SVM on normalized inputs),
``l1_only`` (L1 selection then SVM), ``wlpdp_only`` (ensemble on normalized
inputs) and ``fssae_only`` (expanded features then SVM).
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import fssae as fs
from .data_io import (Dataset, FoldPlan, NormalizationSpec, apply_normalization_array,
                      fit_normalization, inner_split)
from .ensemble import EnsembleConfig, EnsembleModel, fit_ensemble, predict_ensemble
from .errors import ConfigError, DataError
from .metrics import MetricsReport, confusion
from .reduction import L1Selection, default_min_keep, fit_l1_selection
from .svm import SvmConfig, SvmModel, train_svm

log = logging.getLogger(__name__)

VARIANTS = ("full", "svm_raw", "l1_only", "wlpdp_only", "fssae_only")
BUNDLE_FORMAT = "dsaeem.bundle/1"


@dataclass(frozen=True)
class PipelineConfig:
    normalization: str = "min_max"
    fssae: fs.FssaeConfig = fs.FssaeConfig()
    alpha_grid: tuple = (0.001, 0.01, 0.1, 1.0)
    min_keep: int | None = None  # None -> max(3, ceil(0.1 * M_hat))
    val_ratio: float = 0.2
    ensemble: EnsembleConfig = EnsembleConfig()
    svm: SvmConfig = SvmConfig()
    seed: int = 0

    def __post_init__(self):
        if not self.alpha_grid or min(self.alpha_grid) < 0:
            raise ConfigError("alpha_grid must be a nonempty list of nonnegative values")

    def to_dict(self):
        return asdict(self)


@dataclass
class FittedPipeline:
    variant: str
    norm: NormalizationSpec
    n_classes: int
    fssae: fs.FssaeModel | None = None
    l1: L1Selection | None = None
    ensemble: EnsembleModel | None = None
    svm: SvmModel | None = None
    info: dict = field(default_factory=dict)

    def features(self, X_raw):
        """Input to the final classifier stage (after selection)."""
        X = apply_normalization_array(X_raw, self.norm)
        if self.fssae is not None:
            X = fs.expand_features(self.fssae, X).matrix
        if self.l1 is not None:
            X = X[:, list(self.l1.indices)]
        return X

    def predict(self, X_raw):
        X = self.features(X_raw)
        if self.ensemble is not None:
            return predict_ensemble(self.ensemble, X)
        return self.svm.predict(X)

    def to_dict(self):
        return {
            "format": BUNDLE_FORMAT,
            "variant": self.variant,
            "n_classes": self.n_classes,
            "normalization": self.norm.to_dict(),
            "fssae": None if self.fssae is None else self.fssae.to_dict(),
            "l1": None if self.l1 is None else self.l1.to_dict(),
            "ensemble": None if self.ensemble is None else self.ensemble.to_dict(),
            "svm": None if self.svm is None else self.svm.to_dict(),
            "info": self.info,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != BUNDLE_FORMAT:
            raise DataError(f"unsupported model bundle format {d.get('format')!r}")
        return cls(
            d["variant"],
            NormalizationSpec.from_dict(d["normalization"]),
            d["n_classes"],
            None if d["fssae"] is None else fs.FssaeModel.from_dict(d["fssae"]),
            None if d["l1"] is None else L1Selection.from_dict(d["l1"]),
            None if d["ensemble"] is None else EnsembleModel.from_dict(d["ensemble"]),
            None if d["svm"] is None else SvmModel.from_dict(d["svm"]),
            d.get("info", {}),
        )


def choose_alpha(X, y, cfg: PipelineConfig, n_classes):
    """Pick alpha from the grid by SVM accuracy on an inner validation split.

    Ties go to the larger alpha (sparser selection). Returns ``(alpha, scores)``.
    """
    if len(cfg.alpha_grid) == 1:
        return float(cfg.alpha_grid[0]), {}
    tr, va = inner_split(y, cfg.val_ratio, cfg.seed)
    scores = {}
    best, best_acc = None, -1.0
    for alpha in sorted(cfg.alpha_grid, reverse=True):
        sel = fit_l1_selection(X[tr], y[tr], alpha, n_classes, cfg.min_keep)
        cols = list(sel.indices)
        svm = train_svm(X[tr][:, cols], y[tr], cfg.svm)
        acc = float(np.mean(svm.predict(X[va][:, cols]) == y[va]))
        scores[repr(float(alpha))] = acc
        if acc > best_acc:
            best, best_acc = float(alpha), acc
    return best, scores


def fit_pipeline(X_raw, y, n_classes, cfg: PipelineConfig, variant="full") -> FittedPipeline:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown pipeline variant {variant!r}; choose from {VARIANTS}")
    X_raw = np.asarray(X_raw, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    norm = fit_normalization(X_raw, cfg.normalization)
    X = apply_normalization_array(X_raw, norm)
    out = FittedPipeline(variant, norm, n_classes)

    if variant in ("full", "fssae_only"):
        out.fssae = fs.train_fssae(X, y, n_classes, cfg.fssae)
        X = fs.expand_features(out.fssae, X).matrix
        out.info["expanded_dim"] = X.shape[1]

    if variant in ("full", "l1_only"):
        alpha, scores = choose_alpha(X, y, cfg, n_classes)
        min_keep = cfg.min_keep if cfg.min_keep is not None else default_min_keep(X.shape[1])
        out.l1 = fit_l1_selection(X, y, alpha, n_classes, min_keep)
        X = X[:, list(out.l1.indices)]
        out.info.update(alpha=alpha, alpha_scores=scores, selected=list(out.l1.indices))

    if variant in ("full", "wlpdp_only"):
        out.ensemble = fit_ensemble(X, y, cfg.ensemble, n_classes)
        out.info["member_weights"] = out.ensemble.weights.tolist()
        if out.ensemble.log:
            out.info["member_events"] = list(out.ensemble.log)
    else:
        out.svm = train_svm(X, y, cfg.svm)
    return out


@dataclass
class CVResult:
    report: MetricsReport
    models: list
    predictions: list
    timings: list


def cross_validate(cfg: PipelineConfig, ds: Dataset, plan: FoldPlan, variant="full",
                   positive_class=1, keep_models=True, fitter=None) -> CVResult:
    """Fit on each training part, score on the held-out part.

    ``fitter(X, y, n_classes)`` replaces :func:`fit_pipeline` when given; it
    must return an object with a ``predict`` method.
    """
    if plan.assignments.shape[0] != ds.n_samples:
        raise ValueError("fold plan does not match the dataset size")
    report = MetricsReport()
    models, preds, timings = [], [], []
    for fold in range(plan.n_folds):
        tr, te = plan.split(fold)
        t0 = time.perf_counter()
        if fitter is None:
            fitted = fit_pipeline(ds.features[tr], ds.labels[tr], ds.class_count, cfg, variant)
        else:
            fitted = fitter(ds.features[tr], ds.labels[tr], ds.class_count)
        p = fitted.predict(ds.features[te])
        timings.append(time.perf_counter() - t0)
        report.add(confusion(ds.labels[te], p, positive_class, ds.class_count))
        preds.append(p.tolist())
        if keep_models:
            models.append(fitted)
        log.info("%s fold %d/%d: acc %.4f (%.1fs)", variant, fold + 1, plan.n_folds,
                 report.folds[-1]["acc"], timings[-1])
    return CVResult(report, models, preds, timings)
