import json

import numpy as np
import pytest

from dsaeem import fssae as fs
from dsaeem.data_io import Dataset, stratified_kfold
from dsaeem.ensemble import EnsembleConfig
from dsaeem.errors import ConfigError, DataError
from dsaeem.pipeline import VARIANTS, FittedPipeline, PipelineConfig, cross_validate, fit_pipeline
from dsaeem.reduction import WlpdpConfig

from .conftest import two_blobs

SMALL = PipelineConfig(
    fssae=fs.FssaeConfig(hidden=(10, 6, 4), pretrain_iterations=30, softmax_iterations=10,
                         fine_tune_iterations=10, early_stop_ratio=0.2, seed=1),
    ensemble=EnsembleConfig(T=4, wlpdp=WlpdpConfig(l=1, eps_scale=0.1), seed=1),
    seed=1,
)


def bundle_text(model):
    return json.dumps(model.to_dict(), sort_keys=True)


@pytest.mark.parametrize("variant", VARIANTS)
def test_every_variant_fits_and_predicts(heart, variant):
    model = fit_pipeline(heart.features[:120], heart.labels[:120], 2, SMALL, variant)
    pred = model.predict(heart.features[120:])
    assert pred.shape == (150,) and set(pred) <= {0, 1}


def test_unknown_variant(heart):
    with pytest.raises(ConfigError):
        fit_pipeline(heart.features, heart.labels, 2, SMALL, "magic")


def test_leakage_guard(heart):
    plan = stratified_kfold(heart, 5, seed=2)
    tr, te = plan.split(1)
    X = heart.features.copy()
    clean = fit_pipeline(X[tr], heart.labels[tr], 2, SMALL)
    X[te] = np.random.default_rng(0).normal(size=(len(te), X.shape[1])) * 1e3
    mutated = Dataset(X, heart.labels, 2)
    res = cross_validate(SMALL, mutated, plan, keep_models=True)
    assert bundle_text(res.models[1]) == bundle_text(clean)


def test_cross_validation_deterministic(heart):
    plan = stratified_kfold(heart, 3, seed=0)
    a = cross_validate(SMALL, heart, plan)
    b = cross_validate(SMALL, heart, plan)
    assert a.predictions == b.predictions
    assert json.dumps(a.report.to_dict()) == json.dumps(b.report.to_dict())
    assert [bundle_text(m) for m in a.models] == [bundle_text(m) for m in b.models]


class _Constant:
    def __init__(self, label):
        self.label = label

    def predict(self, X):
        return np.full(len(X), self.label)


def test_constant_stub_scores_base_rate(pid):
    plan = stratified_kfold(pid, 5, seed=0)
    res = cross_validate(SMALL, pid, plan, fitter=lambda X, y, c: _Constant(0))
    pooled = res.report.pooled()["acc"]
    assert pooled == pytest.approx(500 / 768)
    assert res.report.undefined_count("prec") == 5


def test_separable_blobs_full_pipeline():
    from sklearn.svm import LinearSVC
    X, y = two_blobs(60, sep=6.0, dim=3, seed=11)
    assert LinearSVC(C=100.0).fit(X, y).score(X, y) == 1.0
    ds = Dataset(X, y, 2)
    res = cross_validate(SMALL, ds, stratified_kfold(ds, 5, 0))
    assert res.report.mean("acc") == 1.0


def test_plan_mismatch(heart):
    plan = stratified_kfold(heart.labels[:100], 5, 0)
    with pytest.raises(ValueError):
        cross_validate(SMALL, heart, plan)


def test_bundle_round_trip(heart):
    model = fit_pipeline(heart.features[:150], heart.labels[:150], 2, SMALL)
    again = FittedPipeline.from_dict(json.loads(json.dumps(model.to_dict())))
    assert np.array_equal(model.predict(heart.features), again.predict(heart.features))
    with pytest.raises(DataError):
        FittedPipeline.from_dict({"format": "other"})


def test_full_pipeline_records_choices(heart):
    model = fit_pipeline(heart.features[:150], heart.labels[:150], 2, SMALL)
    info = model.info
    assert info["expanded_dim"] == 13 + 4
    assert info["alpha"] in SMALL.alpha_grid
    assert len(info["selected"]) >= 3
    assert len(info["member_weights"]) == 4
