import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsaeem.data_io import (Dataset, FoldPlan, apply_normalization, fit_normalization,
                            load_dataset, normalize, stratified_holdout, stratified_kfold)
from dsaeem.errors import DataError

from .conftest import DATA


def test_table2_dimensions(heart, pid):
    assert (pid.n_samples, pid.n_features, pid.class_count) == (768, 8, 2)
    assert (heart.n_samples, heart.n_features, heart.class_count) == (270, 13, 2)


def test_heart_labels_remapped(heart):
    assert set(np.unique(heart.labels)) == {0, 1}
    assert np.bincount(heart.labels).tolist() == [150, 120]


def test_shipped_checksums():
    import hashlib
    for name in ("heart", "pid"):
        schema = json.loads((DATA / f"{name}.schema.json").read_text())
        digest = hashlib.sha256((DATA / f"{name}.csv").read_bytes()).hexdigest()
        assert digest == schema["sha256"]


SCHEMA = {"name": "toy", "label_column": "y", "label_map": {"1": 0, "2": 1}}


def write(tmp_path, text):
    p = tmp_path / "toy.csv"
    p.write_text(text)
    return p


def test_na_row_rejected_with_row_number(tmp_path):
    p = write(tmp_path, "a,b,y\n1,2,1\n3,NA,2\n5,6,1\n")
    with pytest.raises(DataError, match="row 3"):
        load_dataset(p, SCHEMA)


def test_impute_mean_policy(tmp_path):
    p = write(tmp_path, "a,b,y\n1,2,1\n3,NA,2\n5,6,1\n")
    ds = load_dataset(p, SCHEMA, missing="impute_mean")
    assert ds.features[1, 1] == 4.0


@pytest.mark.parametrize("text,match", [
    ("a,b,y\n1,2,1\n3,4\n", "columns"),
    ("a,b,y\n1,x,1\n3,4,2\n", "non-numeric"),
    ("a,b,y\n1,2,1\n3,4,7\n", "unknown label"),
])
def test_load_errors(tmp_path, text, match):
    with pytest.raises(DataError, match=match):
        load_dataset(write(tmp_path, text), SCHEMA)


def test_missing_file():
    with pytest.raises(DataError, match="not found"):
        load_dataset("/nonexistent/file.csv", SCHEMA)


def test_dataset_invariants():
    with pytest.raises(DataError):
        Dataset(np.zeros((3, 2)), np.array([0, 1]), 2)
    with pytest.raises(DataError):
        Dataset(np.zeros((3, 2)), np.array([0, 0, 0]), 2)
    with pytest.raises(DataError):
        Dataset(np.array([[np.nan, 1.0], [0, 0]]), np.array([0, 1]), 2)


def ds_from(col, labels=None):
    X = np.asarray(col, dtype=float).reshape(-1, 1)
    y = np.array(labels if labels is not None else [i % 2 for i in range(X.shape[0])])
    return Dataset(X, y, 2)


def test_min_max_examples():
    out, _ = normalize(ds_from([0, 5, 10]))
    assert out.features[:, 0].tolist() == [0.0, 0.5, 1.0]
    out, _ = normalize(ds_from([3, 3, 3]))
    assert out.features[:, 0].tolist() == [0.0, 0.0, 0.0]


def test_train_spec_applied_to_heldout():
    train = ds_from([2.0, 4.0, 8.0])
    _, spec = normalize(train)
    held = ds_from([8.0, 2.0])
    assert apply_normalization(held, spec).features[0, 0] == 1.0


def test_z_score_zero_variance_signals():
    with pytest.raises(DataError, match="zero-variance"):
        fit_normalization(np.array([[1.0], [1.0]]), "z_score")


def test_normalization_round_trip(heart):
    for method in ("min_max", "z_score"):
        out, spec = normalize(heart, method)
        again = apply_normalization(heart, spec)
        assert np.array_equal(out.features, again.features)


def test_heart_five_folds_of_54(heart):
    plan = stratified_kfold(heart, 5, seed=3)
    assert np.bincount(plan.assignments).tolist() == [54] * 5


def test_kfold_small_class_error():
    ds = Dataset(np.arange(10.0).reshape(-1, 1), np.array([0] * 8 + [1] * 2), 2)
    with pytest.raises(DataError, match="fewer than k"):
        stratified_kfold(ds, k=10)


def test_kfold_deterministic(pid):
    a = stratified_kfold(pid, 5, 11)
    b = stratified_kfold(pid, 5, 11)
    assert np.array_equal(a.assignments, b.assignments)
    assert not np.array_equal(a.assignments, stratified_kfold(pid, 5, 12).assignments)


@settings(max_examples=60, deadline=None)
@given(counts=st.lists(st.integers(5, 40), min_size=2, max_size=4), k=st.integers(2, 5),
       seed=st.integers(0, 2 ** 32 - 1))
def test_stratification_property(counts, k, seed):
    y = np.concatenate([np.full(c, i) for i, c in enumerate(counts)])
    plan = stratified_kfold(y, k, seed)
    for c in range(len(counts)):
        per_fold = np.bincount(plan.assignments[y == c], minlength=k)
        assert per_fold.max() - per_fold.min() <= 1
    sizes = np.bincount(plan.assignments, minlength=k)
    assert sizes.min() > 0 and sizes.max() - sizes.min() <= 1


def test_foldplan_serialization(heart):
    plan = stratified_kfold(heart, 5, 0)
    again = FoldPlan.from_dict(json.loads(json.dumps(plan.to_dict())))
    assert np.array_equal(plan.assignments, again.assignments) and again.seed == 0


def test_holdout_80_20(heart):
    plan = stratified_holdout(heart, 0.2, seed=1)
    tr, te = plan.split(0)
    assert len(te) == 54 and len(tr) == 216
    assert np.bincount(heart.labels[te]).tolist() == [30, 24]


def test_checksum_mismatch_rejected(tmp_path):
    p = write(tmp_path, "a,b,y\n1,2,1\n3,4,2\n")
    schema = dict(SCHEMA, sha256="0" * 64)
    with pytest.raises(DataError, match="sha256"):
        load_dataset(p, schema)
    ds = load_dataset(p, schema, verify_checksum=False)
    assert ds.features.shape == (2, 2)
