import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diprime.baselines import fit_greedy_tree, fit_nonprivate_median_tree
from diprime.data import (
    DataError,
    Dataset,
    bin_edges,
    equal_width_bins,
    load_csv,
    scale_target,
    schema_spec_of,
    spread_values,
    synth_classification,
    synth_regression,
    train_test_split,
    two_clusters,
    write_csv,
)
from diprime.splits import CategoricalSchema, DomainError, NumericSchema
from diprime.tree import TreeConfig, predict

SCHEMA = {
    "target": {"name": "y", "kind": "numeric", "range": [0, 10]},
    "columns": [
        {"name": "a", "kind": "numeric", "range": [0, 1]},
        {"name": "c", "kind": "categorical", "categories": ["red", "blue"]},
    ],
}


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_toy_file_round_trips(tmp_path):
    p = _write(tmp_path, "a,c,y\n0.25,red,1.5\n1.0,blue,10\n0,red,0\n")
    d = load_csv(p, SCHEMA, "regression")
    np.testing.assert_array_equal(d.X, [[0.25, 0], [1.0, 1], [0.0, 0]])
    np.testing.assert_array_equal(d.y, [1.5, 10, 0])
    assert not d.privacy_unsafe
    out = tmp_path / "again.csv"
    write_csv(d, out)
    again = load_csv(out, schema_spec_of(d), "regression")
    np.testing.assert_array_equal(again.X, d.X)
    np.testing.assert_array_equal(again.y, d.y)


def test_classification_round_trip(tmp_path):
    d = synth_classification(50, 3, np.random.default_rng(0))
    out = tmp_path / "c.csv"
    write_csv(d, out)
    spec = json.loads(json.dumps(schema_spec_of(d)))
    again = load_csv(out, spec, "classification")
    np.testing.assert_array_equal(again.X, d.X)
    np.testing.assert_array_equal(again.y, d.y)


def test_out_of_range_names_row_and_column_only(tmp_path):
    p = _write(tmp_path, "a,c,y\n0.5,red,1\n1.75,blue,2\n")
    with pytest.raises(DataError) as err:
        load_csv(p, SCHEMA, "regression")
    msg = str(err.value)
    assert "row 3" in msg and "column a" in msg and "1.75" not in msg


@pytest.mark.parametrize("text, fragment", [
    ("a,c,y\n0.5,green,1\n", "unknown category"),
    ("a,c,y\n0.5,red\n", "expected 3 fields"),
    ("a,c,y\n,red,1\n", "missing value"),
    ("a,c,y\nabc,red,1\n", "not a number"),
    ("a,c,y\n0.5,red,11\n", "target outside"),
    ("a,y\n0.5,1\n", "missing from"),
])
def test_malformed_rows_rejected(tmp_path, text, fragment):
    with pytest.raises(DataError, match=fragment):
        load_csv(_write(tmp_path, text), SCHEMA, "regression")


def test_missing_files(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_csv(tmp_path / "none.csv", SCHEMA, "regression")
    with pytest.raises(DataError, match="not found"):
        load_csv(_write(tmp_path, "a,c,y\n"), tmp_path / "none.json", "regression")


def test_infer_pads_one_percent(tmp_path):
    spec = {"target": {"name": "y", "kind": "numeric", "range": "infer"},
            "columns": [{"name": "a", "kind": "numeric", "range": "infer"}]}
    d = load_csv(_write(tmp_path, "a,y\n2,0.1\n12,0.2\n7,0.3\n"), spec, "regression")
    s = d.schemas[0]
    assert (s.lo, s.hi) == pytest.approx((1.9, 12.1))
    assert d.privacy_unsafe


def test_scale_target_examples():
    d = Dataset(np.zeros((2, 1)), np.array([2.0, 4.0]), [NumericSchema(0, 1)], "regression", B=4.0)
    s = scale_target(d, bounds=(2, 4))
    np.testing.assert_array_equal(s.y, [0.0, 1.0])
    assert s.B == 1.0 and not s.privacy_unsafe
    np.testing.assert_allclose(s.target_scaling.inverse(s.y), d.y, atol=1e-12)
    const = Dataset(np.zeros((3, 1)), np.full(3, 3.0), [NumericSchema(0, 1)], "regression", B=3.0)
    np.testing.assert_array_equal(scale_target(const, bounds=(3, 3)).y, [0.5] * 3)


def test_scale_target_observed_range_is_flagged():
    d = Dataset(np.zeros((2, 1)), np.array([2.0, 4.0]), [NumericSchema(0, 1)], "regression", B=4.0)
    assert scale_target(d).privacy_unsafe


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=30))
def test_scale_target_inverse(values):
    y = np.array(values)
    d = Dataset(np.zeros((len(y), 1)), y, [NumericSchema(0, 1)], "regression", B=50.0)
    s = scale_target(d)
    if y.max() > y.min():
        np.testing.assert_allclose(s.target_scaling.inverse(s.y), y, atol=1e-12)
    assert s.y.min() >= 0 and s.y.max() <= 1


def test_split_sizes_and_determinism():
    d = synth_regression(100, 2, np.random.default_rng(0))
    tr, te = train_test_split(d, 0.9, np.random.default_rng(1))
    assert (tr.n, te.n) == (90, 10)
    rows = {tuple(r) for r in tr.X} | {tuple(r) for r in te.X}
    assert len(rows) == 100
    tr2, _ = train_test_split(d, 0.9, np.random.default_rng(1))
    np.testing.assert_array_equal(tr.X, tr2.X)


def test_binning_examples():
    X = np.array([[0.35], [0.2], [1.0], [0.0]])
    d = Dataset(X, np.zeros(4), [NumericSchema(0, 1)], "regression")
    b = equal_width_bins(d, 5)
    np.testing.assert_array_equal(b.X[:, 0], [1, 1, 4, 0])
    assert isinstance(b.schemas[0], CategoricalSchema) and len(b.schemas[0].categories) == 5


def test_bin_edges_depend_on_schema_only():
    s = NumericSchema(-2, 3)
    a = Dataset(np.array([[0.0]]), np.zeros(1), [s], "regression")
    b = Dataset(np.array([[-2.0], [3.0], [1.0]]), np.zeros(3), [s], "regression")
    np.testing.assert_array_equal(bin_edges(s, 5), [-2, -1, 0, 1, 2, 3])
    assert equal_width_bins(a, 5).schemas == equal_width_bins(b, 5).schemas


def test_categorical_columns_untouched_by_binning():
    d = Dataset(np.array([[1.0, 0.5]]), np.zeros(1), [CategoricalSchema(("a", "b")), NumericSchema(0, 1)],
                "regression")
    b = equal_width_bins(d, 4)
    assert b.X[0, 0] == 1.0 and b.schemas[0] == d.schemas[0]


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 1)), np.array([0.0, 2.0]), [NumericSchema(0, 1)], "regression")
    with pytest.raises(DomainError):
        Dataset(np.array([[2.0]]), np.zeros(1), [NumericSchema(0, 1)], "regression")
    with pytest.raises(DataError):
        Dataset(np.zeros((1, 1)), np.array([0]), [NumericSchema(0, 1)], "classification")


def test_spread_values_example():
    x = spread_values(100, 10, 0.1, 1.0, np.random.default_rng(0))
    assert x[100 - 10 - 1] - x[10] <= 0.1 + 1e-12
    assert x.min() >= 0 and x.max() <= 1


@settings(max_examples=50, deadline=None)
@given(st.integers(5, 200), st.floats(0.01, 0.9), st.integers(0, 10_000))
def test_spread_values_property(n, d, seed):
    t = (n - 1) // 3
    x = spread_values(n, t, d, 1.0, np.random.default_rng(seed))
    assert np.all(np.diff(x) >= 0)
    assert x[n - t - 1] - x[t] <= d + 1e-12


def test_zero_signal_cannot_beat_variance():
    d = synth_regression(4000, 3, np.random.default_rng(2), signal=0.0)
    tr, te = train_test_split(d, 0.5, np.random.default_rng(3))
    tree = fit_greedy_tree(tr, TreeConfig(3), np.random.default_rng(4))
    mse = np.mean((predict(tree, te.X, "regression") - te.y) ** 2)
    assert mse >= 0.98 * te.y.var()


def test_two_clusters_separable_by_median_tree():
    d = two_clusters(200, 2, np.random.default_rng(0))
    tree = fit_nonprivate_median_tree(d, TreeConfig(1), np.random.default_rng(1))
    assert np.mean(predict(tree, d.X, "classification") == d.y) == 1.0


def test_generators_seeded():
    a = synth_regression(50, 3, np.random.default_rng(7), skew=2)
    b = synth_regression(50, 3, np.random.default_rng(7), skew=2)
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.y, b.y)
