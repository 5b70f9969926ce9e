import numpy as np
import pytest

from shapguard import data
from shapguard.data import (
    EmptyDatasetError,
    FeatureSchema,
    FlowDataset,
    ParseError,
    ScalerParams,
    SchemaError,
    SplitSpec,
)


def _write_csv(path, header, rows):
    lines = [",".join(header)]
    lines += [",".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _small_schema():
    return FeatureSchema(("a", "b", "c"))


# ---------------------------------------------------------------------------
# schema


def test_cic_schema_has_39_features_with_table_indices():
    schema = FeatureSchema.cic_iot2023()
    assert schema.m == 39
    assert schema.index_of("Header_Length") == 0
    assert schema.index_of("IAT") == 36
    assert schema.index_of("Number") == 37
    assert schema.index_of("Variance") == 38


def test_schema_rejects_duplicates_and_unknown_lookup():
    with pytest.raises(SchemaError):
        FeatureSchema(("x", "x"))
    with pytest.raises(SchemaError):
        _small_schema().index_of("nope")


# ---------------------------------------------------------------------------
# load_csv


def test_load_csv_maps_labels_via_benign_set(tmp_path):
    path = tmp_path / "flows.csv"
    _write_csv(
        path,
        ["a", "b", "c", "label"],
        [[1, 2, 3, "BenignTraffic"], [4, 5, 6, "DDoS-ICMP_Flood"]],
    )
    ds = data.load_csv(path, _small_schema())
    assert ds.y.tolist() == [0, 1]
    assert ds.X.tolist() == [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]


def test_load_csv_missing_column_names_it(tmp_path):
    schema = FeatureSchema.cic_iot2023()
    path = tmp_path / "flows.csv"
    header = [n for n in schema.names if n != "IAT"] + ["label"]
    _write_csv(path, header, [[0] * 38 + ["BenignTraffic"]])
    with pytest.raises(SchemaError, match="IAT"):
        data.load_csv(path, schema)


def test_load_csv_shape_preserved(tmp_path):
    schema = FeatureSchema.cic_iot2023()
    rng = np.random.default_rng(0)
    rows = [[*rng.uniform(0, 9, 39).round(3), "Mirai"] for _ in range(100)]
    path = tmp_path / "flows.csv"
    _write_csv(path, [*schema.names, "label"], rows)
    ds = data.load_csv(path, schema)
    assert (ds.n, ds.m) == (100, 39)
    assert ds.y.sum() == 100


def test_load_csv_non_numeric_cell_reports_row_and_column(tmp_path):
    path = tmp_path / "flows.csv"
    _write_csv(path, ["a", "b", "c", "label"], [[1, "oops", 3, "x"]])
    with pytest.raises(ParseError, match=r"row 2.*'b'"):
        data.load_csv(path, _small_schema())


def test_load_csv_empty_file_and_header_only(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("", encoding="utf-8")
    with pytest.raises(EmptyDatasetError):
        data.load_csv(empty, _small_schema())
    header_only = tmp_path / "header.csv"
    header_only.write_text("a,b,c,label\n", encoding="utf-8")
    with pytest.raises(EmptyDatasetError):
        data.load_csv(header_only, _small_schema())


def test_load_csv_drops_nan_inf_rows_with_warning(tmp_path):
    path = tmp_path / "flows.csv"
    _write_csv(
        path,
        ["a", "b", "c", "label"],
        [[1, 2, 3, "x"], ["nan", 2, 3, "x"], [1, "inf", 3, "x"], [7, 8, 9, "x"]],
    )
    with pytest.warns(UserWarning, match="dropped 2"):
        ds = data.load_csv(path, _small_schema())
    assert ds.n == 2


# ---------------------------------------------------------------------------
# scaler


def test_fit_scaler_column_min_max():
    ds = FlowDataset(FeatureSchema(("a",)), np.array([[2.0], [4.0], [6.0]]), [0, 0, 1])
    s = data.fit_scaler(ds)
    assert s.min.tolist() == [2.0]
    assert s.max.tolist() == [6.0]


def test_fit_scaler_constant_column():
    ds = FlowDataset(FeatureSchema(("a",)), np.array([[5.0], [5.0]]), [0, 1])
    s = data.fit_scaler(ds)
    assert s.min[0] == s.max[0] == 5.0


def test_fit_scaler_per_column_independence():
    ds = FlowDataset(
        FeatureSchema(("a", "b")), np.array([[0.0, 10.0], [1.0, 30.0]]), [0, 1]
    )
    s = data.fit_scaler(ds)
    assert s.min.tolist() == [0.0, 10.0]
    assert s.max.tolist() == [1.0, 30.0]


def test_apply_scaler_midpoint_clamp_and_degenerate():
    schema = FeatureSchema(("a", "b"))
    s = ScalerParams(min=np.array([2.0, 5.0]), max=np.array([6.0, 5.0]))
    ds = FlowDataset(schema, np.array([[4.0, 7.0], [10.0, 5.0]]), [0, 1])
    scaled = data.apply_scaler(ds, s)
    assert scaled.X[0, 0] == 0.5       # midpoint
    assert scaled.X[1, 0] == 1.0       # clamp above
    assert scaled.X[:, 1].tolist() == [0.0, 0.0]  # degenerate column


def test_apply_scaler_dimension_mismatch():
    s = ScalerParams(min=np.zeros(2), max=np.ones(2))
    ds = FlowDataset(_small_schema(), np.zeros((1, 3)), [0])
    with pytest.raises(SchemaError):
        data.apply_scaler(ds, s)


def test_rescaling_already_scaled_data_is_identity():
    rng = np.random.default_rng(3)
    schema = FeatureSchema.synthetic(5)
    ds = FlowDataset(schema, rng.uniform(-4, 9, (40, 5)), rng.integers(0, 2, 40))
    once = data.apply_scaler(ds, data.fit_scaler(ds))
    twice = data.apply_scaler(once, data.fit_scaler(once))
    assert np.max(np.abs(twice.X - once.X)) <= 1e-12


def test_scaled_values_always_in_unit_box():
    rng = np.random.default_rng(11)
    for trial in range(20):
        n, m = int(rng.integers(2, 30)), int(rng.integers(1, 8))
        X = rng.normal(0, 10.0 ** int(rng.integers(-3, 4)), (n, m))
        ds = FlowDataset(FeatureSchema.synthetic(m), X, rng.integers(0, 2, n))
        scaled = data.apply_scaler(ds, data.fit_scaler(ds))
        assert scaled.X.min() >= 0.0 and scaled.X.max() <= 1.0


# ---------------------------------------------------------------------------
# split


def _toy_dataset(n=10, seed=0):
    rng = np.random.default_rng(seed)
    y = np.array([0, 1] * (n // 2))
    return FlowDataset(FeatureSchema.synthetic(2), rng.uniform(0, 1, (n, 2)), y)


def test_split_sizes_and_determinism():
    ds = _toy_dataset(10)
    spec = SplitSpec(0.6, 0.2, 0.2, seed=7)
    tr, va, te = data.split(ds, spec)
    assert (tr.n, va.n, te.n) == (6, 2, 2)
    tr2, va2, te2 = data.split(ds, spec)
    assert np.array_equal(tr.X, tr2.X) and np.array_equal(te.y, te2.y)


def test_split_is_stratified_within_one_sample():
    ds = _toy_dataset(100, seed=5)
    tr, va, te = data.split(ds, SplitSpec(0.8, 0.1, 0.1, seed=3))
    for part in (tr, va, te):
        assert abs(part.y.sum() - part.n / 2) <= 1


def test_split_is_a_partition():
    ds = _toy_dataset(50, seed=2)
    key = ds.X[:, 0]
    tr, va, te = data.split(ds, SplitSpec(0.5, 0.25, 0.25, seed=9))
    recovered = np.sort(np.concatenate([tr.X[:, 0], va.X[:, 0], te.X[:, 0]]))
    assert np.array_equal(recovered, np.sort(key))
    assert tr.n + va.n + te.n == ds.n


def test_split_warns_when_class_missing_from_split():
    # a single malicious row cannot reach all three splits
    y = np.array([0] * 29 + [1])
    ds = FlowDataset(FeatureSchema.synthetic(2), np.random.default_rng(0).uniform(0, 1, (30, 2)), y)
    with pytest.warns(UserWarning, match="no rows of class"):
        data.split(ds, SplitSpec(0.4, 0.3, 0.3, seed=1))


def test_split_preconditions():
    ds = _toy_dataset(2)
    with pytest.raises(EmptyDatasetError):
        data.split(ds, SplitSpec(seed=0))
    with pytest.raises(ValueError):
        SplitSpec(0.5, 0.2, 0.2, seed=0)
    with pytest.raises(ValueError):
        SplitSpec(-0.2, 0.6, 0.6, seed=0)


# ---------------------------------------------------------------------------
# synthetic generator


def test_synth_shape_and_labels():
    ds = data.synth_generate(100, 10, class_separation=0.4, noise=0.05, seed=1)
    assert ds.n == 200 and ds.m == 10
    assert ds.y.sum() == 100
    assert ds.X.min() >= 0.0 and ds.X.max() <= 1.0


def test_synth_zero_separation_means_identical_class_distributions():
    ds = data.synth_generate(2000, 6, class_separation=0.0, noise=0.1, seed=4)
    benign = ds.X[ds.y == 0]
    malicious = ds.X[ds.y == 1]
    gap = np.abs(benign.mean(axis=0) - malicious.mean(axis=0))
    assert gap.max() < 0.02  # sampling error only


def test_synth_deterministic_under_seed():
    a = data.synth_generate(50, 7, 0.3, 0.1, seed=9)
    b = data.synth_generate(50, 7, 0.3, 0.1, seed=9)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)


def test_synth_noise_features_uninformative():
    # last ceil(m/4) features: identical class-conditional distribution
    ds = data.synth_generate(5000, 8, class_separation=0.6, noise=0.1, seed=2)
    tail = ds.X[:, 6:]
    gap = np.abs(tail[ds.y == 0].mean(axis=0) - tail[ds.y == 1].mean(axis=0))
    assert gap.max() < 0.01


def test_synth_preconditions():
    with pytest.raises(ValueError):
        data.synth_generate(0, 5, 0.3, 0.1, 0)
    with pytest.raises(ValueError):
        data.synth_generate(5, 1, 0.3, 0.1, 0)
    with pytest.raises(ValueError):
        data.synth_generate(5, 5, 0.3, -0.1, 0)


# ---------------------------------------------------------------------------
# persistence


def test_dataset_csv_roundtrip_is_exact(tmp_path):
    ds = data.synth_generate(20, 5, 0.3, 0.1, seed=6)
    path = tmp_path / "ds.csv"
    data.save_dataset(ds, path)
    back = data.load_dataset(path)
    assert np.array_equal(back.X, ds.X)
    assert np.array_equal(back.y, ds.y)
    assert back.schema.names == ds.schema.names


def test_scaler_json_roundtrip(tmp_path):
    schema = FeatureSchema.synthetic(3)
    s = ScalerParams(min=np.array([0.0, 1.5, -2.0]), max=np.array([1.0, 1.5, 4.0]))
    path = tmp_path / "scaler.json"
    data.save_scaler(s, schema, path)
    s2, schema2 = data.load_scaler(path)
    assert np.array_equal(s2.min, s.min) and np.array_equal(s2.max, s.max)
    assert schema2.names == schema.names


def test_dataset_is_immutable():
    ds = data.synth_generate(5, 4, 0.3, 0.1, seed=0)
    with pytest.raises(ValueError):
        ds.X[0, 0] = 5.0
