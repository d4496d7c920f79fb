import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pkmspc.data import Dataset, apply_scaler, fit_scaler, load_dataset, write_dataset
from pkmspc.errors import IngestionError, InputError
from pkmspc.synthetic import NAMES, benchmark


def write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoad:
    def test_three_by_two(self, tmp_path):
        ds = load_dataset(write(tmp_path, "a,b\n1,2\n3,4\n5,6\n"))
        assert (ds.n, ds.p) == (3, 2)
        assert ds.names == ("a", "b")
        np.testing.assert_array_equal(ds.X, [[1, 2], [3, 4], [5, 6]])
        assert ds.labels is None and ds.time is None

    def test_non_numeric_cell_names_row_and_column(self, tmp_path):
        text = "a,b\n1,2\n3,4\n5,6\n7,8\n9,oops\n"
        with pytest.raises(IngestionError) as err:
            load_dataset(write(tmp_path, text))
        assert err.value.row == 5
        assert err.value.column == "b"
        assert "row 5" in str(err.value) and "'b'" in str(err.value)

    def test_ragged_row(self, tmp_path):
        with pytest.raises(IngestionError) as err:
            load_dataset(write(tmp_path, "a,b\n1,2\n3\n"))
        assert err.value.row == 2

    def test_missing_file(self, tmp_path):
        with pytest.raises(IngestionError):
            load_dataset(tmp_path / "absent.csv")

    def test_empty_file(self, tmp_path):
        with pytest.raises(IngestionError):
            load_dataset(write(tmp_path, ""))

    def test_header_only(self, tmp_path):
        with pytest.raises(IngestionError):
            load_dataset(write(tmp_path, "a,b\n"))

    def test_label_and_time_split_off(self, tmp_path):
        ds = load_dataset(write(tmp_path, "time,a,label\n0,1.5,0\n1,2.5,1\n"))
        assert ds.names == ("a",)
        np.testing.assert_array_equal(ds.labels, [0, 1])
        np.testing.assert_array_equal(ds.time, [0, 1])

    def test_non_binary_label(self, tmp_path):
        with pytest.raises(IngestionError) as err:
            load_dataset(write(tmp_path, "a,label\n1,0\n2,2\n"))
        assert err.value.row == 2 and err.value.column == "label"

    def test_required_label_missing(self, tmp_path):
        with pytest.raises(IngestionError) as err:
            load_dataset(write(tmp_path, "a,b\n1,2\n"), require_labels=True)
        assert err.value.column == "label"

    def test_non_finite_rejected(self, tmp_path):
        with pytest.raises(IngestionError):
            load_dataset(write(tmp_path, "a\n1\nnan\n"))

    def test_delimiter(self, tmp_path):
        ds = load_dataset(write(tmp_path, "a;b\n1;2\n"), delimiter=";")
        assert ds.p == 2

    def test_duplicate_columns(self, tmp_path):
        with pytest.raises(IngestionError):
            load_dataset(write(tmp_path, "a,a\n1,2\n"))


class TestRoundTrip:
    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 4)),
                  elements=st.floats(-1e12, 1e12, allow_nan=False, allow_infinity=False)))
    def test_exact(self, tmp_path_factory, X):
        path = tmp_path_factory.mktemp("rt") / "x.csv"
        ds = Dataset(X, tuple(f"v{j}" for j in range(X.shape[1])))
        write_dataset(ds, path)
        back = load_dataset(path)
        np.testing.assert_array_equal(back.X, ds.X)
        assert back.names == ds.names

    def test_with_labels_and_time(self, tmp_path):
        h, m = benchmark(n_healthy=20, n_monitor=30, fault_start=10)
        write_dataset(m, tmp_path / "m.csv")
        back = load_dataset(tmp_path / "m.csv")
        np.testing.assert_array_equal(back.X, m.X)
        np.testing.assert_array_equal(back.labels, m.labels)
        np.testing.assert_array_equal(back.time, m.time)


class TestScaler:
    def test_training_standardized(self):
        X = np.random.default_rng(0).normal(3.0, 2.0, size=(50, 4))
        Z = apply_scaler(fit_scaler(X), X)
        assert np.all(np.abs(Z.mean(axis=0)) < 1e-12)
        np.testing.assert_allclose(Z.std(axis=0, ddof=1), 1.0, atol=1e-12)

    def test_two_point_hand_value(self):
        Z = fit_scaler(np.array([[5.0], [7.0]])).apply(np.array([[5.0], [7.0]]))
        np.testing.assert_allclose(Z.ravel(), [-1 / np.sqrt(2), 1 / np.sqrt(2)], rtol=0, atol=1e-15)

    def test_shift_arithmetic(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(40, 3))
        shift = np.array([1.0, -2.0, 0.5])
        sc = fit_scaler(X)
        Z = sc.apply(X + shift)
        np.testing.assert_allclose(Z.mean(axis=0), shift / sc.sd, atol=1e-12)

    def test_test_data_never_refits(self):
        X = np.random.default_rng(2).normal(size=(30, 2))
        sc = fit_scaler(X)
        before = (sc.mean.copy(), sc.sd.copy())
        sc.apply(X * 10 + 4)
        np.testing.assert_array_equal(sc.mean, before[0])
        np.testing.assert_array_equal(sc.sd, before[1])

    def test_constant_column_named(self):
        ds = Dataset(np.column_stack([np.arange(5.0), np.ones(5)]), ("flow", "valve"))
        with pytest.raises(InputError, match="valve"):
            fit_scaler(ds)

    def test_single_row(self):
        with pytest.raises(InputError):
            fit_scaler(np.ones((1, 3)))

    def test_dataset_in_dataset_out(self):
        h, m = benchmark(n_healthy=20, n_monitor=20, fault_start=10)
        out = apply_scaler(fit_scaler(h), m)
        assert isinstance(out, Dataset)
        np.testing.assert_array_equal(out.labels, m.labels)

    def test_width_mismatch(self):
        sc = fit_scaler(np.random.default_rng(0).normal(size=(5, 2)))
        with pytest.raises(InputError):
            sc.apply(Dataset(np.ones((3, 3)), ("a", "b", "c")))


class TestBenchmark:
    def test_shapes_and_labels(self):
        h, m = benchmark()
        assert (h.n, h.p, m.n) == (200, 10, 200)
        assert h.names == NAMES
        assert m.labels[:100].sum() == 0 and m.labels[100:].all()

    def test_reproducible(self):
        a, b = benchmark(seed=5), benchmark(seed=5)
        np.testing.assert_array_equal(a[1].X, b[1].X)

    def test_fault_is_mean_shift_on_x1(self):
        _, m = benchmark(shift=(0.0,) * 10)
        _, f = benchmark()
        d = f.X - m.X
        np.testing.assert_array_equal(d[:100], 0.0)
        np.testing.assert_allclose(d[100:, 0], 3.0, atol=1e-12)
        np.testing.assert_array_equal(d[100:, 1:], 0.0)
