import numpy as np
import pytest

from skc.data import Dataset, ingest_csv
from skc.exceptions import DataError


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_three_rows(tmp_path):
    d = ingest_csv(write(tmp_path, "x,y\n1,2\n2,5\n4,3\n"), "y")
    assert d.n == 3 and d.d == 1
    assert abs(d.y.mean()) < 1e-12
    assert d.target_name == "y" and d.column_names == ["x"]


def test_target_defaults_to_last_column(tmp_path):
    d = ingest_csv(write(tmp_path, "a,b,c\n1,2,3\n2,1,5\n3,7,4\n"))
    assert d.target_name == "c" and d.column_names == ["a", "b"]


def test_columns_selection(tmp_path):
    d = ingest_csv(write(tmp_path, "a,b,c\n1,2,3\n2,1,5\n3,7,4\n"), "c", ["b"])
    assert d.column_names == ["b"]
    assert np.allclose(d.x_original()[:, 0], [2, 1, 7])


def test_missing_row_dropped_with_warning(tmp_path):
    with pytest.warns(UserWarning, match="dropped 1"):
        d = ingest_csv(write(tmp_path, "x,y\n1,2\n2,NaN\n3,1\n4,0\n"), "y")
    assert d.n == 3 and d.dropped_rows == 1


def test_normalization_invariants(rng):
    X = rng.normal(5, 3, size=(50, 3))
    y = rng.normal(-2, 0.5, size=50)
    d = Dataset.normalized(X, y)
    assert np.allclose(d.X.mean(0), 0, atol=1e-10) and np.allclose(d.X.var(0), 1, atol=1e-10)
    assert abs(d.y.mean()) < 1e-10 and abs(d.y.var() - 1) < 1e-10
    assert np.max(np.abs(d.x_original() - X)) <= 1e-12 * np.max(np.abs(X))
    assert np.max(np.abs(d.y_original() - y)) <= 1e-12 * np.max(np.abs(y))


def test_unparseable_cell_names_row_and_column(tmp_path):
    with pytest.raises(DataError, match=r"row 3, column 'x'"):
        ingest_csv(write(tmp_path, "x,y\n1,2\nabc,3\n"), "y")


def test_constant_column(tmp_path):
    with pytest.raises(DataError, match="constant"):
        ingest_csv(write(tmp_path, "x,y\n1,2\n1,3\n1,4\n"), "y")


def test_bad_inputs(tmp_path):
    with pytest.raises(DataError, match="not in header"):
        ingest_csv(write(tmp_path, "x,y\n1,2\n2,3\n"), "z")
    with pytest.raises(DataError, match="cannot read"):
        ingest_csv(tmp_path / "missing.csv")
    with pytest.raises(DataError, match="empty"):
        ingest_csv(write(tmp_path, "", "e.csv"))
    with pytest.raises(DataError, match="fields"):
        ingest_csv(write(tmp_path, "x,y\n1,2,3\n", "f.csv"))
    with pytest.raises(DataError, match="two complete rows"):
        ingest_csv(write(tmp_path, "x,y\n1,2\n", "g.csv"))


def test_dataset_rejects_nonfinite():
    with pytest.raises(DataError):
        Dataset(np.array([[0.0], [np.inf]]), np.zeros(2))
    with pytest.raises(DataError):
        Dataset(np.zeros((3, 1)), np.zeros(2))


def test_subset_keeps_transform(rng):
    d = Dataset.normalized(rng.normal(size=(10, 2)), rng.normal(size=10))
    s = d.subset([0, 3, 4])
    assert s.n == 3 and np.array_equal(s.x_std, d.x_std)
