import math

import numpy as np
import pytest

from cpfn.data import (Dataset, forward_transform, ingest_csv, inverse_transform, kfold_split,
                       log_abs_jacobian, validation_split, write_csv)
from cpfn.errors import DimensionMismatch, EmptyDataset, InvalidConfig, ParseError


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_three_row_file(tmp_path):
    p = write(tmp_path, "x,y\n0.1,1\n0.2,2\n0.3,3\n")
    data = ingest_csv(p, ["x"], ["y"])
    assert data.n == 3 and data.d == 1 and data.q == 1
    np.testing.assert_array_equal(data.Y[:, 0], [1, 2, 3])


def test_log1p_transform(tmp_path):
    p = write(tmp_path, f"x,y\n0,0\n1,{math.e - 1!r}\n")
    data = ingest_csv(p, ["x"], ["y"], "log1p")
    np.testing.assert_allclose(data.Y[:, 0], [0.0, 1.0], atol=1e-15)
    np.testing.assert_allclose(data.raw_y()[:, 0], [0.0, math.e - 1], rtol=1e-15)
    assert data.y_transform == "log1p"


def test_non_numeric_cell_is_located(tmp_path):
    p = write(tmp_path, "x,y\n0.1,1\n0.2,abc\n0.3,3\n")
    with pytest.raises(ParseError) as info:
        ingest_csv(p, ["x"], ["y"])
    assert info.value.row == 2 and info.value.column == "y"
    assert "row 2" in str(info.value) and "'y'" in str(info.value)


def test_missing_values_are_dropped(tmp_path, caplog):
    p = write(tmp_path, "x,y,z\n0.1,1,a\n,2,b\n0.3,NA,c\n0.4,4,d\n")
    data = ingest_csv(p, ["x"], ["y"])
    assert data.n == 2
    assert "dropped 2 rows" in caplog.text


def test_missing_column_and_empty(tmp_path):
    p = write(tmp_path, "x,y\n0.1,1\n")
    with pytest.raises(ParseError):
        ingest_csv(p, ["x"], ["w"])
    with pytest.raises(EmptyDataset):
        ingest_csv(write(tmp_path, "x,y\n,\n", "e.csv"), ["x"], ["y"])
    with pytest.raises(FileNotFoundError):
        ingest_csv(tmp_path / "none.csv", ["x"], ["y"])


def test_discrete_codes_and_one_hot(tmp_path):
    p = write(tmp_path, "a,c,y\n0.5,2,1\n0.1,1,2\n0.7,2,3\n")
    raw = ingest_csv(p, ["a", "c"], ["y"], discrete_columns=["c"])
    assert raw.x_kinds == ["continuous", "discrete"]
    np.testing.assert_array_equal(raw.X[:, 1], [2, 1, 2])
    hot = ingest_csv(p, ["a", "c"], ["y"], discrete_columns=["c"], one_hot=True)
    assert hot.x_names == ["a", "c=1", "c=2"]
    np.testing.assert_array_equal(hot.X[:, 1:], [[0, 1], [1, 0], [0, 1]])


def test_transform_round_trip_and_jacobian():
    y = np.array([[0.0], [0.5], [3.0]])
    np.testing.assert_allclose(inverse_transform("log1p", forward_transform("log1p", y)), y, rtol=1e-15)
    np.testing.assert_allclose(log_abs_jacobian("log1p", y), -np.log1p(y[:, 0]))
    assert np.all(log_abs_jacobian("identity", y) == 0)
    with pytest.raises(InvalidConfig):
        forward_transform("log1p", np.array([-1.0]))
    with pytest.raises(InvalidConfig):
        forward_transform("sqrt", y)


def test_dataset_validation():
    with pytest.raises(DimensionMismatch):
        Dataset(np.zeros((3, 1)), np.zeros((2, 1)))
    with pytest.raises(DimensionMismatch):
        Dataset(np.array([[np.nan]]), np.zeros((1, 1)))


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    data = Dataset(rng.normal(size=(5, 2)), rng.normal(size=(5, 1)), ["a", "b"], ["y"])
    write_csv(data, tmp_path / "o.csv")
    back = ingest_csv(tmp_path / "o.csv", ["a", "b"], ["y"])
    np.testing.assert_array_equal(back.X, data.X)
    np.testing.assert_array_equal(back.Y, data.Y)


def test_kfold_partition():
    split = kfold_split(100, 5, seed=3)
    assert [len(f) for f in split.folds] == [20] * 5
    allidx = np.concatenate(split.folds)
    assert sorted(allidx) == list(range(100))
    tr, te = split.train_test(2)
    assert len(np.intersect1d(tr, te)) == 0 and len(tr) + len(te) == 100
    again = kfold_split(100, 5, seed=3)
    assert all(np.array_equal(a, b) for a, b in zip(split.folds, again.folds))
    sizes = [len(f) for f in kfold_split(103, 5, 0).folds]
    assert max(sizes) - min(sizes) <= 1
    with pytest.raises(InvalidConfig):
        kfold_split(3, 5, 0)


def test_validation_split_sizes():
    tr, va = validation_split(50, 0.1, np.random.default_rng(0))
    assert len(va) == 5 and len(tr) == 45
    tr, va = validation_split(50, 0.0, np.random.default_rng(0))
    assert len(va) == 0
