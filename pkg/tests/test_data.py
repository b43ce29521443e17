import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose

from linkadditive.data import DataError, Dataset, load_csv, make_dataset, rescale_to_cube


def _write(tmp_path, text):
    path = tmp_path / "d.csv"
    path.write_text(text)
    return path


def test_load_and_rescale(tmp_path):
    path = _write(tmp_path, "y,a,b\n1,0,10\n0,2,20\n1,4,15\n")
    Y, X, names = load_csv(path)
    assert names == ["a", "b"]
    ds = make_dataset(Y, X, names)
    assert_allclose(ds.X[:, 0], [-1, 0, 1])
    assert_allclose(ds.X[:, 1], [-1, 1, 0])
    assert_allclose(ds.rescale.inverse(ds.X), X)
    assert_allclose(ds.rescale.inverse_coordinate(1, np.array([0.0])), [15.0])


def test_column_selection(tmp_path):
    path = _write(tmp_path, "a,y,b,c\n0,1,10,3\n2,0,20,4\n")
    Y, X, names = load_csv(path, response="y", covariates=["c", "a"])
    assert_allclose(Y, [1, 0])
    assert_allclose(X, [[3, 0], [4, 2]])
    with pytest.raises(DataError, match="'z'"):
        load_csv(path, response="z")


@pytest.mark.parametrize(
    "text, match",
    [
        ("y,a,b\n", "empty data"),
        ("", "empty file"),
        ("y,a,b\n1,2\n", "row 2"),
        ("y,a,b\n1,2,x\n", "non-numeric value 'x' at row 2, column 'b'"),
        ("y,a,b\n1,,3\n", "missing value at row 2, column 'a'"),
    ],
)
def test_malformed_csv(tmp_path, text, match):
    with pytest.raises(DataError, match=match):
        load_csv(_write(tmp_path, text))


def test_missing_file(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_csv(tmp_path / "nope.csv")


def test_constant_column():
    with pytest.raises(DataError, match=r"\[1\]"):
        rescale_to_cube(np.array([[0.0, 1.0], [1.0, 1.0]]))


def test_dataset_validation():
    with pytest.raises(DataError, match="d >= 2"):
        Dataset(np.zeros(3), np.zeros((3, 1)))
    with pytest.raises(DataError, match="rescale"):
        Dataset(np.zeros(2), np.array([[0.0, 2.0], [0.0, 0.0]]))
    with pytest.raises(DataError, match="non-finite"):
        Dataset(np.array([np.nan, 0.0]), np.zeros((2, 2)))
    ds = Dataset(np.zeros(2), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        ds.X[0, 0] = 1.0


@settings(max_examples=50, deadline=None)
@given(arrays(float, (12, 3), elements=st.floats(-1e3, 1e3)))
def test_rescale_maps_onto_cube(X):
    if np.any(np.ptp(X, axis=0) < 1e-6):
        return
    Z, rec = rescale_to_cube(X)
    assert Z.min() == -1.0 and Z.max() == 1.0
    assert np.all(Z.min(axis=0) == -1.0) and np.all(Z.max(axis=0) == 1.0)
    assert_allclose(rec.inverse(Z), X, atol=1e-9 * (1 + np.abs(X).max()))
