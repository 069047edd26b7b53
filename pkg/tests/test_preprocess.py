import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from impactloc.preprocess import Standardizer, ZeroRowWarning

# Two TDOA rows where feature standardisation flips the order within row 0
# (column 1 is small in absolute terms but large relative to its column).
WITNESS = np.array([[0.0, 0.10, 0.50],
                    [0.0, 0.05, 0.90],
                    [0.3, 0.00, 0.20]])


def test_fs_population_std():
    s = Standardizer("fs").fit(np.array([[1.0], [2.0], [3.0]]))
    np.testing.assert_allclose(s.mean_, [2.0])
    np.testing.assert_allclose(s.scale_, [np.sqrt(2 / 3)])
    np.testing.assert_allclose(s.transform([[1.0], [2.0], [3.0]]).ravel(),
                               [-1.2247, 0.0, 1.2247], atol=1e-4)


def test_fs_constant_column_named():
    with pytest.raises(ValueError, match="column 1 has zero variance"):
        Standardizer("fs").fit([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]])


def test_ss_examples():
    s = Standardizer("ss").fit(np.ones((1, 2)))
    np.testing.assert_allclose(s.transform([[3.0, 4.0]]), [[0.6, 0.8]])


def test_ss_zero_row_warns():
    s = Standardizer("ss").fit(np.ones((1, 3)))
    with pytest.warns(ZeroRowWarning):
        out = s.transform([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    np.testing.assert_array_equal(out, [[0, 0, 0], [1, 0, 0]])


def test_none_identity():
    X = np.random.default_rng(0).random((4, 3))
    s = Standardizer("none").fit(X)
    np.testing.assert_array_equal(s.transform(X), X)
    Y, V = s.inverse_transform_outputs(X, X)
    np.testing.assert_array_equal(Y, X)
    np.testing.assert_array_equal(V, X)


def test_output_round_trip_and_variance_scaling():
    rng = np.random.default_rng(1)
    Y = rng.normal(100, 10, size=(20, 2))
    s = Standardizer("fs").fit(Y)
    back, _ = s.inverse_transform_outputs(s.transform(Y), np.ones_like(Y))
    np.testing.assert_allclose(back, Y, atol=1e-10)

    s = Standardizer("fs").fit(np.array([[-10.0], [10.0]]))
    _, v = s.inverse_transform_outputs([[0.0]], [[1.0]])
    np.testing.assert_allclose(v, [[100.0]])


def test_unfitted_and_bad_mode():
    with pytest.raises(NotFittedError):
        Standardizer("fs").inverse_transform_outputs([[0.0]], [[1.0]])
    with pytest.raises(ValueError, match="unknown"):
        Standardizer("zz").fit([[1.0]])
    s = Standardizer("ss").fit([[1.0, 2.0]])
    with pytest.raises(ValueError):
        s.inverse_transform_outputs([[0.0, 1.0]], [[1.0, 1.0]])


def test_sklearn_api():
    s = Standardizer("fs")
    assert s.get_params() == {"mode": "fs"}
    c = clone(s)
    assert c.mode == "fs" and c is not s
    X = WITNESS
    np.testing.assert_allclose(s.fit_transform(X), Standardizer("fs").fit(X).transform(X))


def test_state_round_trip():
    s = Standardizer("fs").fit(WITNESS)
    r = Standardizer.from_state(s.get_state())
    np.testing.assert_array_equal(r.transform(WITNESS), s.transform(WITNESS))


def test_witness_order():
    ss = Standardizer("ss").fit(WITNESS).transform(WITNESS)
    fs = Standardizer("fs").fit(WITNESS).transform(WITNESS)
    order = np.argsort(WITNESS[0], kind="stable")
    np.testing.assert_array_equal(np.argsort(ss[0], kind="stable"), order)
    assert not np.array_equal(np.argsort(fs[0], kind="stable"), order)


finite = st.floats(0.0, 50.0, allow_nan=False)


@given(arrays(np.float64, (6, 4), elements=finite))
def test_ss_unit_norm_and_order(X):
    X = X[np.linalg.norm(X, axis=1) > 1e-3]
    if len(X) == 0:
        return
    Z = Standardizer("ss").fit(X).transform(X)
    np.testing.assert_allclose(np.linalg.norm(Z, axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(np.argsort(Z, axis=1, kind="stable"),
                                  np.argsort(X, axis=1, kind="stable"))


@given(arrays(np.float64, (8, 3), elements=st.floats(-50, 50)))
def test_fs_moments(X):
    if np.any(X.std(axis=0) < 1e-3):
        return
    Z = Standardizer("fs").fit(X).transform(X)
    np.testing.assert_allclose(Z.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(Z.std(axis=0), 1.0, atol=1e-12)
