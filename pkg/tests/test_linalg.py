import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bfpcl.errors import InvalidInputError, NumericalError
from bfpcl.linalg import frobenius_norm, svd_thin

matrices = st.tuples(st.integers(1, 8), st.integers(1, 8)).flatmap(
    lambda s: arrays(np.float64, s, elements=st.floats(-1e3, 1e3, allow_nan=False, width=64))
)


@pytest.mark.example
def test_identity():
    U, S, V = svd_thin(np.eye(3))
    assert np.allclose(S, 1.0)
    assert np.allclose(U.T @ U, np.eye(3), atol=1e-12)


@pytest.mark.example
def test_diagonal():
    _, S, _ = svd_thin(np.diag([3.0, 2.0, 1.0]))
    assert np.allclose(S, [3, 2, 1])


@pytest.mark.example
def test_random_reconstruction():
    Z = np.random.default_rng(0).normal(size=(5, 8))
    U, S, V = svd_thin(Z)
    assert U.shape == (5, 5) and V.shape == (8, 5)
    rel = np.linalg.norm(U @ np.diag(S) @ V.T - Z) / np.linalg.norm(Z)
    assert rel < 1e-10


@pytest.mark.example
@pytest.mark.parametrize("Z, expected", [(np.zeros((2, 3)), 0.0), (np.eye(2), np.sqrt(2)), (np.array([[3.0, 4.0]]), 5.0)])
def test_frobenius(Z, expected):
    assert frobenius_norm(Z) == pytest.approx(expected, abs=1e-15)


def test_non_finite_rejected():
    with pytest.raises(InvalidInputError):
        svd_thin(np.array([[1.0, np.nan]]))
    with pytest.raises(InvalidInputError):
        frobenius_norm(np.array([[np.inf]]))


def test_non_convergence_is_reported(monkeypatch):
    def boom(*a, **k):
        raise np.linalg.LinAlgError("SVD did not converge")

    monkeypatch.setattr(np.linalg, "svd", boom)
    with pytest.raises(NumericalError):
        svd_thin(np.eye(2))


@settings(max_examples=60, deadline=None)
@given(matrices)
def test_svd_contract(Z):
    U, S, V = svd_thin(Z)
    r = min(Z.shape)
    assert U.shape == (Z.shape[0], r) and S.shape == (r,) and V.shape == (Z.shape[1], r)
    assert np.all(S >= 0) and np.all(np.diff(S) <= 0)
    assert np.abs(U.T @ U - np.eye(r)).max() < 1e-8
    assert np.abs(V.T @ V - np.eye(r)).max() < 1e-8
    scale = max(np.linalg.norm(Z), 1e-300)
    assert np.linalg.norm(U @ np.diag(S) @ V.T - Z) / scale < 1e-8
    fro2 = frobenius_norm(Z) ** 2
    assert abs(fro2 - np.sum(S**2)) <= 1e-8 * max(fro2, 1e-300)


@settings(max_examples=20, deadline=None)
@given(matrices)
def test_svd_deterministic(Z):
    a, b = svd_thin(Z), svd_thin(Z.copy())
    for x, y in zip(a, b):
        assert np.array_equal(x, y)
