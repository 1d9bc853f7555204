import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bnn_spde.exceptions import NotFactorizable
from bnn_spde.numerics import Rng, as_rng, cholesky, eigh, eigvalsh, standard_normal


def test_cholesky_identity():
    L, jitter = cholesky(np.eye(3))
    np.testing.assert_array_equal(L, np.eye(3))
    assert jitter == 0.0


def test_cholesky_hand_factor():
    L, jitter = cholesky(np.array([[4.0, 2.0], [2.0, 3.0]]))
    np.testing.assert_allclose(L, [[2.0, 0.0], [1.0, np.sqrt(2.0)]], atol=1e-15)
    assert jitter == 0.0


def test_cholesky_indefinite_raises():
    with pytest.raises(NotFactorizable):
        cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]), cap=1e-6)


def test_cholesky_escalates_jitter_on_singular_matrix():
    v = np.ones((4, 1))
    L, jitter = cholesky(v @ v.T)
    assert jitter > 0
    np.testing.assert_allclose(L @ L.T, v @ v.T + jitter * np.eye(4), atol=1e-12)


def test_cholesky_jitter_start_is_first_try():
    L, jitter = cholesky(np.eye(2), jitter_start=1e-8)
    assert jitter == 1e-8


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 600), seed=st.integers(0, 2**31))
def test_cholesky_reconstruction(n, seed):
    a = np.random.default_rng(seed).standard_normal((n, n))
    m = a @ a.T + n * np.eye(n)
    L, jitter = cholesky(m)
    err = np.max(np.abs(L @ L.T - (m + jitter * np.eye(n))))
    assert err < 1e-10 * np.max(np.abs(m))


@pytest.mark.parametrize("m, expected", [
    (np.diag([3.0, 1.0]), [3.0, 1.0]),
    (np.array([[2.0, 1.0], [1.0, 2.0]]), [3.0, 1.0]),
    (np.eye(4), [1.0, 1.0, 1.0, 1.0]),
])
def test_eigh_examples(m, expected):
    w, v = eigh(m)
    np.testing.assert_allclose(w, expected, atol=1e-14)
    np.testing.assert_allclose(v.T @ v, np.eye(len(w)), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(n=st.integers(1, 80), seed=st.integers(0, 2**31))
def test_eigh_properties(n, seed):
    a = np.random.default_rng(seed).standard_normal((n, n))
    m = a + a.T
    w, v = eigh(m)
    assert np.all(np.diff(w) <= 0)
    assert np.max(np.abs(m @ v - v * w)) < 1e-8 * np.linalg.norm(m)
    np.testing.assert_allclose(v.T @ v, np.eye(n), atol=1e-10)
    assert abs(w.sum() - np.trace(m)) <= 1e-8 * max(1.0, np.abs(w).sum())
    np.testing.assert_allclose(eigvalsh(m), w, atol=1e-10 * max(1.0, np.abs(w).max()))


def test_standard_normal_deterministic():
    np.testing.assert_array_equal(standard_normal(Rng(7), 100), standard_normal(Rng(7), 100))


def test_standard_normal_moments():
    x = standard_normal(Rng(3), 10**6)
    assert abs(x.mean()) < 0.01
    assert abs(x.var() - 1.0) < 0.01


def test_split_streams_differ_and_are_reproducible():
    root = Rng(11)
    a, b = root.split("a"), root.split("b")
    assert not np.array_equal(a.standard_normal(10), b.standard_normal(10))
    np.testing.assert_array_equal(Rng(11).split("a").standard_normal(10), Rng(11).split("a").standard_normal(10))


def test_split_does_not_depend_on_parent_consumption():
    p1, p2 = Rng(5), Rng(5)
    p1.standard_normal(1000)
    np.testing.assert_array_equal(p1.split("x").standard_normal(5), p2.split("x").standard_normal(5))


def test_as_rng_and_errors():
    assert as_rng(None).seed == 0
    assert as_rng(4).seed == 4
    r = Rng(9)
    assert as_rng(r) is r
    with pytest.raises(TypeError):
        as_rng("seed")
    with pytest.raises(ValueError):
        standard_normal(Rng(0), 0)
