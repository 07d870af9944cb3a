import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from msplit.linalg import (NumericalError, cholesky_check, eig_gsym,
                           factorize_spd, require_symmetric, smallest_pivot,
                           solve_spd)

from _oracles import charpoly_eigs, random_spd
from conftest import rng_for


def test_solve_spd_matches_dense_oracle():
    rng = rng_for("solve_spd_oracle")
    for n in (1, 2, 7, 19, 32):
        mat = random_spd(rng, n)
        rhs = rng.standard_normal(n)
        x = solve_spd(sp.csr_matrix(mat), rhs)
        assert np.allclose(x, np.linalg.solve(mat, rhs), atol=1e-10, rtol=1e-10)


def test_solve_spd_zero_rhs():
    mat = sp.csr_matrix(np.eye(3))
    assert np.array_equal(solve_spd(mat, np.zeros(3)), np.zeros(3))


def test_factorize_solve_many():
    rng = rng_for("solve_many")
    mat = random_spd(rng, 9)
    rhs = rng.standard_normal((9, 4))
    factor = factorize_spd(sp.csr_matrix(mat))
    block = factor.solve_many(rhs)
    for j in range(4):
        assert np.array_equal(block[:, j], factor.solve(rhs[:, j]))


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 10), seed=st.integers(0, 2**31 - 1),
       a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_solve_spd_is_linear(n, seed, a, b):
    rng = np.random.default_rng(seed)
    mat = sp.csr_matrix(random_spd(rng, n))
    r1 = rng.standard_normal(n)
    r2 = rng.standard_normal(n)
    factor = factorize_spd(mat)
    combined = factor.solve(a * r1 + b * r2)
    separate = a * factor.solve(r1) + b * factor.solve(r2)
    assert np.allclose(combined, separate, atol=1e-8)


def test_eig_gsym_basic_properties():
    rng = rng_for("eig_props")
    a = random_spd(rng, 8, shift=0.0)
    s = random_spd(rng, 8)
    res = eig_gsym(a, s)
    assert res.n == 8
    assert np.all(np.diff(res.values) >= -1e-12)
    v = res.vectors
    assert np.allclose(v.T @ s @ v, np.eye(8), atol=1e-10)
    assert np.allclose(a @ v, s @ v * res.values, atol=1e-8)


def test_eig_gsym_trace_identity():
    rng = rng_for("eig_trace")
    a = random_spd(rng, 6, shift=0.0)
    s = random_spd(rng, 6)
    res = eig_gsym(a, s)
    assert res.values.sum() == pytest.approx(np.trace(np.linalg.solve(s, a)),
                                             rel=1e-10)


def test_eig_gsym_matches_characteristic_polynomial():
    rng = rng_for("eig_charpoly")
    for n in (1, 2, 3, 4):
        a = random_spd(rng, n, shift=0.0)
        s = random_spd(rng, n)
        res = eig_gsym(a, s)
        expected = charpoly_eigs(a, s)
        assert np.allclose(res.values, expected, atol=1e-8, rtol=1e-8)


def test_eig_gsym_rejects_indefinite_mass():
    rng = rng_for("eig_bad_mass")
    a = random_spd(rng, 4)
    with pytest.raises(NumericalError):
        eig_gsym(a, -np.eye(4))


def test_cholesky_check():
    rng = rng_for("chol_check")
    assert cholesky_check(random_spd(rng, 5))
    assert not cholesky_check(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert not cholesky_check(np.zeros((3, 3)))
    # positive definite but with a pivot below the relative floor
    nearly = np.array([[1.0, 1.0], [1.0, 1.0 + 1e-16]])
    assert not cholesky_check(nearly)


def test_smallest_pivot():
    diag = np.diag([4.0, 9.0, 1.0])
    assert smallest_pivot(diag) == pytest.approx(1.0)
    indef = np.array([[1.0, 3.0], [3.0, 1.0]])
    assert smallest_pivot(indef) == pytest.approx(-2.0)
    assert smallest_pivot(np.zeros((0, 0))) == 0.0


def test_require_symmetric():
    require_symmetric(np.eye(3))
    require_symmetric(sp.eye(3, format="csr"))
    with pytest.raises(ValueError):
        require_symmetric(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        require_symmetric(np.zeros((2, 3)))
