"""Sparse symmetric matrices and the positive definite factorization."""

import numpy as np
import pytest
import scipy.sparse as sp

from stgm import NotPositiveDefiniteError, SparseCholesky, SparseSymMatrix


def _random_spd(n, seed, density=0.3):
    rng = np.random.default_rng(seed)
    a = sp.random(n, n, density=density, random_state=rng)
    a = a + a.T + n * sp.identity(n)
    return a.tocsc()


def test_logdet_matches_dense():
    for seed in range(5):
        a = _random_spd(12, seed)
        fac = SparseCholesky(a)
        _, expect = np.linalg.slogdet(a.toarray())
        assert abs(fac.logdet - expect) < 1e-9


def test_solve_matches_dense():
    a = _random_spd(10, 3)
    fac = SparseCholesky(a)
    rng = np.random.default_rng(0)
    b = rng.standard_normal((10, 2))
    x = fac.solve(b)
    np.testing.assert_allclose(a.toarray() @ x, b, atol=1e-10)


def test_unwhiten_is_covariance_square_root():
    a = _random_spd(9, 5)
    fac = SparseCholesky(a)
    cols = [fac.unwhiten(e[:, None]).ravel() for e in np.eye(9)]
    b = np.column_stack(cols)
    np.testing.assert_allclose(b @ b.T, np.linalg.inv(a.toarray()), atol=1e-10)


def test_indefinite_matrix_rejected():
    d = sp.diags([1.0, -2.0, 3.0]).tocsc()
    with pytest.raises(NotPositiveDefiniteError):
        SparseCholesky(d)


def test_singular_matrix_rejected():
    d = sp.diags([1.0, 0.0, 3.0]).tocsc()
    with pytest.raises(NotPositiveDefiniteError):
        SparseCholesky(d)


def test_sym_matrix_validates_symmetry():
    bad = sp.csc_matrix(np.array([[1.0, 0.5], [0.2, 1.0]]))
    with pytest.raises(ValueError, match="symmetric"):
        SparseSymMatrix(bad)


def test_sym_matrix_set_values_invalidates_factor():
    a = SparseSymMatrix(sp.identity(4, format="csc") * 2.0)
    ld1 = a.logdet()
    a.set_values(np.full(a.csc.nnz, 3.0))
    ld2 = a.logdet()
    assert abs(ld1 - 4 * np.log(2.0)) < 1e-12
    assert abs(ld2 - 4 * np.log(3.0)) < 1e-12


def test_matrix_market_round_trip(tmp_path):
    import scipy.io

    a = SparseSymMatrix(_random_spd(6, 7))
    path = tmp_path / "q.mtx"
    a.to_matrix_market(path)
    back = scipy.io.mmread(path)
    np.testing.assert_allclose(back.toarray(), a.toarray(), atol=1e-15)
