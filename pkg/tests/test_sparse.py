import numpy as np
import pytest
import scipy.linalg as la
import scipy.sparse as sps
from hypothesis import given, settings, strategies as st

from spdekit.sparse import SparseMatrix, cg_solve, spmv


def random_spd(n, seed, cond=50.0):
    r = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(r.standard_normal((n, n)))
    return Q @ np.diag(np.geomspace(1.0, cond, n)) @ Q.T


def test_spmv_identity():
    np.testing.assert_array_equal(spmv(SparseMatrix.identity(3), [1, 2, 3]), [1, 2, 3])


def test_spmv_zero_matrix():
    Z = SparseMatrix.from_scipy(sps.csr_matrix((4, 4)))
    np.testing.assert_array_equal(Z @ np.arange(4.0), 0.0)


def test_spmv_hand_arithmetic():
    A = SparseMatrix.from_dense([[2, 1], [1, 2]], symmetric=True)
    np.testing.assert_array_equal(A @ np.array([1.0, 1.0]), [3.0, 3.0])


def test_spmv_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        spmv(SparseMatrix.identity(3), np.ones(4))


def test_csr_structure_checks():
    A = SparseMatrix.from_dense(random_spd(6, 1), symmetric=True)
    A.check()
    assert len(A.row_offsets) == 7
    bad = SparseMatrix(2, 2, np.array([0, 2, 1]), np.array([0, 1]), np.array([1.0, 1.0]),
                       _csr=sps.identity(2, format="csr"))
    with pytest.raises(ValueError):
        bad.check()
    unsym = SparseMatrix.from_dense([[1, 2], [0, 1]], symmetric=True)
    with pytest.raises(ValueError, match="symmetric"):
        unsym.check()


def test_cg_identity_one_iteration():
    x, rep = cg_solve(SparseMatrix.identity(2), np.array([5.0, -3.0]))
    np.testing.assert_allclose(x, [5, -3])
    assert rep.iterations == 1 and rep.converged


def test_cg_diagonal():
    A = SparseMatrix.from_dense(np.diag([1.0, 4.0]), symmetric=True)
    x, rep = cg_solve(A, np.array([1.0, 4.0]))
    np.testing.assert_allclose(x, [1, 1], atol=1e-14)


def test_cg_matches_dense_lu_oracle():
    Ad = random_spd(10, 7)
    b = np.random.default_rng(3).standard_normal(10)
    lu, piv = la.lu_factor(Ad)
    oracle = la.lu_solve((lu, piv), b)
    x, rep = cg_solve(SparseMatrix.from_dense(Ad, True), b, tol=1e-14)
    assert rep.converged
    np.testing.assert_allclose(x, oracle, atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 30), st.integers(0, 10_000), st.floats(1.0, 1e4))
def test_cg_residual_contract(n, seed, cond):
    A = SparseMatrix.from_dense(random_spd(n, seed, cond), True)
    b = np.random.default_rng(seed + 1).standard_normal(n)
    tol = 1e-9
    x, rep = cg_solve(A, b, tol=tol, record_history=True)
    assert rep.converged
    assert rep.final_residual_norm <= tol
    assert np.linalg.norm(A @ x - b) <= tol * np.linalg.norm(b) * (1 + 1e-8)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 30), st.integers(0, 10_000))
def test_cg_error_energy_norm_is_monotone(n, seed):
    # CG minimises the A-norm error over growing Krylov spaces, so it can
    # only decrease; the Euclidean residual norm has no such guarantee.
    Ad = random_spd(n, seed, 100.0)
    A = SparseMatrix.from_dense(Ad, True)
    b = np.random.default_rng(seed + 1).standard_normal(n)
    xs = np.linalg.solve(Ad, b)
    errs = []
    for k in range(1, n + 1):
        x, rep = cg_solve(A, b, tol=1e-300, max_iter=k)
        e = x - xs
        errs.append(np.sqrt(e @ Ad @ e))
    errs = np.array(errs)
    slack = 10 * np.finfo(float).eps * np.sqrt(xs @ Ad @ xs)
    assert np.all(np.diff(errs) <= slack)


def test_cg_residual_history_identity_preconditioned():
    # with an exact diagonal preconditioner on a diagonal system the residual drops in one step
    A = SparseMatrix.from_dense(np.diag([1.0, 10.0, 100.0]), True)
    _, rep = cg_solve(A, np.ones(3), record_history=True)
    h = rep.residual_history
    assert all(b <= a * (1 + 10 * np.finfo(float).eps) for a, b in zip(h, h[1:]))


def test_cg_block_columns_independent():
    A = SparseMatrix.from_dense(random_spd(12, 5), True)
    B = np.random.default_rng(9).standard_normal((12, 4))
    X, _ = cg_solve(A, B, tol=1e-10)
    for j in range(4):
        xj, _ = cg_solve(A, B[:, j], tol=1e-10)
        np.testing.assert_allclose(X[:, j], xj, rtol=1e-10, atol=1e-12)


def test_cg_reports_non_convergence():
    A = SparseMatrix.from_dense(random_spd(20, 2, 1e6), True)
    _, rep = cg_solve(A, np.ones(20), tol=1e-12, max_iter=2)
    assert not rep.converged and rep.iterations == 2


def test_cg_zero_rhs():
    x, rep = cg_solve(SparseMatrix.identity(3), np.zeros(3))
    np.testing.assert_array_equal(x, 0.0)
    assert rep.converged and rep.iterations == 0
