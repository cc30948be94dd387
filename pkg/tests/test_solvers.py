import numpy as np
import pytest
import scipy.linalg
from scipy.sparse import csr_matrix, diags

from errors import MaxIterations, NotConsistent, NotConverged, RankDeficientB
from solvers.eigen import eig_generalized
from solvers.krylov import SaddleSystem, cg_solve, minres_saddle_solve


def spd(n, seed=0):
    rng = np.random.default_rng(seed)
    Q = rng.standard_normal((n, n))
    return Q @ Q.T + n * np.eye(n)


def periodic_laplacian(n):
    main = 2.0 * np.ones(n)
    A = diags([main, -np.ones(n - 1), -np.ones(n - 1)], [0, 1, -1]).tolil()
    A[0, n - 1] = A[n - 1, 0] = -1.0
    return csr_matrix(A)


def test_cg_matches_dense_solve():
    A = spd(30)
    b = np.random.default_rng(1).standard_normal(30)
    x, report = cg_solve(A, b, tol=1e-12)
    assert report.converged
    assert np.linalg.norm(x - np.linalg.solve(A, b)) <= 1e-9 * np.linalg.norm(x)
    assert report.history[0] == 1.0 and report.history[-1] <= 1e-12
    assert np.all(np.diff(report.energy_history) <= 1e-12), "CG energy must decrease"


def test_cg_zero_rhs_returns_zero():
    x, report = cg_solve(spd(5), np.zeros(5))
    assert not np.any(x) and report.iterations == 0


def test_cg_semidefinite_stays_in_range():
    n = 40
    A = periodic_laplacian(n)
    kernel = np.ones((n, 1)) / np.sqrt(n)
    b = np.sin(2 * np.pi * np.arange(n) / n)
    x, report = cg_solve(A, b, tol=1e-12, kernel_basis=kernel)
    assert report.range_defect < 1e-10
    assert np.linalg.norm(A @ x - b) < 1e-9
    assert abs(x.sum()) < 1e-9


def test_cg_rejects_inconsistent_rhs():
    n = 10
    with pytest.raises(NotConsistent):
        cg_solve(periodic_laplacian(n), np.ones(n), kernel_basis=np.ones((n, 1)) / np.sqrt(n))


def test_cg_iteration_cap():
    with pytest.raises(MaxIterations):
        cg_solve(spd(50), np.ones(50), tol=1e-14, maxiter=2)
    _, report = cg_solve(spd(50), np.ones(50), tol=1e-14, maxiter=2, raise_on_failure=False)
    assert not report.converged


def saddle_problem(seed=2):
    rng = np.random.default_rng(seed)
    n_v, n_p = 24, 6
    A = spd(n_v, seed)
    B = rng.standard_normal((n_p, n_v))
    B -= np.outer(np.ones(n_p), B.sum(axis=0)) / n_p
    return A, B, rng.standard_normal(n_v)


def test_minres_matches_direct_bordered_solve():
    A, B, f = saddle_problem()
    v, p, report = minres_saddle_solve(A, B, f, tol=1e-12)
    saddle = SaddleSystem(A, B)
    v_direct, p_direct = saddle.solve_direct(f)
    assert report.converged
    assert np.allclose(v, v_direct, atol=1e-9)
    assert np.allclose(p, p_direct, atol=1e-9)
    assert abs(p.sum()) < 1e-9, "Pressure mean is fixed to zero"
    assert np.linalg.norm(B @ v) < 1e-9


def test_saddle_rank_check():
    A, B, _ = saddle_problem()
    B[2] = 0.0
    with pytest.raises(RankDeficientB):
        SaddleSystem(A, B).check_rank()


def test_dense_and_arpack_eigs_agree_with_scipy():
    for n in (20, 60):
        K = spd(n, 3)
        M = np.diag(np.random.default_rng(4).uniform(1.0, 2.0, n))
        report = eig_generalized(K, M, 4)
        reference = scipy.linalg.eigh(K, M, eigvals_only=True)[:4]
        assert np.allclose(report.values, reference, rtol=1e-9)
        assert np.all(report.residuals <= 1e-8)
        gram = report.vectors.T @ M @ report.vectors
        assert np.allclose(gram, np.eye(4), atol=1e-8), "Eigenvectors are M-orthonormal"


def test_shifted_eigs_pick_nearest_values():
    n = 60
    K = np.diag(np.arange(1.0, n + 1))
    report = eig_generalized(K, np.eye(n), 3, shift=30.2)
    assert np.allclose(report.values, [29.0, 30.0, 31.0])
    assert report.values.min() < 30.2, "Values below an interior shift are returned too"
    assert np.allclose(eig_generalized(K, np.eye(n), 3, shift=0.0).values, [1.0, 2.0, 3.0])


def test_eigs_reject_too_many_pairs():
    with pytest.raises(NotConverged):
        eig_generalized(np.eye(3), np.eye(3), 5)
    with pytest.raises(ValueError):
        eig_generalized(np.eye(3), np.eye(3), 0)
