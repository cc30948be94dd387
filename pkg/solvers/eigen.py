"""Shift-invert Lanczos for ``A x = lambda M x``, optionally restricted to ``ker B``.

The unconstrained case factorises ``A - sigma M`` once with SuperLU and hands
ARPACK the solve as ``OPinv``. With a divergence constraint the inner operator
is the velocity part of the bordered Stokes solve, so ARPACK only ever sees
discretely divergence-free iterates; the pressure kernel maps to zero and is
never selected by the largest-magnitude ordering.
"""
from __future__ import annotations

import logging
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.sparse import csc_matrix, csr_matrix
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh, lsqr, splu

from errors import InnerSolveFailure, NotConverged, Stagnation
from solvers.krylov import SaddleSystem
from solvers.reports import EigReport

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-8
DIVERGENCE_TOL = 1e-8
DENSE_LIMIT = 40
INNER_TOL = 1e-12
V0_SEED = 1234


def spectral_scale(A, M) -> float:
    a = np.abs(A.diagonal()).max() if A.shape[0] else 1.0
    m = np.abs(M.diagonal()).max() if M.shape[0] else 1.0
    return float(a / m) if m > 0 else float(a or 1.0)


def _start_vector(n: int) -> np.ndarray:
    return np.random.default_rng(V0_SEED).standard_normal(n)


def _rayleigh_ritz(A, M, V: np.ndarray):
    """Refine a basis into M-orthonormal Ritz pairs sorted ascending."""
    Ar = V.T @ (A @ V)
    Mr = V.T @ (M @ V)
    theta, Y = scipy.linalg.eigh(0.5 * (Ar + Ar.T), 0.5 * (Mr + Mr.T))
    return theta, V @ Y


def _relative_residuals(A, M, values, vectors, extra: Optional[np.ndarray] = None) -> np.ndarray:
    AV = A @ vectors
    R = AV - (M @ vectors) * values
    if extra is not None:
        R = R + extra
    scale = np.maximum(np.linalg.norm(AV, axis=0), 1e-300)
    return np.linalg.norm(R, axis=0) / scale


def _nearest(values: np.ndarray, shift: float, k: int) -> np.ndarray:
    return np.sort(np.argsort(np.abs(values - shift), kind="stable")[:k])


def _shift_invert_operator(A, M, shift: float) -> tuple:
    scale = spectral_scale(A, M)
    sigma = shift
    for attempt in range(2):
        try:
            lu = splu(csc_matrix(A - sigma * M))
            return LinearOperator(A.shape, matvec=lu.solve, dtype=float), sigma
        except RuntimeError:
            logger.info("shift %.6g hits the spectrum, perturbing by 1e-3 * %.3g", sigma, scale)
            sigma = sigma + 1e-3 * scale
    raise InnerSolveFailure(f"Cannot factorize A - sigma M near shift {shift}")


def eig_generalized(A, M, k: int, shift: float = 0.0, constraint=None,
                    pressure_weights: Optional[np.ndarray] = None,
                    pressure_scaling: Optional[np.ndarray] = None,
                    inner_solver: str = "direct", residual_tol: float = RESIDUAL_TOL) -> EigReport:
    """The ``k`` eigenpairs nearest ``shift``, returned in ascending order.

    With ``shift`` at or below the spectrum (0 for the SPD problems here) these are
    the ``k`` smallest eigenvalues. A shift inside the spectrum gives the values
    closest to it on both sides, not the ``k`` smallest above it; window slicing
    relies on this to certify the interval ``shift +- max|lambda - shift|``.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    A = csr_matrix(A)
    M = csr_matrix(M)
    n = A.shape[0]
    if constraint is not None:
        return _constrained_eigs(A, M, csr_matrix(constraint), k, shift, pressure_weights,
                                 pressure_scaling, inner_solver, residual_tol)
    if k > n:
        raise NotConverged(f"Requested {k} eigenpairs of a {n}-dimensional problem", n, k)

    if n <= DENSE_LIMIT or k >= n - 1:
        values, vectors = scipy.linalg.eigh(A.toarray(), M.toarray())
        keep = _nearest(values, shift, k)
        values, vectors = values[keep], vectors[:, keep]
        sigma = shift
    else:
        OPinv, sigma = _shift_invert_operator(A, M, shift)
        try:
            _, vectors = eigsh(A, k=k, M=M, sigma=sigma, which="LM", OPinv=OPinv, v0=_start_vector(n))
        except ArpackNoConvergence as e:
            raise NotConverged(f"ARPACK found {len(e.eigenvalues)} of {k} eigenpairs",
                               len(e.eigenvalues), k) from e
        values, vectors = _rayleigh_ritz(A, M, vectors)

    residuals = _relative_residuals(A, M, values, vectors)
    good = int(np.sum(residuals <= residual_tol))
    if good < k:
        raise NotConverged(f"Only {good} of {k} eigenpairs reached residual {residual_tol:.0e} "
                           f"(worst {residuals.max():.3e})", good, k)
    logger.debug("eigs: %d pairs near %.6g, max residual %.3e", k, sigma, residuals.max())
    return EigReport(values, vectors, residuals, 0, sigma)


def _constrained_eigs(A, M, B, k: int, shift: float, pressure_weights, pressure_scaling,
                      inner_solver: str, residual_tol: float) -> EigReport:
    n = A.shape[0]
    sigma = shift
    saddle = None
    for attempt in range(2):
        saddle = SaddleSystem(A - sigma * M, B, pressure_weights, pressure_scaling)
        if inner_solver != "direct":
            break
        try:
            saddle.factorize()
            break
        except InnerSolveFailure:
            sigma = sigma + 1e-3 * spectral_scale(A, M)
            logger.info("constrained shift hits the spectrum, moved to %.6g", sigma)
    else:
        raise InnerSolveFailure(f"Cannot factorize the shifted saddle operator near {shift}")

    def inverse(x):
        if inner_solver == "direct":
            v, _ = saddle.solve_direct(x)
            return v
        try:
            v, _, _ = saddle.solve_minres(x, tol=INNER_TOL)
        except Stagnation as e:
            raise InnerSolveFailure(f"Inner MINRES solve failed: {e}") from e
        return v

    OPinv = LinearOperator((n, n), matvec=inverse, dtype=float)
    n_request = min(k + 2, n - 1)
    v0 = _start_vector(n)
    v0 = inverse(M @ v0)   # start inside ker B
    try:
        _, vectors = eigsh(A, k=n_request, M=M, sigma=sigma, which="LM", OPinv=OPinv, v0=v0)
    except ArpackNoConvergence as e:
        raise NotConverged(f"ARPACK found {len(e.eigenvalues)} of {k} constrained eigenpairs",
                           len(e.eigenvalues), k) from e

    divergence = np.linalg.norm(B @ vectors, axis=0) / np.maximum(
        np.sqrt(np.einsum("ij,ij->j", vectors, M @ vectors)), 1e-300)
    admissible = divergence <= DIVERGENCE_TOL
    filtered = int(np.sum(~admissible))
    if filtered:
        logger.info("filtered %d eigenvectors with |Bv| above %.0e", filtered, DIVERGENCE_TOL)
    if not np.any(admissible):
        raise NotConverged("No divergence-free eigenvectors found", 0, k)
    values, vectors = _rayleigh_ritz(A, M, vectors[:, admissible])
    keep = _nearest(values, sigma, k)
    values, vectors = values[keep], vectors[:, keep]

    pressures = np.empty((B.shape[0], len(values)))
    for j, (mu, v) in enumerate(zip(values, vectors.T)):
        target = mu * (M @ v) - A @ v
        pressures[:, j] = lsqr(B.T, target, atol=1e-15, btol=1e-15, iter_lim=10 * B.shape[0])[0]
    residuals = _relative_residuals(A, M, values, vectors, B.T @ pressures)
    divergence = np.linalg.norm(B @ vectors, axis=0)
    good = int(np.sum(residuals <= residual_tol))
    if len(values) < k or good < k:
        raise NotConverged(f"Only {min(good, len(values))} of {k} constrained eigenpairs converged "
                           f"(worst residual {residuals.max():.3e})", min(good, len(values)), k)
    logger.debug("constrained eigs: %d pairs, max residual %.3e, max |Bv| %.3e",
                 k, residuals.max(), divergence.max())
    return EigReport(values, vectors, residuals, filtered, sigma, pressures, divergence)
