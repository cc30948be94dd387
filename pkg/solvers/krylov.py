"""Conjugate gradients for SPD and consistent semidefinite systems, MINRES for Stokes saddles."""
from __future__ import annotations

import logging
from typing import Optional, Tuple

import numpy as np
from scipy.sparse import bmat, csc_matrix, csr_matrix
from scipy.sparse.linalg import LinearOperator, minres, splu

from errors import InnerSolveFailure, MaxIterations, NotConsistent, RankDeficientB, Stagnation
from fem.constraints import project_out_kernel
from solvers.reports import SolveReport

logger = logging.getLogger(__name__)

CONSISTENCY_TOL = 1e-8
MINRES_RESTARTS = 3


def cg_solve(A, b: np.ndarray, tol: float = 1e-10, kernel_basis: Optional[np.ndarray] = None,
             maxiter: Optional[int] = None, preconditioner: Optional[str] = None,
             raise_on_failure: bool = True) -> Tuple[np.ndarray, SolveReport]:
    """Preconditioned CG that stays in range(A) when a kernel basis is supplied.

    Iterates start from zero and are re-projected against ``kernel_basis``
    (orthonormal columns) after every update, so the returned solution is the
    minimum-norm one. The energy ``x.Ax/2 - b.x`` is recorded each step.
    """
    b = np.asarray(b, dtype=float)
    n = len(b)
    maxiter = maxiter or max(10 * n, 100)
    Z = None
    if kernel_basis is not None:
        Z = np.asarray(kernel_basis, dtype=float).reshape(n, -1)
        norm_b = np.linalg.norm(b)
        defect = np.linalg.norm(Z.T @ b)
        if norm_b > 0 and defect > CONSISTENCY_TOL * norm_b:
            raise NotConsistent(f"Right-hand side has a kernel component {defect:.3e} (|b| = {norm_b:.3e})")
        b = project_out_kernel(b, Z)
    norm_b = np.linalg.norm(b)
    if norm_b == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, True, 0.0, [0.0], [0.0])

    inv_diag = None
    if preconditioner == "jacobi":
        diag = A.diagonal()
        inv_diag = 1.0 / np.where(diag > 0, diag, 1.0)

    def apply_preconditioner(r):
        z = r if inv_diag is None else inv_diag * r
        return project_out_kernel(z, Z) if (Z is not None and inv_diag is not None) else z

    x = np.zeros(n)
    r = b.copy()
    z = apply_preconditioner(r)
    p = z.copy()
    rz = r @ z
    history = [1.0]
    energy = [0.0]
    converged = False
    iterations = 0
    for iterations in range(1, maxiter + 1):
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0.0:
            logger.debug("cg: non-positive curvature %.3e at iteration %d", pAp, iterations)
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if Z is not None:
            x = project_out_kernel(x, Z)
            r = project_out_kernel(r, Z)
        rel = np.linalg.norm(r) / norm_b
        history.append(rel)
        energy.append(-0.5 * x @ (b + r))
        if rel <= tol:
            converged = True
            break
        z = apply_preconditioner(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new

    final = history[-1]
    range_defect = float(np.linalg.norm(Z.T @ x)) if Z is not None else 0.0
    report = SolveReport(iterations, final, converged, range_defect, history, energy)
    logger.debug("cg: %d iterations, residual %.3e, range defect %.3e", iterations, final, range_defect)
    if not report.converged and raise_on_failure:
        raise MaxIterations(f"CG reached residual {final:.3e} after {iterations} iterations (tol {tol:.1e})")
    return x, report


class SaddleSystem:
    """Bordered Stokes operator [[A, B^T, 0], [B, 0, w], [0, w^T, 0]].

    The last row fixes the pressure mean ``w . p = 0``; with ``w`` the row sums
    of the pressure mass matrix this is the zero integral mean.
    """

    def __init__(self, A, B, pressure_weights: Optional[np.ndarray] = None,
                 pressure_scaling: Optional[np.ndarray] = None):
        self.A = csr_matrix(A)
        self.B = csr_matrix(B)
        self.n_v = self.A.shape[0]
        self.n_p = self.B.shape[0]
        if self.B.shape[1] != self.n_v:
            raise ValueError("Constraint block does not match the velocity space")
        w = np.ones(self.n_p) if pressure_weights is None else np.asarray(pressure_weights, dtype=float)
        self.weights = w
        self.pressure_scaling = np.ones(self.n_p) if pressure_scaling is None else np.asarray(pressure_scaling)
        column = csr_matrix(w.reshape(-1, 1))
        self.matrix = bmat([[self.A, self.B.T, None], [self.B, None, column], [None, column.T, None]],
                           format="csr")
        self._lu = None

    @property
    def size(self) -> int:
        return self.n_v + self.n_p + 1

    def check_rank(self) -> None:
        row_norms = np.sqrt(np.asarray(self.B.multiply(self.B).sum(axis=1)).ravel())
        if row_norms.size and row_norms.min() <= 1e-14 * max(row_norms.max(), 1e-300):
            raise RankDeficientB(f"{int(np.sum(row_norms <= 1e-14 * row_norms.max()))} pressure dofs "
                                 "do not couple to any free velocity dof")

    def _rhs(self, f: np.ndarray, g: Optional[np.ndarray]) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        extra = f.shape[1:]
        g = np.zeros((self.n_p,) + extra) if g is None else np.asarray(g, dtype=float)
        return np.concatenate([f, g, np.zeros((1,) + extra)], axis=0)

    def _split(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return x[:self.n_v], x[self.n_v:self.n_v + self.n_p]

    def factorize(self):
        if self._lu is None:
            try:
                self._lu = splu(csc_matrix(self.matrix))
            except RuntimeError as e:
                raise InnerSolveFailure(f"Saddle factorization failed: {e}") from e
        return self._lu

    def solve_direct(self, f: np.ndarray, g: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Solve for one right-hand side or for the columns of a 2D array."""
        return self._split(self.factorize().solve(self._rhs(f, g)))

    def preconditioner(self) -> LinearOperator:
        diag = np.abs(self.A.diagonal())
        diag = np.where(diag > 0, diag, 1.0)
        inv = np.concatenate([1.0 / diag, 1.0 / self.pressure_scaling, [1.0]])
        return LinearOperator(self.matrix.shape, matvec=lambda x: inv * x, dtype=float)

    def residual(self, v: np.ndarray, p: np.ndarray, f: np.ndarray, g: Optional[np.ndarray] = None) -> float:
        g = np.zeros(self.n_p) if g is None else g
        momentum = self.A @ v + self.B.T @ p - f
        divergence = self.B @ v - g
        scale = max(np.linalg.norm(f), np.linalg.norm(g), 1e-300)
        return float(np.hypot(np.linalg.norm(momentum), np.linalg.norm(divergence)) / scale)

    def solve_minres(self, f: np.ndarray, g: Optional[np.ndarray] = None, tol: float = 1e-10,
                     maxiter: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray, SolveReport]:
        rhs = self._rhs(f, g)
        if not np.any(rhs):
            return np.zeros(self.n_v), np.zeros(self.n_p), SolveReport(0, 0.0, True)
        counter = {"n": 0}

        def count(_):
            counter["n"] += 1

        M = self.preconditioner()
        x = None
        history = []
        for _ in range(MINRES_RESTARTS):
            x, info = minres(self.matrix, rhs, x0=x, rtol=tol, maxiter=maxiter or 20 * self.size,
                             M=M, callback=count)
            if info < 0:
                raise InnerSolveFailure(f"MINRES reported illegal input (info={info})")
            v, p = self._split(x)
            history.append(self.residual(v, p, f, g))
            if history[-1] <= tol:
                break
        final = history[-1]
        report = SolveReport(counter["n"], final, final <= tol, 0.0, history)
        if final > 1e3 * tol:
            raise Stagnation(f"MINRES stalled at relative residual {final:.3e} after {counter['n']} iterations")
        if not report.converged:
            logger.warning("minres: residual %.3e above tolerance %.1e", final, tol)
        return v, p, report


def minres_saddle_solve(A, B, f: np.ndarray, tol: float = 1e-10, g: Optional[np.ndarray] = None,
                        pressure_weights: Optional[np.ndarray] = None,
                        pressure_scaling: Optional[np.ndarray] = None,
                        maxiter: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray, SolveReport]:
    """Solve ``A v + B^T p = f, B v = g`` with the pressure mean fixed to zero."""
    saddle = SaddleSystem(A, B, pressure_weights, pressure_scaling)
    saddle.check_rank()
    v, p, report = saddle.solve_minres(f, g, tol, maxiter)
    logger.debug("minres: %d iterations, residual %.3e", report.iterations, report.final_residual)
    return v, p, report
