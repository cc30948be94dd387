"""Micro problem on the inclusion: Stokes resolvent, Stokes eigenpairs and the
irrotational-force collapse.

Taylor-Hood P2/P1 pair with ``B[q, v] = int q div v``, so ``A v + B^T p = f``
is the weak form of ``-visc*lap v + alpha v - grad p = f``. Velocities vanish on
the inclusion boundary; the pressure mean is fixed to zero by bordering.

Cell means are integrals over Q2 of fields extended by zero, i.e. means over
the whole unit cell Q, not over Q2.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.sparse import csr_matrix

from fem.assembly import (
    FormKind, assemble_form, assemble_load, l2_norm, mean_value, scalar_mass_matrix,
)
from fem.constraints import DIRICHLET, constrain
from forcing.expressions import Expr, parse_expression
from geometry.mesh import CellGeometry, Phase, PeriodicMesh, build_cell_mesh
from solvers.eigen import eig_generalized
from solvers.krylov import SaddleSystem
from solvers.reports import EigReport, SolveReport

logger = logging.getLogger(__name__)

COLLAPSE_TOL = 1e-6
NONZERO_MEAN_TOL = 1e-6

ScalarSource = Union[str, Expr, None]


@dataclass
class MicroField:
    velocity: np.ndarray          # full P2 dofs on the inclusion mesh, zero on its boundary
    pressure: np.ndarray          # P1 vertex values, zero mean
    cell_mean: np.ndarray         # integral of v over Q2 = mean over Q
    report: Optional[SolveReport] = None

    def to_dict(self) -> Dict:
        out = {"cell_mean": self.cell_mean.tolist()}
        if self.report is not None:
            out["report"] = self.report.to_dict()
        return out


@dataclass
class StokesSpectrum:
    values: np.ndarray
    fields: List[MicroField]
    mean_norms: np.ndarray
    report: EigReport

    @property
    def nonzero_mean(self) -> np.ndarray:
        return self.mean_norms > NONZERO_MEAN_TOL

    def to_dict(self) -> Dict:
        return {
            "mu": [float(v) for v in self.values],
            "mean_norms": [float(m) for m in self.mean_norms],
            "nonzero_mean": [bool(b) for b in self.nonzero_mean],
            "divergence_norms": [float(d) for d in self.report.divergence_norms],
            "residuals": [float(r) for r in self.report.residuals],
            "filtered_count": int(self.report.filtered_count),
        }


def inclusion_mesh(cell_mesh: PeriodicMesh) -> PeriodicMesh:
    return cell_mesh.submesh(Phase.INCLUSION)


def disk_inclusion_mesh(radius: float, resolution: int,
                        center: Tuple[float, float] = (0.5, 0.5)) -> PeriodicMesh:
    return inclusion_mesh(build_cell_mesh(CellGeometry(center=center, size=radius, resolution=resolution)))


class MicroStokesSolver:
    """Stokes operators on one inclusion mesh, assembled once and reused for every solve."""

    def __init__(self, mesh: PeriodicMesh, viscosity: float = 1.0, tol: float = 1e-10,
                 method: str = "minres", inner_solver: str = "minres"):
        if method not in ("minres", "direct"):
            raise ValueError(f"Unknown micro solver {method!r}")
        self.mesh = mesh.elevate("P2")
        self.viscosity = viscosity
        self.tol = tol
        self.method = method
        self.inner_solver = inner_solver

        laplacian = constrain(assemble_form(self.mesh, FormKind.LAPLACIAN, viscosity=viscosity),
                              self.mesh, {DIRICHLET})
        self.dof_map = laplacian.dof_map
        P = self.dof_map.prolongation
        self.A = laplacian.matrix
        self.mass_full = assemble_form(self.mesh, FormKind.MASS).matrix
        self.M = csr_matrix(P.T @ self.mass_full @ P)
        self.B_full = assemble_form(self.mesh, FormKind.DIVERGENCE).matrix
        self.B = csr_matrix(self.B_full @ P)
        pressure_mass = scalar_mass_matrix(self.mesh, "P1")
        self.pressure_weights = np.asarray(pressure_mass.sum(axis=1)).ravel()
        self.pressure_scaling = pressure_mass.diagonal() / viscosity
        self._saddles: Dict[float, SaddleSystem] = {}
        self.unit_loads = np.column_stack(
            [self.load_vector(lambda y, e=e: np.broadcast_to(e, (len(y), 2))) for e in np.eye(2)])
        logger.info("micro Stokes: %d velocity dofs, %d pressure dofs", self.A.shape[0], self.B.shape[0])

    # ---- Public API ---- #
    def saddle(self, alpha: float) -> SaddleSystem:
        key = float(alpha)
        if key not in self._saddles:
            saddle = SaddleSystem(self.A + key * self.M, self.B, self.pressure_weights, self.pressure_scaling)
            saddle.check_rank()
            self._saddles[key] = saddle
        return self._saddles[key]

    def load_vector(self, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        return assemble_load(self.mesh, f)

    def gradient_load(self, phi: ScalarSource, x: Sequence[float] = (0.0, 0.0)) -> np.ndarray:
        """Full velocity load of grad_y phi, sampled at the quadrature points."""
        expr = _as_expression(phi)
        if expr is None:
            return np.zeros(2 * self.mesh.n_nodes)
        gradient = (expr.derivative("y1"), expr.derivative("y2"))
        return self.load_vector(lambda y: np.column_stack(
            [np.broadcast_to(g.evaluate(_env(y, x)), (len(y),)) for g in gradient]))

    def solve_load(self, load: np.ndarray, alpha: float = 0.0) -> MicroField:
        """Solve with a full-space velocity load."""
        rhs = self.dof_map.restrict(load)
        saddle = self.saddle(alpha)
        if self.method == "direct":
            v, p = saddle.solve_direct(rhs)
            report = SolveReport(1, saddle.residual(v, p, rhs), True)
        else:
            v, p, report = saddle.solve_minres(rhs, tol=self.tol)
        velocity = self.dof_map.expand(v)
        return MicroField(velocity, p, self.cell_mean(velocity), report)

    def solve_many(self, loads: np.ndarray, alpha: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
        """Direct solves for the columns of a (n_full, L) load array; returns full velocities and pressures."""
        rhs = self.dof_map.prolongation.T @ loads
        v, p = self.saddle(alpha).solve_direct(rhs)
        return self.dof_map.prolongation @ v, p

    def solve_micro_resolvent(self, f_micro: Optional[Callable[[np.ndarray], np.ndarray]], alpha: float = 0.0,
                              u_macro: Sequence[float] = (0.0, 0.0), f1: ScalarSource = None,
                              x: Sequence[float] = (0.0, 0.0)) -> MicroField:
        """-visc lap v + alpha v + alpha u = f + grad p, div v = 0, v = 0 on the inclusion boundary."""
        if alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {alpha}")
        shift = alpha * np.asarray(u_macro, dtype=float)
        load = self.gradient_load(f1, x)
        if f_micro is not None or np.any(shift):
            def force(y):
                base = np.zeros((len(y), 2)) if f_micro is None else np.asarray(f_micro(y), dtype=float)
                return np.broadcast_to(base, (len(y), 2)) - shift
            load = load + self.load_vector(force)
        return self.solve_load(load, alpha)

    def irrotational_collapse_check(self, f0: Sequence[float], f1: ScalarSource,
                                    tol: float = COLLAPSE_TOL) -> Dict[str, object]:
        c = np.asarray(f0, dtype=float)
        field_ = self.solve_micro_resolvent(lambda y: np.broadcast_to(c, (len(y), 2)), 0.0, f1=f1)
        v_norm = self.l2_norm(field_.velocity)
        logger.info("irrotational collapse: |v| = %.3e (tol %.1e)", v_norm, tol)
        return {"v_norm": v_norm, "passed": bool(v_norm <= tol)}

    def stokes_eigenpairs(self, k: int, shift: float = 0.0) -> StokesSpectrum:
        report = eig_generalized(self.A, self.M, k, shift, constraint=self.B,
                                 pressure_weights=self.pressure_weights,
                                 pressure_scaling=self.pressure_scaling, inner_solver=self.inner_solver)
        fields = []
        for j in range(report.k):
            velocity = self.dof_map.expand(report.vectors[:, j])
            fields.append(MicroField(velocity, report.pressures[:, j], self.cell_mean(velocity)))
        means = np.array([np.linalg.norm(f.cell_mean) for f in fields])
        logger.info("Stokes eigenvalues: %s", np.round(report.values, 6).tolist())
        return StokesSpectrum(report.values, fields, means, report)

    def cell_mean(self, velocity: np.ndarray) -> np.ndarray:
        return mean_value(self.mesh, velocity)

    def cell_means(self, velocities: np.ndarray) -> np.ndarray:
        """Cell means of the columns of an (n_full, L) array, shape (2, L)."""
        return self.unit_loads.T @ velocities

    def mean_functional(self) -> np.ndarray:
        """Rows mapping a reduced velocity to its cell mean, (2, n_reduced)."""
        return self.dof_map.restrict(self.unit_loads).T

    def l2_norm(self, velocity: np.ndarray) -> float:
        return l2_norm(self.mesh, velocity)

    def inner(self, load: np.ndarray, velocity: np.ndarray) -> float:
        """(v, g) in L2(Q2) when ``load`` is the load vector of g."""
        return float(load @ velocity)


def _as_expression(phi: ScalarSource) -> Optional[Expr]:
    if phi is None:
        return None
    expr = parse_expression(phi) if isinstance(phi, str) else phi
    return None if expr.is_zero() else expr


def _env(y: np.ndarray, x: Sequence[float]) -> Dict[str, np.ndarray]:
    y = np.atleast_2d(y)
    n = len(y)
    return {"y1": y[:, 0], "y2": y[:, 1], "x1": np.full(n, float(x[0])), "x2": np.full(n, float(x[1]))}


# ---- module-level entry points ---- #
def solve_micro_resolvent(mesh_q2: PeriodicMesh, f_micro, alpha: float = 0.0,
                          u_macro: Sequence[float] = (0.0, 0.0), **kwargs) -> MicroField:
    return MicroStokesSolver(mesh_q2, **kwargs).solve_micro_resolvent(f_micro, alpha, u_macro)


def irrotational_collapse_check(mesh_q2: PeriodicMesh, f0: Sequence[float], f1: ScalarSource,
                                **kwargs) -> Dict[str, object]:
    return MicroStokesSolver(mesh_q2, **kwargs).irrotational_collapse_check(f0, f1)


def stokes_eigenpairs(mesh_q2: PeriodicMesh, k: int, **kwargs) -> StokesSpectrum:
    return MicroStokesSolver(mesh_q2, **kwargs).stokes_eigenpairs(k)
