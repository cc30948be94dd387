"""Homogenized limit: the coupled macro/micro resolvent and the limit spectrum.

The micro operator does not depend on x, so each micro field is a linear
combination of a few precomputed responses:

    v(x, .) = sum_j c_j(x) V_j - alpha * R u(x)

where ``V_j`` answer an SVD basis of the micro loads sampled at the macro
quadrature points and ``R`` answers unit constant forces. Inserting the cell
mean into the macro equation gives

    -div(C^hom grad u) + alpha (I - alpha W) u = <f> - alpha <V c>,  W = <R>,

which is solved once on the macro mesh.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import bmat, coo_matrix, csr_matrix, diags, identity, kron
from scipy.sparse.linalg import spsolve

from errors import CouplingSingular, IncompatibleInputs
from fem.assembly import (
    DofMap, FormKind, SparseSystem, assemble_form, assemble_quadrature_loads, evaluate_at_quadrature, l2_norm,
    scalar_mass_matrix,
)
from fem.constraints import DIRICHLET, constrain
from fem.elements import element_dofs, element_geometry
from fem.tensors import MaterialSpec
from forcing.spec import ForcingSpec
from geometry.mesh import PeriodicMesh
from homogenization.cell_problem import CellHomogenizer, EffectiveTensor
from homogenization.micro_stokes import MicroField, MicroStokesSolver, StokesSpectrum, inclusion_mesh
from solvers.eigen import eig_generalized
from solvers.krylov import cg_solve
from solvers.reports import EigReport, SolveReport

logger = logging.getLogger(__name__)

MERGE_TOL = 1e-9
SVD_TOL = 1e-13
CELL_CHUNK = 200_000


class SpectrumLabel(str, Enum):
    MACRO = "macro"
    MICRO = "micro"
    FINE = "fine"


@dataclass(frozen=True)
class SpectrumSet:
    """Ascending eigenvalues; a value may carry several labels when fragments coincide."""
    values: Tuple[float, ...] = ()
    labels: Tuple[Tuple[str, ...], ...] = ()
    window: Optional[float] = None

    def __post_init__(self):
        if len(self.values) != len(self.labels):
            raise ValueError("Every spectrum value needs a label")
        if any(b < a for a, b in zip(self.values, self.values[1:])):
            raise ValueError("Spectrum values must be sorted")

    @classmethod
    def fragment(cls, values: Iterable[float], label: SpectrumLabel,
                 window: Optional[float] = None) -> "SpectrumSet":
        vals = np.sort(np.asarray(list(values), dtype=float))
        if window is not None:
            vals = vals[vals <= window]
        tag = (SpectrumLabel(label).value,)
        return cls(tuple(float(v) for v in vals), tuple(tag for _ in vals), window)

    @classmethod
    def merge(cls, fragments: Sequence["SpectrumSet"], window: Optional[float] = None) -> "SpectrumSet":
        """Multiset union; values from different sources within MERGE_TOL share one entry."""
        pairs = sorted((v, labels) for s in fragments for v, labels in zip(s.values, s.labels)
                       if window is None or v <= window)
        merged: List[Tuple[float, set]] = []
        for value, labels in pairs:
            target = None
            for item in reversed(merged):
                if abs(item[0] - value) > MERGE_TOL * max(abs(item[0]), abs(value)):
                    break
                if not item[1] & set(labels):
                    target = item
                    break
            if target is None:
                merged.append((value, set(labels)))
            else:
                target[1].update(labels)
        return cls(tuple(v for v, _ in merged), tuple(tuple(sorted(lbl)) for _, lbl in merged), window)

    def __len__(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def truncate(self, window: float) -> "SpectrumSet":
        keep = [i for i, v in enumerate(self.values) if v <= window]
        return SpectrumSet(tuple(self.values[i] for i in keep), tuple(self.labels[i] for i in keep), window)

    def count(self, label: SpectrumLabel) -> int:
        tag = SpectrumLabel(label).value
        return sum(tag in labels for labels in self.labels)

    def rows(self) -> List[Tuple[float, str]]:
        return [(v, "+".join(labels)) for v, labels in zip(self.values, self.labels)]

    def to_dict(self) -> Dict:
        return {
            "values": list(self.values),
            "labels": ["+".join(labels) for labels in self.labels],
            "window": self.window,
        }


@dataclass
class MacroSpectrum:
    values: np.ndarray
    fields: np.ndarray           # full P2 dofs, one column per eigenvalue, mass-orthonormal
    report: EigReport

    def spectrum(self, window: Optional[float] = None) -> SpectrumSet:
        return SpectrumSet.fragment(self.values, SpectrumLabel.MACRO, window)


@dataclass
class LimitSpectrum:
    spectrum: SpectrumSet
    macro: MacroSpectrum
    micro: StokesSpectrum
    chom: EffectiveTensor
    companions: Dict[int, np.ndarray] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            "spectrum": self.spectrum.to_dict(),
            "macro": [float(v) for v in self.macro.values],
            "micro": self.micro.to_dict(),
            "chom": self.chom.to_dict(),
            "companions": sorted(self.companions),
        }


@dataclass
class TwoScaleField:
    """u(x) on the macro mesh plus micro fields stored against a truncated response basis."""
    macro_mesh: PeriodicMesh
    u: np.ndarray
    micro: MicroStokesSolver
    alpha: float
    points: np.ndarray               # macro quadrature points (N, 2)
    weights: np.ndarray              # macro quadrature weights (N,)
    basis_velocity: np.ndarray       # (n_micro, r)
    basis_pressure: np.ndarray       # (n_p, r)
    coefficients: np.ndarray         # (r, N)
    unit_velocity: np.ndarray        # (n_micro, 2)
    unit_pressure: np.ndarray        # (n_p, 2)
    report: SolveReport

    @property
    def n_points(self) -> int:
        return len(self.points)

    def macro_at_quadrature(self) -> np.ndarray:
        return evaluate_at_quadrature(self.macro_mesh, self.u).reshape(-1, 2)

    def micro_velocities(self) -> np.ndarray:
        """Full micro velocity for every macro quadrature point, (n_micro, N)."""
        return self.basis_velocity @ self.coefficients - self.alpha * self.unit_velocity @ self.macro_at_quadrature().T

    def micro_field(self, index: int) -> MicroField:
        ux = self.macro_at_quadrature()[index]
        velocity = self.basis_velocity @ self.coefficients[:, index] - self.alpha * self.unit_velocity @ ux
        pressure = self.basis_pressure @ self.coefficients[:, index] - self.alpha * self.unit_pressure @ ux
        return MicroField(velocity, pressure, self.micro.cell_mean(velocity))

    def cell_means(self) -> np.ndarray:
        """<v>(x) at the macro quadrature points, (N, 2)."""
        return self.micro.cell_means(self.micro_velocities()).T

    def micro_norms_squared(self) -> np.ndarray:
        V = self.micro_velocities()
        return np.einsum("il,il->l", V, self.micro.mass_full @ V)

    def macro_l2_norm(self) -> float:
        return l2_norm(self.macro_mesh, self.u)

    def two_scale_norm_squared(self) -> float:
        """||u + v||^2 over Omega x Q with v extended by zero outside Q2."""
        ux = self.macro_at_quadrature()
        cross = np.einsum("lc,lc->l", ux, self.cell_means())
        density = np.einsum("lc,lc->l", ux, ux) + 2.0 * cross + self.micro_norms_squared()
        return float(self.weights @ density)

    def micro_l2_norm(self) -> float:
        return float(np.sqrt(max(self.weights @ self.micro_norms_squared(), 0.0)))


class LimitProblemSolver:
    """Macro and micro operators of the homogenized limit for one macro mesh and one cell."""

    def __init__(self, macro_mesh: PeriodicMesh, cell_mesh: PeriodicMesh, material: MaterialSpec,
                 chom: Optional[EffectiveTensor] = None, tol: float = 1e-10, inner_solver: str = "minres",
                 workers: int = 1, seed: int = 20240101):
        self.macro_mesh = macro_mesh.elevate("P2")
        self.cell_mesh = cell_mesh
        self.material = material
        self.tol = tol
        self.inner_solver = inner_solver
        self.workers = workers
        self.seed = seed
        self._chom = chom
        self.micro = MicroStokesSolver(inclusion_mesh(cell_mesh), viscosity=material.micro_viscosity, tol=tol,
                                       method="direct", inner_solver=inner_solver)
        geo = element_geometry(self.macro_mesh)
        self.points = geo.points.reshape(-1, 2)
        self.weights = geo.wdet.ravel()
        self._macro_mass = kron(scalar_mass_matrix(self.macro_mesh), identity(2), format="csr")
        self._cell_geo = element_geometry(cell_mesh)

    # ---- Public API ---- #
    def effective_tensor(self) -> EffectiveTensor:
        if self._chom is None:
            self._chom = CellHomogenizer(self.cell_mesh, self.material, tol=self.tol,
                                         workers=self.workers, seed=self.seed).compute_effective_tensor()
        return self._chom

    def macro_stiffness(self, chom: Optional[EffectiveTensor] = None) -> csr_matrix:
        chom = chom or self.effective_tensor()
        tensors = np.broadcast_to(chom.voigt, (self.macro_mesh.n_triangles, 3, 3)).copy()
        return assemble_form(self.macro_mesh, FormKind.ELASTICITY, tensors=tensors).matrix

    def coupling_matrix(self, alpha: float) -> np.ndarray:
        """W = <R>: cell means of the responses to unit constant forces."""
        unit_v, _ = self._unit_responses(alpha)
        return _symmetric_part(self.micro.cell_means(unit_v))

    def micro_loads(self, forcing: ForcingSpec) -> np.ndarray:
        """Micro load vectors of f(x, .) on Q2 for every macro quadrature point, (n_micro, N)."""
        mesh = self.micro.mesh
        geo = element_geometry(mesh)
        m, q, _ = geo.points.shape
        ys = geo.points.reshape(-1, 2)
        loads = np.empty((2 * mesh.n_nodes, len(self.points)))
        chunk = max(1, CELL_CHUNK // len(ys))
        for start in range(0, len(self.points), chunk):
            xs = self.points[start:start + chunk]
            X, Y = np.repeat(xs, len(ys), axis=0), np.tile(ys, (len(xs), 1))
            values = forcing.macro_part(X) + forcing.micro_part(X, Y)
            values = values.reshape(len(xs), m, q, 2).transpose(1, 2, 3, 0)
            loads[:, start:start + chunk] = assemble_quadrature_loads(mesh, values)
        return loads

    def cell_average(self, forcing: ForcingSpec) -> np.ndarray:
        """<f>(x) = integral over Q of f(x, y) at every macro quadrature point, (N, 2)."""
        ys = self._cell_geo.points.reshape(-1, 2)
        wy = self._cell_geo.wdet.ravel()
        out = forcing.macro_part(self.points)
        if not forcing.has_micro_part:
            return out
        chunk = max(1, CELL_CHUNK // len(ys))
        for start in range(0, len(self.points), chunk):
            xs = self.points[start:start + chunk]
            X = np.repeat(xs, len(ys), axis=0)
            Y = np.tile(ys, (len(xs), 1))
            micro = forcing.micro_part(X, Y).reshape(len(xs), len(ys), 2)
            out[start:start + chunk] += np.einsum("xyc,y->xc", micro, wy)
        return out

    def solve_limit_resolvent(self, forcing: ForcingSpec, alpha: float) -> TwoScaleField:
        if alpha <= 0:
            raise ValueError(f"The limit resolvent needs alpha > 0, got {alpha}")
        chom = self.effective_tensor()
        loads = self.micro_loads(forcing)
        basis, coefficients = _compress(loads)
        if basis.shape[1]:
            basis_v, basis_p = self.micro.solve_many(basis, alpha)
        else:
            basis_v = np.zeros((loads.shape[0], 0))
            basis_p = np.zeros((self.micro.B.shape[0], 0))
        unit_v, unit_p = self._unit_responses(alpha)
        logger.info("limit resolvent: %d macro points, micro basis rank %d", len(self.points), basis.shape[1])

        G = np.eye(2) - alpha * _symmetric_part(self.micro.cell_means(unit_v))
        if np.linalg.eigvalsh(G).min() <= 0:
            raise CouplingSingular(f"Folded coupling I - alpha W is not positive definite (alpha={alpha})")
        micro_mean = (self.micro.cell_means(basis_v) @ coefficients).T                    # (N, 2)
        rhs_density = self.cell_average(forcing) - alpha * micro_mean

        m, q = self.macro_mesh.n_triangles, len(self.weights) // self.macro_mesh.n_triangles
        macro_load = assemble_quadrature_loads(self.macro_mesh, rhs_density.reshape(m, q, 2, 1))[:, 0]
        scalar_mass = scalar_mass_matrix(self.macro_mesh)
        matrix = self.macro_stiffness(chom) + alpha * kron(scalar_mass, csr_matrix(G), format="csr")
        u, report = self._solve_macro(matrix, macro_load)
        return TwoScaleField(self.macro_mesh, u, self.micro, alpha, self.points, self.weights,
                             basis_v, basis_p, coefficients, unit_v, unit_p, report)

    def solve_macro_dirichlet(self, forcing: ForcingSpec, alpha: float,
                              chom: Optional[EffectiveTensor] = None) -> np.ndarray:
        """Plain -div(C^hom grad u) + alpha u = <f> with u = 0 on the boundary."""
        m, q = self.macro_mesh.n_triangles, len(self.weights) // self.macro_mesh.n_triangles
        load = assemble_quadrature_loads(self.macro_mesh, self.cell_average(forcing).reshape(m, q, 2, 1))[:, 0]
        matrix = self.macro_stiffness(chom) + alpha * self._macro_mass
        u, _ = self._solve_macro(matrix, load)
        return u

    def monolithic_resolvent(self, forcing: ForcingSpec, alpha: float) -> Tuple[np.ndarray, np.ndarray]:
        """Coupled macro/micro system solved in one sparse factorization; returns u and the micro velocities."""
        macro = constrain(assemble_form(self.macro_mesh, FormKind.ELASTICITY,
                                        tensors=np.broadcast_to(self.effective_tensor().voigt,
                                                                (self.macro_mesh.n_triangles, 3, 3)).copy()),
                          self.macro_mesh, {DIRICHLET})
        Pu = macro.dof_map.prolongation
        K = csr_matrix(macro.matrix + alpha * (Pu.T @ self._macro_mass @ Pu))
        Phi = csr_matrix(self.macro_basis_at_quadrature() @ Pu)               # (2N, n_u)
        n_x = len(self.points)

        saddle = self.micro.saddle(alpha).matrix
        s = saddle.shape[0]
        Pv = self.micro.dof_map.prolongation
        n_v = Pv.shape[1]
        mean_rows = self.micro.mean_functional()                              # (2, n_v)
        extend = csr_matrix((np.vstack([mean_rows.T, np.zeros((s - n_v, 2))])))
        to_micro = alpha * (kron(identity(n_x), extend, format="csr") @ Phi)
        to_macro = alpha * (Phi.T @ diags(np.repeat(self.weights, 2)) @ kron(identity(n_x), extend.T, format="csr"))
        system = bmat([[K, to_macro], [to_micro, kron(identity(n_x), saddle, format="csr")]], format="csc")

        m, q = self.macro_mesh.n_triangles, len(self.weights) // self.macro_mesh.n_triangles
        macro_rhs = Pu.T @ assemble_quadrature_loads(self.macro_mesh,
                                                     self.cell_average(forcing).reshape(m, q, 2, 1))[:, 0]
        micro_rhs = np.zeros((s, n_x))
        micro_rhs[:n_v] = Pv.T @ self.micro_loads(forcing)
        x = spsolve(system, np.concatenate([macro_rhs, micro_rhs.T.ravel()]))
        u = macro.dof_map.expand(x[:len(macro_rhs)])
        velocities = Pv @ x[len(macro_rhs):].reshape(n_x, s)[:, :n_v].T
        return u, velocities

    def macro_basis_at_quadrature(self) -> csr_matrix:
        """Rows 2l + c evaluate component c of a macro dof vector at quadrature point l."""
        geo = element_geometry(self.macro_mesh)
        m, q = geo.wdet.shape
        n_local = geo.values.shape[1]
        dofs = element_dofs(self.macro_mesh, 2).reshape(m, n_local, 2)
        rows = (2 * (np.arange(m)[:, None, None, None] * q + np.arange(q)[None, :, None, None])
                + np.arange(2)[None, None, None, :])
        rows = np.broadcast_to(rows, (m, q, n_local, 2))
        cols = np.broadcast_to(dofs[:, None, :, :], (m, q, n_local, 2))
        vals = np.broadcast_to(geo.values[None, :, :, None], (m, q, n_local, 2))
        return coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())),
                          shape=(2 * m * q, 2 * self.macro_mesh.n_nodes)).tocsr()

    def macro_eigenpairs(self, k: int, chom: Optional[EffectiveTensor] = None) -> MacroSpectrum:
        return macro_eigenpairs(self.macro_mesh, chom or self.effective_tensor(), k)

    def micro_eigenpairs(self, k: int) -> StokesSpectrum:
        return self.micro.stokes_eigenpairs(k)

    def limit_spectrum(self, window: float, k_start: int = 4,
                       reconstruct_companions: bool = False) -> LimitSpectrum:
        """Union of the macro Dirichlet spectrum and the micro Stokes spectrum up to ``window``."""
        chom = self.effective_tensor()
        n_macro = constrain(assemble_form(self.macro_mesh, FormKind.MASS), self.macro_mesh, {DIRICHLET}).size
        n_micro = self.micro.A.shape[0] - self.micro.B.shape[0]
        macro = _grow_until(lambda k: self.macro_eigenpairs(k, chom), window, k_start, n_macro - 1)
        micro = _grow_until(self.micro_eigenpairs, window, k_start, n_micro - 3)
        spectrum = SpectrumSet.merge([macro.spectrum(window),
                                      SpectrumSet.fragment(micro.values, SpectrumLabel.MICRO, window)], window)
        logger.info("limit spectrum below %.4g: %d macro, %d micro, %d merged values", window,
                    spectrum.count(SpectrumLabel.MACRO), spectrum.count(SpectrumLabel.MICRO), len(spectrum))
        result = LimitSpectrum(spectrum, macro, micro, chom)
        if reconstruct_companions:
            result.companions = self.companions(micro, macro)
        return result

    def companions(self, micro: StokesSpectrum, macro: MacroSpectrum) -> Dict[int, np.ndarray]:
        """Macro parts u_m of limit eigenfunctions for micro eigenvalues whose eigenfield has a nonzero mean.

        Solves -div(C^hom grad u_m) = mu_m u_m + mu_m <v_m>; skipped when mu_m is a macro eigenvalue.
        """
        out: Dict[int, np.ndarray] = {}
        if not np.any(micro.nonzero_mean):
            return out
        system = constrain(assemble_form(self.macro_mesh, FormKind.MASS), self.macro_mesh, {DIRICHLET})
        P = system.dof_map.prolongation
        K = P.T @ self.macro_stiffness() @ P
        M = system.matrix
        for j in np.flatnonzero(micro.nonzero_mean):
            mu = float(micro.values[j])
            if np.any(np.abs(macro.values - mu) <= MERGE_TOL * mu):
                continue
            mean = micro.fields[j].cell_mean
            load = P.T @ (self._macro_mass @ np.tile(mean, self.macro_mesh.n_nodes))
            out[int(j)] = system.dof_map.expand(spsolve(csr_matrix(K - mu * M).tocsc(), mu * load))
        return out

    # ---- internals ---- #
    def _unit_responses(self, alpha: float) -> Tuple[np.ndarray, np.ndarray]:
        return self.micro.solve_many(self.micro.unit_loads, alpha)

    def _solve_macro(self, matrix, load: np.ndarray) -> Tuple[np.ndarray, SolveReport]:
        full = SparseSystem(csr_matrix(matrix), load, DofMap.identity(len(load)))
        system = constrain(full, self.macro_mesh, {DIRICHLET})
        x, report = cg_solve(system.matrix, system.rhs, self.tol)
        return system.dof_map.expand(x), report


def _symmetric_part(W: np.ndarray) -> np.ndarray:
    return 0.5 * (W + W.T)


def _compress(loads: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Truncated SVD loads = basis @ coefficients."""
    if not np.any(loads):
        return np.zeros((loads.shape[0], 0)), np.zeros((0, loads.shape[1]))
    U, s, Vt = np.linalg.svd(loads, full_matrices=False)
    rank = int(np.sum(s > SVD_TOL * s[0]))
    return U[:, :rank], s[:rank, None] * Vt[:rank]


def _grow_until(compute, window: float, k_start: int, k_max: int):
    k = max(1, min(k_start, k_max))
    while True:
        result = compute(k)
        if result.values[-1] > window or k >= k_max:
            return result
        k = min(2 * k, k_max)


# ---- module-level entry points ---- #
def solve_limit_resolvent(macro_mesh: PeriodicMesh, cell_mesh: PeriodicMesh, material: MaterialSpec,
                          forcing: ForcingSpec, alpha: float, **kwargs) -> TwoScaleField:
    return LimitProblemSolver(macro_mesh, cell_mesh, material, **kwargs).solve_limit_resolvent(forcing, alpha)


def macro_eigenpairs(macro_mesh: PeriodicMesh, chom: EffectiveTensor, k: int) -> MacroSpectrum:
    """Dirichlet eigenpairs of -div(C^hom grad u) = lambda u on P2 elements."""
    if chom.min_eigenvalue() <= 0:
        raise IncompatibleInputs("C^hom must be positive definite")
    mesh = macro_mesh.elevate("P2")
    tensors = np.broadcast_to(chom.voigt, (mesh.n_triangles, 3, 3)).copy()
    stiffness = constrain(assemble_form(mesh, FormKind.ELASTICITY, tensors=tensors), mesh, {DIRICHLET})
    P = stiffness.dof_map.prolongation
    mass = csr_matrix(P.T @ assemble_form(mesh, FormKind.MASS).matrix @ P)
    report = eig_generalized(stiffness.matrix, mass, k)
    fields = P @ report.vectors
    logger.info("macro eigenvalues: %s", np.round(report.values, 6).tolist())
    return MacroSpectrum(report.values, fields, report)


def limit_spectrum(macro_mesh: PeriodicMesh, cell_mesh: PeriodicMesh, material: MaterialSpec,
                   window: float, **kwargs) -> LimitSpectrum:
    return LimitProblemSolver(macro_mesh, cell_mesh, material, **kwargs).limit_spectrum(window)
