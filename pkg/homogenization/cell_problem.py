"""Degenerate cell problem, effective tensor and perforated comparison tensor.

The degenerate form on the periodic cell is

    a(u, v) = int_Q1 C2 e(u) : e(v) + int_Q2 lambda div u div v

whose kernel holds the translations and every field supported strictly inside
the inclusion with zero divergence. Correctors are found by kernel-projected CG
started from zero, which keeps the iterates in the range of the matrix.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import scipy.linalg
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.linalg import lsqr

from errors import ConsistencyViolation
from fem.assembly import (
    FormKind, SparseSystem, assemble_form, assemble_stress_load, divergence_operator, element_voigt,
    quadrature_weights, strain_field,
)
from fem.constraints import MEAN_ZERO, PERIODIC, constrain
from fem.elements import element_dofs, physical_gradients
from fem.tensors import VOIGT_LABELS, ElasticityTensor4, MaterialSpec
from geometry.mesh import Phase, PeriodicMesh
from solvers.krylov import cg_solve
from solvers.reports import SolveReport

logger = logging.getLogger(__name__)

CONSISTENCY_TOL = 1e-12
ZERO_RHS_TOL = 1e-12
DENSE_KERNEL_LIMIT = 4000
VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
RS_INDEX = {"11": 0, "22": 1, "12": 2, "21": 2}


@dataclass(frozen=True, eq=False)
class EffectiveTensor:
    voigt: np.ndarray
    provenance: str = "chom"

    def tensor(self) -> ElasticityTensor4:
        return ElasticityTensor4.from_voigt(0.5 * (self.voigt + self.voigt.T))

    def symmetry_defect(self) -> float:
        return float(np.abs(self.voigt - self.voigt.T).max() / max(np.abs(self.voigt).max(), 1e-300))

    def min_eigenvalue(self) -> float:
        scale = np.array([1.0, 1.0, np.sqrt(2.0)])
        mandel = scale[:, None] * 0.5 * (self.voigt + self.voigt.T) * scale[None, :]
        return float(np.linalg.eigvalsh(mandel).min())

    def quadratic_form(self, strain_voigt: np.ndarray) -> float:
        e = np.asarray(strain_voigt, dtype=float)
        return float(e @ self.voigt @ e)

    def to_dict(self) -> Dict:
        return {"voigt": self.voigt.tolist(), "provenance": self.provenance}


@dataclass(frozen=True, eq=False)
class DegenerateKernelBasis:
    """Reduced-space kernel probes: the two translations and sampled inclusion bubbles."""
    translations: np.ndarray
    bubble_samples: np.ndarray
    dimension: Optional[int] = None

    @property
    def members(self) -> np.ndarray:
        return np.hstack([self.translations, self.bubble_samples])

    def annihilation_defects(self, matrix) -> np.ndarray:
        Z = self.members
        return np.linalg.norm(matrix @ Z, axis=0) / np.maximum(np.linalg.norm(Z, axis=0), 1e-300)


@dataclass
class CellSolution:
    rs: str
    field: np.ndarray              # full P2 dof vector, interleaved
    report: SolveReport
    consistency_defect: float
    zero_rhs: bool = False


@dataclass
class CellHomogenizer:
    """Cell solves on one P1 cell mesh; every matrix is assembled on its P2 elevation."""
    mesh: PeriodicMesh
    material: MaterialSpec
    tol: float = 1e-10
    maxiter: Optional[int] = None
    bubble_samples: int = 10
    seed: int = 20240101
    workers: int = 1
    _p2: PeriodicMesh = field(init=False, repr=False)
    _system: Optional[SparseSystem] = field(default=None, init=False, repr=False)
    _kernel: Optional[DegenerateKernelBasis] = field(default=None, init=False, repr=False)
    _solutions: Dict[str, CellSolution] = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        self._p2 = self.mesh.elevate("P2")
        self._voigt = element_voigt(self._p2, FormKind.DEGENERATE, self.material)

    # ---- Public API ---- #
    def system(self) -> SparseSystem:
        if self._system is None:
            full = assemble_form(self._p2, FormKind.DEGENERATE, self.material)
            self._system = constrain(full, self._p2, {PERIODIC, MEAN_ZERO})
            logger.info("degenerate cell system: %d reduced dofs", self._system.size)
        return self._system

    def kernel_basis(self) -> DegenerateKernelBasis:
        if self._kernel is None:
            self._kernel = self._build_kernel_basis()
        return self._kernel

    def solve_cell_problem(self, rs: str) -> CellSolution:
        key = {"21": "12"}.get(rs, rs)
        if key not in RS_INDEX:
            raise ValueError(f"Unknown index pair {rs!r}")
        if key not in self._solutions:
            self._solutions[key] = self._solve(key)
        return self._solutions[key]

    def compute_effective_tensor(self) -> EffectiveTensor:
        fields = self._solve_all()
        voigt = energy_tensor(self._p2, self._voigt, fields)
        logger.info("C^hom diag = %s", np.round(np.diag(voigt), 6).tolist())
        return EffectiveTensor(voigt, "chom")

    def compute_perforated_tensor(self) -> EffectiveTensor:
        """Matrix-only cell problem with a traction-free interface."""
        voigt_hat = self._voigt.copy()
        voigt_hat[self._p2.phases == Phase.INCLUSION] = 0.0
        full = assemble_form(self._p2, FormKind.ELASTICITY, tensors=voigt_hat)
        system = constrain(full, self._p2, {PERIODIC, MEAN_ZERO})
        keep = _matrix_columns(system, self._p2)
        A = csr_matrix(system.matrix[keep][:, keep])
        Z = system.kernel[keep]
        Z = Z / np.linalg.norm(Z, axis=0)
        fields = []
        for label in VOIGT_LABELS:
            load = assemble_stress_load(self._p2, voigt_hat, _unit_voigt(label))
            rhs = system.dof_map.restrict(load)[keep]
            reduced = np.zeros(system.size)
            if np.linalg.norm(rhs) > ZERO_RHS_TOL * max(np.linalg.norm(load), 1e-300):
                reduced[keep], _ = cg_solve(A, rhs, self.tol, kernel_basis=Z, maxiter=self.maxiter)
            fields.append(system.dof_map.expand(reduced))
        voigt = energy_tensor(self._p2, voigt_hat, fields)
        return EffectiveTensor(voigt, "chat_perforated")

    def effective_tensor_from_fields(self, fields: List[np.ndarray]) -> EffectiveTensor:
        return EffectiveTensor(energy_tensor(self._p2, self._voigt, fields), "chom")

    def kernel_invariance_defect(self) -> float:
        """Largest change of C^hom after adding a random kernel member to every corrector."""
        fields = self._solve_all()
        kernel = self.kernel_basis()
        chom = self.effective_tensor_from_fields(fields)
        if not kernel.bubble_samples.size:
            return 0.0
        rng = np.random.default_rng(self.seed + 1)
        system = self.system()
        shifted = [u + system.dof_map.expand(kernel.members @ rng.standard_normal(kernel.members.shape[1]))
                   for u in fields]
        return float(np.abs(self.effective_tensor_from_fields(shifted).voigt - chom.voigt).max())

    def arithmetic_mean(self) -> EffectiveTensor:
        fraction = self.mesh.phase_area(Phase.INCLUSION)
        return EffectiveTensor(self.material.arithmetic_mean(fraction).to_voigt(), "arithmetic_mean")

    # ---- internals ---- #
    def _solve_all(self) -> List[np.ndarray]:
        self.system()
        self.kernel_basis()
        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=min(self.workers, 3)) as pool:
                solutions = list(pool.map(self.solve_cell_problem, VOIGT_LABELS))
        else:
            solutions = [self.solve_cell_problem(label) for label in VOIGT_LABELS]
        return [s.field for s in solutions]

    def _solve(self, rs: str) -> CellSolution:
        system = self.system()
        kernel = self.kernel_basis()
        load = assemble_stress_load(self._p2, self._voigt, _unit_voigt(rs))
        rhs = system.dof_map.restrict(load)
        norm_rhs = float(np.linalg.norm(rhs))
        members = kernel.members
        defect = float(np.abs(members.T @ rhs).max()) if members.size else 0.0
        if defect > CONSISTENCY_TOL * max(1.0, norm_rhs):
            raise ConsistencyViolation(f"Cell load {rs} is not orthogonal to the kernel (defect {defect:.3e})")
        if norm_rhs <= ZERO_RHS_TOL * max(np.linalg.norm(load), 1e-300):
            logger.info("cell problem %s: load vanishes after periodic folding, corrector is zero", rs)
            report = SolveReport(0, 0.0, True, 0.0, [0.0])
            return CellSolution(rs, np.zeros(system.dof_map.n_full), report, defect, True)
        x, report = cg_solve(system.matrix, rhs, self.tol, kernel_basis=system.kernel, maxiter=self.maxiter)
        if kernel.bubble_samples.size:
            bubble_defect = np.linalg.norm(kernel.bubble_samples.T @ x)
            report.range_defect = float(np.hypot(report.range_defect, bubble_defect))
        x = system.remove_mean(x)
        logger.info("cell problem %s: %d CG iterations, residual %.2e, range defect %.2e",
                    rs, report.iterations, report.final_residual, report.range_defect)
        return CellSolution(rs, system.dof_map.expand(x), report, defect)

    def _build_kernel_basis(self) -> DegenerateKernelBasis:
        system = self.system()
        G, columns = inclusion_divergence_operator(self._p2, system)
        rng = np.random.default_rng(self.seed)
        n = system.size
        dimension = None
        samples = np.zeros((n, 0))
        if len(columns) and self.bubble_samples > 0:
            if len(columns) <= DENSE_KERNEL_LIMIT:
                null = scipy.linalg.null_space(G.toarray())
                dimension = 2 + null.shape[1]
                local = null @ rng.standard_normal((null.shape[1], self.bubble_samples)) if null.size \
                    else np.zeros((len(columns), 0))
            else:
                local = np.column_stack([_project_divergence_free(G, rng.standard_normal(len(columns)))
                                         for _ in range(self.bubble_samples)])
            keep = np.linalg.norm(local, axis=0) > 0
            local = local[:, keep] / np.linalg.norm(local[:, keep], axis=0)
            samples = np.zeros((n, local.shape[1]))
            samples[columns] = local
        elif not len(columns):
            dimension = 2
        basis = DegenerateKernelBasis(system.kernel, samples, dimension)
        defects = basis.annihilation_defects(system.matrix)
        logger.info("kernel probes: %d bubbles, kernel dimension %s, max |Kz|/|z| = %.2e",
                    samples.shape[1], dimension, defects.max() if defects.size else 0.0)
        return basis


# ---------------- helpers ---------------- #
def _unit_voigt(rs: str) -> np.ndarray:
    e = np.zeros(3)
    e[RS_INDEX[rs]] = 1.0
    return e


def energy_tensor(mesh: PeriodicMesh, voigt: np.ndarray, fields: List[np.ndarray]) -> np.ndarray:
    """C_IJ = int (e_I + e(N_I)) . D (e_J + e(N_J))."""
    weights = quadrature_weights(mesh)
    strains = np.stack([strain_field(mesh, u) + _unit_voigt(label)
                        for label, u in zip(VOIGT_LABELS, fields)])   # (3, M, q, 3)
    C = np.einsum("Ieqk,ekl,Jeql,eq->IJ", strains, voigt, strains, weights, optimize=True)
    return 0.5 * (C + C.T)


def _reduced_columns(system: SparseSystem, full_dofs: np.ndarray) -> np.ndarray:
    """Reduced index of each full dof (dofs must be masters, i.e. carry a unit row)."""
    P = system.dof_map.prolongation.tocsr()
    return P.indices[P.indptr[full_dofs]]


def _matrix_columns(system: SparseSystem, mesh: PeriodicMesh) -> np.ndarray:
    matrix_nodes = np.unique(mesh.triangles[mesh.phases == Phase.MATRIX])
    full = (2 * matrix_nodes[:, None] + np.arange(2)).ravel()
    return np.unique(_reduced_columns(system, full))


def interior_inclusion_nodes(mesh: PeriodicMesh) -> np.ndarray:
    """Nodes of inclusion elements that no matrix element touches."""
    inclusion = np.unique(mesh.triangles[mesh.phases == Phase.INCLUSION])
    matrix = np.unique(mesh.triangles[mesh.phases == Phase.MATRIX])
    return np.setdiff1d(inclusion, matrix)


def inclusion_divergence_operator(mesh: PeriodicMesh, system: SparseSystem):
    """Element-wise divergence at the vertices of inclusion elements, restricted to interior dofs.

    Divergence of a P2 field is linear on each element, so a field in the null
    space of this operator is pointwise divergence free. Returns the operator and
    the reduced-space columns of the interior dofs.
    """
    nodes = interior_inclusion_nodes(mesh)
    full = (2 * nodes[:, None] + np.arange(2)).ravel()
    columns = _reduced_columns(system, full) if len(full) else np.zeros(0, dtype=np.int64)
    elements = np.flatnonzero(mesh.phases == Phase.INCLUSION)
    if not len(full) or not len(elements):
        return csr_matrix((0, 0)), columns
    div = divergence_operator(physical_gradients(mesh, "P2", VERTICES))[elements]   # (E, 3, 12)
    dofs = element_dofs(mesh, 2)[elements]
    local_of = np.full(2 * mesh.n_nodes, -1, dtype=np.int64)
    local_of[full] = np.arange(len(full))
    cols = np.broadcast_to(local_of[dofs][:, None, :], div.shape)
    rows = np.broadcast_to(np.arange(3 * len(elements)).reshape(-1, 3, 1), div.shape)
    mask = cols >= 0
    G = coo_matrix((div[mask], (rows[mask], cols[mask])), shape=(3 * len(elements), len(full))).tocsr()
    return G, columns


def _project_divergence_free(G, r: np.ndarray) -> np.ndarray:
    """r - G^T y with y the least-squares solution of G^T y = r."""
    y = lsqr(G.T, r, atol=1e-15, btol=1e-15, iter_lim=20 * G.shape[0])[0]
    return r - G.T @ y


def tensor_checks(chom: EffectiveTensor, chat: EffectiveTensor, mean: EffectiveTensor,
                  probes: int = 20, seed: int = 20240101, tol: float = 1e-8) -> Dict[str, object]:
    """Symmetry, positivity and the bound chat <= chom <= mean on Voigt basis and random strains."""
    rng = np.random.default_rng(seed)
    strains = np.vstack([np.eye(3), rng.standard_normal((probes, 3))])
    lower = max(chat.quadratic_form(e) - chom.quadratic_form(e) for e in strains)
    upper = max(chom.quadratic_form(e) - mean.quadratic_form(e) for e in strains)
    return {
        "symmetry": chom.symmetry_defect(),
        "symmetry_ok": chom.symmetry_defect() <= 1e-9,
        "positivity": chom.min_eigenvalue(),
        "positivity_ok": chom.min_eigenvalue() > 0 and chat.min_eigenvalue() > 0,
        "sandwich_lower_excess": float(lower),
        "sandwich_upper_excess": float(upper),
        "sandwich_ok": bool(lower <= tol and upper <= tol),
    }


# ---- module-level entry points ---- #
def solve_cell_problem(mesh: PeriodicMesh, material: MaterialSpec, rs: str, **kwargs) -> np.ndarray:
    return CellHomogenizer(mesh, material, **kwargs).solve_cell_problem(rs).field


def compute_effective_tensor(mesh: PeriodicMesh, material: MaterialSpec, **kwargs) -> EffectiveTensor:
    return CellHomogenizer(mesh, material, **kwargs).compute_effective_tensor()


def compute_perforated_tensor(mesh: PeriodicMesh, material: MaterialSpec, **kwargs) -> EffectiveTensor:
    return CellHomogenizer(mesh, material, **kwargs).compute_perforated_tensor()
