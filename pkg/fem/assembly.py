"""Vectorised assembly of the bilinear forms and load vectors.

Element matrices of all triangles are built at once with ``einsum`` and summed
into one COO triplet list whose order is fixed by the element numbering, so the
resulting CSR matrix does not depend on thread scheduling.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, FrozenSet, Mapping, Optional, Union

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix, identity, kron

from errors import NonFiniteSample, PhaseFieldMissing, ReportIoError, UnsupportedOrder
from fem.elements import QUAD_POINTS, element_dofs, element_geometry, shape_values
from fem.tensors import ElasticityTensor4, MaterialSpec
from geometry.mesh import Phase, PeriodicMesh

logger = logging.getLogger(__name__)

VectorField = Callable[[np.ndarray], np.ndarray]
TensorField = Union[Mapping[Phase, ElasticityTensor4], np.ndarray]


class FormKind(str, Enum):
    ELASTICITY = "elasticity"
    DEGENERATE = "degenerate"
    SCALED_FULL = "scaled_full"
    MASS = "mass"
    DIVERGENCE = "divergence"
    LAPLACIAN = "laplacian"
    PRESSURE_MASS = "pressure_mass"


@dataclass(frozen=True, eq=False)
class DofMap:
    """Full vector = ``prolongation @ reduced + lifting``."""
    prolongation: csr_matrix
    lifting: np.ndarray

    @classmethod
    def identity(cls, n: int) -> "DofMap":
        return cls(identity(n, format="csr"), np.zeros(n))

    @property
    def n_full(self) -> int:
        return self.prolongation.shape[0]

    @property
    def n_reduced(self) -> int:
        return self.prolongation.shape[1]

    def expand(self, reduced: np.ndarray) -> np.ndarray:
        return self.prolongation @ reduced + self.lifting

    def restrict(self, full: np.ndarray) -> np.ndarray:
        """Adjoint action, used for load vectors."""
        return self.prolongation.T @ full


@dataclass(frozen=True, eq=False)
class SparseSystem:
    matrix: csr_matrix
    rhs: np.ndarray
    dof_map: DofMap
    constraint_kind: FrozenSet[str] = frozenset()
    components: int = 2
    kernel: Optional[np.ndarray] = None   # Euclidean-orthonormal translations (mean_zero)
    mean_rows: Optional[np.ndarray] = None   # (components, n_reduced): reduced x -> integral of each component

    def __post_init__(self):
        rows, cols = self.matrix.shape
        if len(self.rhs) != rows or self.dof_map.n_reduced != cols:
            raise ValueError("SparseSystem dimensions are inconsistent with its dof map")

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def with_rhs(self, rhs: np.ndarray) -> "SparseSystem":
        return SparseSystem(self.matrix, np.asarray(rhs, dtype=float), self.dof_map,
                            self.constraint_kind, self.components, self.kernel, self.mean_rows)

    def remove_mean(self, x: np.ndarray) -> np.ndarray:
        """Shift a reduced solution along the translations so its L2 mean vanishes."""
        if self.mean_rows is None or self.kernel is None:
            return x
        shift = np.linalg.solve(self.mean_rows @ self.kernel, self.mean_rows @ x)
        return x - self.kernel @ shift

    def symmetry_defect(self) -> float:
        diff = abs(self.matrix - self.matrix.T)
        scale = abs(self.matrix).max() or 1.0
        return float(diff.max() / scale) if diff.nnz else 0.0


# ---------------- coefficient fields ---------------- #
def element_voigt(mesh: PeriodicMesh, kind: FormKind, material: Optional[MaterialSpec] = None,
                  tensors: Optional[TensorField] = None, epsilon: Optional[float] = None) -> np.ndarray:
    """Per-element Voigt matrices (M, 3, 3) of the tensor field a form integrates."""
    if isinstance(tensors, np.ndarray):
        field_ = np.asarray(tensors, dtype=float)
        if field_.shape != (mesh.n_triangles, 3, 3):
            raise PhaseFieldMissing(f"Tensor field has shape {field_.shape}, expected ({mesh.n_triangles}, 3, 3)")
        return field_
    if tensors is None:
        if material is None:
            raise PhaseFieldMissing(f"Form {kind.value} needs a material or a tensor field")
        if kind == FormKind.DEGENERATE:
            tensors = {p: material.degenerate_tensor(p) for p in Phase}
        elif kind == FormKind.SCALED_FULL:
            tensors = {p: material.full_tensor(p, epsilon) for p in Phase}
        else:
            tensors = {Phase.MATRIX: material.matrix_tensor}
    out = np.empty((mesh.n_triangles, 3, 3))
    for phase in np.unique(mesh.phases):
        phase = Phase(int(phase))
        if phase not in tensors:
            raise PhaseFieldMissing(f"No tensor given for the {phase.name.lower()} phase")
        out[mesh.phases == phase] = tensors[phase].to_voigt()
    return out


# ---------------- operators ---------------- #
def strain_operator(gradients: np.ndarray) -> np.ndarray:
    """Voigt strain-displacement matrices B, shape (M, q, 3, 2*n_local)."""
    m, q, n_local, _ = gradients.shape
    B = np.zeros((m, q, 3, 2 * n_local))
    B[:, :, 0, 0::2] = gradients[..., 0]
    B[:, :, 1, 1::2] = gradients[..., 1]
    B[:, :, 2, 0::2] = gradients[..., 1]
    B[:, :, 2, 1::2] = gradients[..., 0]
    return B


def divergence_operator(gradients: np.ndarray) -> np.ndarray:
    """Element-wise divergence rows, shape (M, q, 2*n_local)."""
    m, q, n_local, _ = gradients.shape
    div = np.empty((m, q, 2 * n_local))
    div[:, :, 0::2] = gradients[..., 0]
    div[:, :, 1::2] = gradients[..., 1]
    return div


def _scatter(local: np.ndarray, rows: np.ndarray, cols: np.ndarray, shape) -> csr_matrix:
    r = np.broadcast_to(rows[:, :, None], local.shape)
    c = np.broadcast_to(cols[:, None, :], local.shape)
    matrix = coo_matrix((local.ravel(), (r.ravel(), c.ravel())), shape=shape).tocsr()
    matrix.sum_duplicates()
    matrix.sort_indices()
    return matrix


def stiffness_matrix(mesh: PeriodicMesh, voigt: np.ndarray) -> csr_matrix:
    geo = element_geometry(mesh)
    B = strain_operator(geo.gradients)
    local = np.einsum("eqki,ekl,eqlj,eq->eij", B, voigt, B, geo.wdet, optimize=True)
    dofs = element_dofs(mesh, 2)
    n = 2 * mesh.n_nodes
    return _scatter(local, dofs, dofs, (n, n))


def scalar_mass_matrix(mesh: PeriodicMesh, order: Optional[str] = None) -> csr_matrix:
    order = order or mesh.element_order
    geo = element_geometry(mesh, order)
    local = np.einsum("qa,qb,eq->eab", geo.values, geo.values, geo.wdet)
    dofs = mesh.corners if order == "P1" else mesh.triangles
    n = mesh.n_vertices if order == "P1" else mesh.n_nodes
    return _scatter(local, dofs, dofs, (n, n))


def scalar_stiffness_matrix(mesh: PeriodicMesh) -> csr_matrix:
    geo = element_geometry(mesh)
    local = np.einsum("eqai,eqbi,eq->eab", geo.gradients, geo.gradients, geo.wdet)
    n = mesh.n_nodes
    return _scatter(local, mesh.triangles, mesh.triangles, (n, n))


def divergence_matrix(mesh: PeriodicMesh) -> csr_matrix:
    """B[q, v] = integral of q div v with P1 pressures on the vertices of a P2 mesh."""
    if mesh.element_order != "P2":
        raise UnsupportedOrder("Divergence form needs the P2 velocity / P1 pressure pair")
    geo = element_geometry(mesh)
    psi = shape_values("P1", QUAD_POINTS)
    div = divergence_operator(geo.gradients)
    local = np.einsum("qa,eqj,eq->eaj", psi, div, geo.wdet)
    return _scatter(local, mesh.corners, element_dofs(mesh, 2), (mesh.n_vertices, 2 * mesh.n_nodes))


def assemble_form(mesh: PeriodicMesh, kind: Union[FormKind, str], material: Optional[MaterialSpec] = None,
                  tensors: Optional[TensorField] = None, epsilon: Optional[float] = None,
                  viscosity: float = 1.0) -> SparseSystem:
    """Assemble one bilinear form into an unconstrained ``SparseSystem`` with zero right-hand side.

    ``divergence`` gives the rectangular pressure-by-velocity block; its dof map
    acts on the velocity side and its right-hand side lives on the pressure side.
    """
    kind = FormKind(kind)
    if mesh.element_order not in ("P1", "P2"):
        raise UnsupportedOrder(f"Unsupported element order {mesh.element_order!r}")
    if kind == FormKind.DIVERGENCE:
        matrix = divergence_matrix(mesh)
        return SparseSystem(matrix, np.zeros(matrix.shape[0]), DofMap.identity(matrix.shape[1]),
                            frozenset(), 2)
    components = 2
    if kind in (FormKind.ELASTICITY, FormKind.DEGENERATE, FormKind.SCALED_FULL):
        matrix = stiffness_matrix(mesh, element_voigt(mesh, kind, material, tensors, epsilon))
    elif kind == FormKind.MASS:
        matrix = kron(scalar_mass_matrix(mesh), identity(2), format="csr")
    elif kind == FormKind.LAPLACIAN:
        matrix = kron(viscosity * scalar_stiffness_matrix(mesh), identity(2), format="csr")
    else:
        matrix = scalar_mass_matrix(mesh, "P1")
        components = 1
    matrix = csr_matrix(matrix)
    logger.debug("assembled %s: %d dofs, %d nonzeros", kind.value, matrix.shape[0], matrix.nnz)
    return SparseSystem(matrix, np.zeros(matrix.shape[0]), DofMap.identity(matrix.shape[0]),
                        frozenset(), components)


# ---------------- loads and fields ---------------- #
def sample_field(f: VectorField, points: np.ndarray, components: int = 2) -> np.ndarray:
    """Evaluate ``f`` on (n, 2) points and return an (n, components) array."""
    points = np.asarray(points, dtype=float)
    n = len(points)
    values = np.asarray(f(points), dtype=float)
    if values.ndim == 2 and values.shape == (n, components):
        out = values
    elif values.ndim == 2 and values.shape == (components, n):
        out = values.T
    elif components == 1 and values.shape == (n,):
        out = values[:, None]
    else:
        out = np.broadcast_to(values.reshape(-1)[:components], (n, components))
    out = np.array(out, dtype=float)
    if not np.all(np.isfinite(out)):
        raise NonFiniteSample("Field evaluated to a non-finite value")
    return out


def assemble_load(mesh: PeriodicMesh, f: VectorField, components: int = 2) -> np.ndarray:
    """Load vector of integral f . phi over the mesh."""
    geo = element_geometry(mesh)
    m, q, _ = geo.points.shape
    values = sample_field(f, geo.points.reshape(-1, 2), components).reshape(m, q, components)
    local = np.einsum("qa,eqc,eq->eac", geo.values, values, geo.wdet).reshape(m, -1)
    n = components * mesh.n_nodes
    return np.bincount(element_dofs(mesh, components).ravel(), weights=local.ravel(), minlength=n)


def assemble_quadrature_loads(mesh: PeriodicMesh, values: np.ndarray) -> np.ndarray:
    """Load vectors from forces given at every quadrature point; ``values`` is (M, q, 2, n_loads)."""
    geo = element_geometry(mesh)
    local = np.einsum("qa,eqcl,eq->eacl", geo.values, values, geo.wdet)
    m = mesh.n_triangles
    local = local.reshape(m * local.shape[1] * 2, -1)
    dofs = element_dofs(mesh, 2).ravel()
    out = np.zeros((2 * mesh.n_nodes, local.shape[1]))
    np.add.at(out, dofs, local)
    return out


def assemble_stress_load(mesh: PeriodicMesh, voigt: np.ndarray, strain: np.ndarray) -> np.ndarray:
    """Load of -integral B^T D strain for a constant Voigt strain vector."""
    geo = element_geometry(mesh)
    B = strain_operator(geo.gradients)
    stress = np.einsum("ekl,l->ek", voigt, np.asarray(strain, dtype=float))
    local = -np.einsum("eqki,ek,eq->ei", B, stress, geo.wdet)
    return np.bincount(element_dofs(mesh, 2).ravel(), weights=local.ravel(), minlength=2 * mesh.n_nodes)


def project_field(mesh: PeriodicMesh, f: VectorField, components: int = 2) -> np.ndarray:
    """Nodal interpolant of ``f`` as an interleaved dof vector."""
    return sample_field(f, mesh.nodes, components).ravel()


def evaluate_at_quadrature(mesh: PeriodicMesh, u: np.ndarray, components: int = 2) -> np.ndarray:
    """Values of a dof field at the quadrature points, shape (M, q, components)."""
    geo = element_geometry(mesh)
    local = np.asarray(u)[element_dofs(mesh, components)].reshape(mesh.n_triangles, -1, components)
    return np.einsum("qa,eac->eqc", geo.values, local)


def l2_inner(mesh: PeriodicMesh, u: np.ndarray, v: np.ndarray, components: int = 2,
             phase: Optional[Phase] = None) -> float:
    geo = element_geometry(mesh)
    uq = evaluate_at_quadrature(mesh, u, components)
    vq = evaluate_at_quadrature(mesh, v, components)
    weights = geo.wdet if phase is None else geo.wdet * (mesh.phases == phase)[:, None]
    return float(np.einsum("eqc,eqc,eq->", uq, vq, weights))


def l2_norm(mesh: PeriodicMesh, u: np.ndarray, components: int = 2, phase: Optional[Phase] = None) -> float:
    return float(np.sqrt(max(l2_inner(mesh, u, u, components, phase), 0.0)))


def mean_value(mesh: PeriodicMesh, u: np.ndarray, components: int = 2) -> np.ndarray:
    """Integral of u over the mesh (equal to the mean over a unit cell)."""
    geo = element_geometry(mesh)
    return np.einsum("eqc,eq->c", evaluate_at_quadrature(mesh, u, components), geo.wdet)


def write_coo(matrix, path: Union[str, Path]) -> Path:
    """Write ``row col value`` lines with 17 significant digits."""
    coo = coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    lines = [f"{r} {c} {v:.17g}" for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order])]
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    except OSError as e:
        raise ReportIoError(f"Cannot write {path}: {e}") from e
    return path


def strain_field(mesh: PeriodicMesh, u: np.ndarray) -> np.ndarray:
    """Voigt strains (engineering shear) of a displacement at the quadrature points, (M, q, 3)."""
    geo = element_geometry(mesh)
    local = np.asarray(u)[element_dofs(mesh, 2)]
    return np.einsum("eqki,ei->eqk", strain_operator(geo.gradients), local)


def quadrature_weights(mesh: PeriodicMesh) -> np.ndarray:
    return element_geometry(mesh).wdet
