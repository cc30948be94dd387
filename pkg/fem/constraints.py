"""Periodic and Dirichlet elimination plus the mean-zero translation constraint."""
from __future__ import annotations

import logging
from typing import Iterable, Optional

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix

from errors import EmptyBoundary, MissingPeriodicPairs
from fem.assembly import DofMap, SparseSystem, scalar_mass_matrix
from geometry.mesh import PeriodicMesh

logger = logging.getLogger(__name__)

PERIODIC = "periodic"
DIRICHLET = "dirichlet"
MEAN_ZERO = "mean_zero"
KNOWN_CONSTRAINTS = {PERIODIC, DIRICHLET, MEAN_ZERO}


def node_dofs(nodes: np.ndarray, components: int) -> np.ndarray:
    nodes = np.asarray(nodes, dtype=np.int64)
    return (components * nodes[:, None] + np.arange(components)).ravel()


def periodic_prolongation(mesh: PeriodicMesh, components: int, n_full: int) -> csr_matrix:
    """Columns are the master dofs; every slave row copies the column of its root master."""
    if not len(mesh.periodic_pairs):
        raise MissingPeriodicPairs("Mesh carries no periodic node pairs")
    master_of = node_dofs(mesh.periodic_roots, components)
    slave_dofs = node_dofs(mesh.periodic_pairs[:, 1], components)
    kept = np.setdiff1d(np.arange(n_full), slave_dofs)
    column = np.full(n_full, -1, dtype=np.int64)
    column[kept] = np.arange(len(kept))
    cols = column[master_of]
    return coo_matrix((np.ones(n_full), (np.arange(n_full), cols)), shape=(n_full, len(kept))).tocsr()


def translation_kernel(dof_map: DofMap, components: int) -> np.ndarray:
    """Reduced representation of the constant fields, one orthonormal column per component."""
    full = np.zeros((dof_map.n_full, components))
    for c in range(components):
        full[c::components, c] = 1.0
    reduced = dof_map.prolongation.T @ full
    # For a 0/1 selection prolongation the reduced translation is again an indicator.
    reduced = (reduced > 0).astype(float)
    return reduced / np.linalg.norm(reduced, axis=0)


def mean_functional(mesh: PeriodicMesh, dof_map: DofMap, components: int) -> np.ndarray:
    """Rows mapping a reduced vector to the integral of each of its components."""
    weights = np.asarray(scalar_mass_matrix(mesh).sum(axis=1)).ravel()
    full = np.zeros((components, dof_map.n_full))
    for c in range(components):
        full[c, c::components] = weights
    return np.asarray((dof_map.prolongation.T @ full.T).T)


def constrain(system: SparseSystem, mesh: PeriodicMesh, bcs: Iterable[str],
              dirichlet_values: Optional[np.ndarray] = None) -> SparseSystem:
    """Eliminate constrained dofs: ``A_red = P^T A P`` and ``b_red = P^T (b - A g)``.

    ``mean_zero`` leaves the matrix untouched and records the translation kernel
    together with the L2 mean functional; solvers keep iterates orthogonal to the
    kernel and ``SparseSystem.remove_mean`` fixes the constant afterwards.
    Applying it twice is a no-op.
    ``dirichlet_values`` is a full-length dof vector; only its boundary entries are read.
    """
    bcs = set(bcs)
    unknown = bcs - KNOWN_CONSTRAINTS
    if unknown:
        raise ValueError(f"Unknown constraint kinds {sorted(unknown)}")
    components = system.components
    new = bcs - set(system.constraint_kind)
    if new & {PERIODIC, DIRICHLET} and system.constraint_kind & {PERIODIC, DIRICHLET}:
        raise ValueError("Eliminations must be applied together on an unconstrained system")
    if not new:
        return system
    matrix, rhs, dof_map = system.matrix, system.rhs, system.dof_map
    kinds = set(system.constraint_kind)

    eliminate = new & {PERIODIC, DIRICHLET}
    if eliminate:
        n = matrix.shape[0]
        prolongation = None
        lifting = np.zeros(n)
        if PERIODIC in eliminate:
            prolongation = periodic_prolongation(mesh, components, n)
        if DIRICHLET in eliminate:
            if not len(mesh.boundary_nodes):
                raise EmptyBoundary("Mesh has no Dirichlet nodes")
            fixed = node_dofs(mesh.boundary_nodes, components)
            if dirichlet_values is not None:
                lifting[fixed] = np.asarray(dirichlet_values, dtype=float).reshape(-1)[fixed]
            free = np.setdiff1d(np.arange(n), fixed)
            selection = coo_matrix((np.ones(len(free)), (free, np.arange(len(free)))),
                                   shape=(n, len(free))).tocsr()
            prolongation = selection if prolongation is None else _drop_fixed(prolongation, fixed)
        rhs = prolongation.T @ (rhs - matrix @ lifting)
        matrix = csr_matrix(prolongation.T @ matrix @ prolongation)
        matrix.sort_indices()
        dof_map = DofMap(prolongation, lifting)
        kinds |= eliminate
        logger.debug("constrained %s: %d -> %d dofs", sorted(eliminate), n, matrix.shape[0])

    kernel, mean_rows = system.kernel, system.mean_rows
    if MEAN_ZERO in new:
        kernel = translation_kernel(dof_map, components)
        mean_rows = mean_functional(mesh, dof_map, components)
        kinds.add(MEAN_ZERO)
    return SparseSystem(matrix, rhs, dof_map, frozenset(kinds), components, kernel, mean_rows)


def _drop_fixed(prolongation: csr_matrix, fixed: np.ndarray) -> csr_matrix:
    """Zero the rows of fixed dofs and drop the columns they alone occupied."""
    keep_rows = np.ones(prolongation.shape[0], dtype=bool)
    keep_rows[fixed] = False
    trimmed = csr_matrix(prolongation.multiply(keep_rows[:, None]))
    used = np.unique(trimmed.indices)
    return csr_matrix(trimmed[:, used])


def project_out_kernel(x: np.ndarray, kernel: Optional[np.ndarray]) -> np.ndarray:
    if kernel is None or not kernel.size:
        return x
    return x - kernel @ (kernel.T @ x)
