"""Lagrange P1/P2 reference triangles, the order-4 quadrature and affine element maps."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from errors import UnsupportedOrder
from geometry.mesh import PeriodicMesh

# 6-point rule exact for polynomials of degree 4; barycentric (L1, L2), weights sum to 1.
_A, _B = 0.445948490915965, 0.091576213509771
_WA, _WB = 0.223381589678011, 0.109951743655322
QUAD_POINTS = np.array([
    [_A, _A], [_A, 1.0 - 2.0 * _A], [1.0 - 2.0 * _A, _A],
    [_B, _B], [_B, 1.0 - 2.0 * _B], [1.0 - 2.0 * _B, _B],
])
QUAD_WEIGHTS = np.array([_WA, _WA, _WA, _WB, _WB, _WB])

N_LOCAL = {"P1": 3, "P2": 6}


def _barycentric(points: np.ndarray) -> np.ndarray:
    xi, eta = points[:, 0], points[:, 1]
    return np.column_stack([1.0 - xi - eta, xi, eta])


_DL = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


def shape_values(order: str, points: np.ndarray) -> np.ndarray:
    """Shape functions at reference points, shape (n_points, n_local)."""
    L = _barycentric(np.atleast_2d(points))
    if order == "P1":
        return L
    if order == "P2":
        return np.column_stack([
            L[:, 0] * (2 * L[:, 0] - 1), L[:, 1] * (2 * L[:, 1] - 1), L[:, 2] * (2 * L[:, 2] - 1),
            4 * L[:, 0] * L[:, 1], 4 * L[:, 1] * L[:, 2], 4 * L[:, 2] * L[:, 0],
        ])
    raise UnsupportedOrder(f"Unsupported element order {order!r}")


def shape_gradients(order: str, points: np.ndarray) -> np.ndarray:
    """Reference gradients, shape (n_points, n_local, 2)."""
    L = _barycentric(np.atleast_2d(points))
    n = len(L)
    if order == "P1":
        return np.broadcast_to(_DL, (n, 3, 2)).copy()
    if order == "P2":
        grads = np.empty((n, 6, 2))
        for a in range(3):
            grads[:, a] = (4 * L[:, a] - 1)[:, None] * _DL[a]
        for k, (a, b) in enumerate(((0, 1), (1, 2), (2, 0))):
            grads[:, 3 + k] = 4 * (L[:, a][:, None] * _DL[b] + L[:, b][:, None] * _DL[a])
        return grads
    raise UnsupportedOrder(f"Unsupported element order {order!r}")


@dataclass(frozen=True, eq=False)
class ReferenceElement:
    order: str
    values: np.ndarray      # (q, n_local)
    gradients: np.ndarray   # (q, n_local, 2)
    points: np.ndarray      # (q, 2)
    weights: np.ndarray     # (q,), reference area 1/2 included

    @property
    def n_local(self) -> int:
        return self.values.shape[1]


@lru_cache(maxsize=None)
def reference_element(order: str) -> ReferenceElement:
    if order not in N_LOCAL:
        raise UnsupportedOrder(f"Unsupported element order {order!r}")
    return ReferenceElement(order, shape_values(order, QUAD_POINTS), shape_gradients(order, QUAD_POINTS),
                            QUAD_POINTS, 0.5 * QUAD_WEIGHTS)


@dataclass(frozen=True, eq=False)
class ElementGeometry:
    """Affine maps of all triangles evaluated at the quadrature points."""
    gradients: np.ndarray   # (M, q, n_local, 2) physical gradients
    values: np.ndarray      # (q, n_local)
    wdet: np.ndarray        # (M, q) quadrature weight times |det J|
    points: np.ndarray      # (M, q, 2) physical quadrature points


def inverse_jacobians(mesh: PeriodicMesh):
    """Inverse Jacobians (M, 2, 2) and determinants (M,) of the affine maps."""
    x = mesh.nodes[mesh.corners]
    jac = np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]], axis=2)  # columns are edge vectors
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    inv = np.empty_like(jac)
    inv[:, 0, 0] = jac[:, 1, 1] / det
    inv[:, 1, 1] = jac[:, 0, 0] / det
    inv[:, 0, 1] = -jac[:, 0, 1] / det
    inv[:, 1, 0] = -jac[:, 1, 0] / det
    return inv, det


def physical_gradients(mesh: PeriodicMesh, order: str, points: np.ndarray) -> np.ndarray:
    """Shape gradients at reference points mapped to every element, shape (M, n_points, n_local, 2)."""
    inv, _ = inverse_jacobians(mesh)
    return np.einsum("qaj,eji->eqai", shape_gradients(order, points), inv)


def element_geometry(mesh: PeriodicMesh, order: str = None) -> ElementGeometry:
    order = order or mesh.element_order
    ref = reference_element(order)
    x = mesh.nodes[mesh.corners]                      # (M, 3, 2)
    inv, det = inverse_jacobians(mesh)
    gradients = np.einsum("qaj,eji->eqai", ref.gradients, inv)
    wdet = np.abs(det)[:, None] * ref.weights[None, :]
    bary = _barycentric(ref.points)
    points = np.einsum("qk,ekd->eqd", bary, x)
    return ElementGeometry(gradients, ref.values, wdet, points)


def element_dofs(mesh: PeriodicMesh, components: int = 2) -> np.ndarray:
    """Interleaved global dofs per element, ``[n0x, n0y, n1x, ...]``."""
    nodes = mesh.triangles
    if components == 1:
        return nodes
    return (components * nodes[:, :, None] + np.arange(components)).reshape(len(nodes), -1)
