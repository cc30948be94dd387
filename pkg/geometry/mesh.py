"""Conforming triangulations of the periodic cell, the macroscopic domain and the
eps-periodic composite.

All meshes start from a structured grid split into two triangles per square.
Inclusions are fitted by snapping grid nodes onto the interface: for every grid
edge whose end points lie on opposite sides of the interface, the end point
closer to the interface is projected onto it. Each square is then cut along the
diagonal that does not join two nodes strictly on opposite sides, so every
triangle ends up in exactly one phase.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from errors import (
    InclusionTouchesBoundary,
    MissingPeriodicPairs,
    NonTilingEpsilon,
    PointOutsideDomain,
    ResolutionTooCoarse,
    UnsupportedOrder,
)

logger = logging.getLogger(__name__)

LOCAL_EDGES = np.array([[0, 1], [1, 2], [2, 0]])
COORD_TOL = 1e-10


class Phase(IntEnum):
    MATRIX = 0
    INCLUSION = 1


class InclusionShape(str, Enum):
    DISK = "disk"
    SQUARE = "square"


@dataclass(frozen=True)
class Rectangle:
    x0: float = 0.0
    x1: float = 1.0
    y0: float = 0.0
    y1: float = 1.0

    @classmethod
    def from_sequence(cls, values: Sequence[float]) -> "Rectangle":
        x0, x1, y0, y1 = (float(v) for v in values)
        if x1 <= x0 or y1 <= y0:
            raise ValueError(f"Degenerate rectangle {values}")
        return cls(x0, x1, y0, y1)

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    def contains(self, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        p = np.atleast_2d(points)
        return ((p[:, 0] >= self.x0 - tol) & (p[:, 0] <= self.x1 + tol)
                & (p[:, 1] >= self.y0 - tol) & (p[:, 1] <= self.y1 + tol))


UNIT_SQUARE = Rectangle()


@dataclass(frozen=True)
class CellGeometry:
    """Unit cell Q with one inclusion Q2; ``size`` is the disk radius or the square half width."""
    shape: InclusionShape = InclusionShape.DISK
    center: Tuple[float, float] = (0.5, 0.5)
    size: float = 0.25
    resolution: int = 32

    @property
    def is_empty(self) -> bool:
        return self.size <= 0.0

    @property
    def inclusion_area(self) -> float:
        if self.is_empty:
            return 0.0
        if self.shape == InclusionShape.DISK:
            return float(np.pi * self.size ** 2)
        return float((2.0 * self.size) ** 2)

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        """Negative inside Q2, positive in the matrix."""
        p = np.atleast_2d(points) - np.asarray(self.center)
        if self.shape == InclusionShape.DISK:
            return np.hypot(p[:, 0], p[:, 1]) - self.size
        q = np.abs(p) - self.size
        outside = np.hypot(np.maximum(q[:, 0], 0.0), np.maximum(q[:, 1], 0.0))
        return outside + np.minimum(np.maximum(q[:, 0], q[:, 1]), 0.0)

    def project(self, points: np.ndarray) -> np.ndarray:
        """Closest point on the interface."""
        c = np.asarray(self.center)
        p = np.atleast_2d(points) - c
        if self.shape == InclusionShape.DISK:
            r = np.hypot(p[:, 0], p[:, 1])
            r = np.where(r == 0.0, 1.0, r)
            return c + p * (self.size / r)[:, None]
        out = np.clip(p, -self.size, self.size)
        inside = np.all(np.abs(p) < self.size, axis=1)
        if np.any(inside):
            pi = p[inside]
            axis = np.argmax(np.abs(pi), axis=1)
            rows = np.arange(len(pi))
            snapped = pi.copy()
            snapped[rows, axis] = np.sign(pi[rows, axis]) * self.size
            out[inside] = snapped
        return c + out


@dataclass(frozen=True, eq=False)
class PeriodicMesh:
    """Triangulation with phase tags, periodic node identification and Dirichlet nodes.

    ``triangles`` has 3 columns for P1 meshes and 6 for P2 meshes (corners, then
    the mid-edge nodes of edges 01, 12, 20). Corner nodes always carry the lowest
    ids, so P1 pressure dofs of a P2 mesh are simply its vertex ids.
    ``periodic_pairs`` rows are ``(master, slave)``.
    """
    nodes: np.ndarray
    triangles: np.ndarray
    phases: np.ndarray
    periodic_pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    boundary_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    element_order: str = "P1"
    bounds: Rectangle = UNIT_SQUARE

    def __post_init__(self):
        for name, dtype in (("nodes", float), ("triangles", np.int64), ("phases", np.int8),
                            ("periodic_pairs", np.int64), ("boundary_nodes", np.int64)):
            array = np.array(getattr(self, name), dtype=dtype)
            if name == "periodic_pairs":
                array = array.reshape(-1, 2)
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    # ---- sizes ---- #
    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def corners(self) -> np.ndarray:
        return self.triangles[:, :3]

    @cached_property
    def n_vertices(self) -> int:
        return int(self.corners.max()) + 1 if self.n_triangles else 0

    @cached_property
    def periodic_roots(self) -> np.ndarray:
        """The master every node is identified with, following corner chains to the end."""
        root = np.arange(self.n_nodes)
        root[self.periodic_pairs[:, 1]] = self.periodic_pairs[:, 0]
        for _ in range(2):
            root = root[root]
        return root

    @cached_property
    def areas(self) -> np.ndarray:
        a, b, c = (self.nodes[self.corners[:, k]] for k in range(3))
        return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))

    def phase_area(self, phase: Phase) -> float:
        return float(self.areas[self.phases == phase].sum())

    # ---- topology ---- #
    @cached_property
    def _edge_table(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Unique corner edges, triangle-to-edge map (M, 3) and edge multiplicity."""
        pairs = np.sort(self.corners[:, LOCAL_EDGES], axis=2).reshape(-1, 2)
        keys = pairs[:, 0] * max(self.n_vertices, 1) + pairs[:, 1]
        unique_keys, first, inverse, counts = np.unique(
            keys, return_index=True, return_inverse=True, return_counts=True)
        return pairs[first], inverse.reshape(-1).reshape(-1, 3), counts

    @property
    def edges(self) -> np.ndarray:
        return self._edge_table[0]

    def matrix_connected(self) -> bool:
        """True when the matrix-phase elements form one edge-connected component."""
        matrix = np.flatnonzero(self.phases == Phase.MATRIX)
        if len(matrix) <= 1:
            return True
        _, tri_edges, _ = self._edge_table
        local = tri_edges[matrix]
        elems = np.repeat(np.arange(len(matrix)), 3)
        incidence = coo_matrix((np.ones(elems.size), (elems, local.ravel())),
                               shape=(len(matrix), int(tri_edges.max()) + 1)).tocsr()
        adjacency = incidence @ incidence.T
        n_components, _ = connected_components(adjacency, directed=False)
        return n_components == 1

    # ---- derived meshes ---- #
    def elevate(self, order: str = "P2") -> "PeriodicMesh":
        """Return the same triangulation carrying quadratic (6-node) elements."""
        if order == self.element_order:
            return self
        if self.element_order != "P1" or order != "P2":
            raise UnsupportedOrder(f"Cannot elevate {self.element_order} mesh to {order}")
        edges, tri_edges, counts = self._edge_table
        n = self.n_nodes
        midpoints = 0.5 * (self.nodes[edges[:, 0]] + self.nodes[edges[:, 1]])
        nodes = np.vstack([self.nodes, midpoints])
        triangles = np.hstack([self.triangles, n + tri_edges])
        boundary = np.union1d(self.boundary_nodes, n + np.flatnonzero(counts == 1))
        pairs = np.zeros((0, 2), dtype=np.int64)
        if len(self.periodic_pairs):
            pairs = pair_periodic_nodes(nodes, self.bounds)
        return PeriodicMesh(nodes, triangles, self.phases, pairs, boundary, "P2", self.bounds)

    def submesh(self, phase: Phase) -> "PeriodicMesh":
        """Non-periodic mesh of one phase; its Dirichlet nodes are its topological boundary."""
        if self.element_order != "P1":
            raise UnsupportedOrder("Extract submeshes from the P1 geometry, then elevate")
        keep = self.phases == phase
        if not np.any(keep):
            raise ResolutionTooCoarse(f"Mesh has no {phase.name.lower()} elements")
        triangles = self.triangles[keep]
        used = np.unique(triangles)
        renumber = np.full(self.n_nodes, -1, dtype=np.int64)
        renumber[used] = np.arange(len(used))
        nodes = self.nodes[used]
        triangles = renumber[triangles]
        bounds = Rectangle(nodes[:, 0].min(), nodes[:, 0].max(), nodes[:, 1].min(), nodes[:, 1].max())
        return PeriodicMesh(nodes, triangles, np.full(len(triangles), phase, dtype=np.int8),
                            np.zeros((0, 2), dtype=np.int64), _boundary_vertices(triangles), "P1", bounds)


# ---------------- helpers ---------------- #
def _boundary_vertices(triangles: np.ndarray) -> np.ndarray:
    pairs = np.sort(triangles[:, :3][:, LOCAL_EDGES], axis=2).reshape(-1, 2)
    unique, counts = np.unique(pairs, axis=0, return_counts=True)
    return np.unique(unique[counts == 1])


def pair_periodic_nodes(nodes: np.ndarray, bounds: Rectangle, tol: float = COORD_TOL) -> np.ndarray:
    """Pair nodes on the right/top faces with their images on the left/bottom faces.

    Every pair differs by one lattice vector. The top-right corner pairs with the
    top-left one, which pairs with the origin, so the four corners reach a single
    master through ``periodic_roots``.
    """
    x, y = nodes[:, 0], nodes[:, 1]
    tree = cKDTree(nodes)
    right = np.abs(x - bounds.x1) < tol
    top = (np.abs(y - bounds.y1) < tol) & ~right
    pairs = []
    for on_face, shift in ((right, (bounds.width, 0.0)), (top, (0.0, bounds.height))):
        slaves = np.flatnonzero(on_face)
        if not len(slaves):
            raise MissingPeriodicPairs("No nodes on a periodic face")
        distance, image = tree.query(nodes[slaves] - np.asarray(shift))
        if np.any(distance > tol):
            raise MissingPeriodicPairs(
                f"{int(np.sum(distance > tol))} face nodes have no periodic image")
        pairs.append(np.column_stack([image, slaves]))
    return np.vstack(pairs)


def _structured_grid(rect: Rectangle, nx: int, ny: int) -> Tuple[np.ndarray, np.ndarray]:
    """Grid nodes (row-major in y) and the 4 counter-clockwise corners of every square."""
    xs = np.linspace(rect.x0, rect.x1, nx + 1)
    ys = np.linspace(rect.y0, rect.y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    c0 = (j * (nx + 1) + i).ravel()
    squares = np.column_stack([c0, c0 + 1, c0 + nx + 2, c0 + nx + 1])
    return nodes, squares


def _split_squares(squares: np.ndarray, sign: Optional[np.ndarray] = None) -> np.ndarray:
    """Cut squares along 0-2 unless that diagonal joins opposite strict signs; then use 1-3."""
    use_13 = np.zeros(len(squares), dtype=bool)
    if sign is not None:
        use_13 = sign[squares[:, 0]] * sign[squares[:, 2]] < 0
    c0, c1, c2, c3 = squares.T
    first = np.where(use_13[:, None], np.column_stack([c0, c1, c3]), np.column_stack([c0, c1, c2]))
    second = np.where(use_13[:, None], np.column_stack([c1, c2, c3]), np.column_stack([c0, c2, c3]))
    return np.stack([first, second], axis=1).reshape(-1, 3)


def _snap_to_interface(nodes: np.ndarray, geom: CellGeometry, nx: int) -> np.ndarray:
    """Move the nearer end of every interface-crossing grid edge onto the interface; return signs."""
    distance = geom.signed_distance(nodes)
    ids = np.arange(len(nodes)).reshape(-1, nx + 1)
    horizontal = np.column_stack([ids[:, :-1].ravel(), ids[:, 1:].ravel()])
    vertical = np.column_stack([ids[:-1, :].ravel(), ids[1:, :].ravel()])
    grid_edges = np.vstack([horizontal, vertical])
    a, b = grid_edges.T
    crossing = distance[a] * distance[b] < 0.0
    nearer = np.where(np.abs(distance[a]) <= np.abs(distance[b]), a, b)
    snapped = np.unique(nearer[crossing])
    nodes[snapped] = geom.project(nodes[snapped])
    sign = np.sign(distance)
    sign[np.abs(distance) < 1e-14] = 0.0
    sign[snapped] = 0.0
    return sign


# ---------------- builders ---------------- #
def build_cell_mesh(geom: CellGeometry) -> PeriodicMesh:
    """Triangulate Q = [0,1]^2 with the inclusion resolved by element edges."""
    n = int(geom.resolution)
    if n < 4:
        raise ResolutionTooCoarse(f"Cell resolution {n} < 4")
    h = 1.0 / n
    if not geom.is_empty:
        cx, cy = geom.center
        lo = min(cx, cy) - geom.size
        hi = max(cx, cy) + geom.size
        if lo < h - 1e-12 or hi > 1.0 - h + 1e-12:
            raise InclusionTouchesBoundary(
                f"Inclusion extent [{lo:.4g}, {hi:.4g}] leaves less than one element ({h:.4g}) to the cell faces")
        if geom.size < 2.0 * h:
            raise ResolutionTooCoarse(f"Inclusion size {geom.size} spans fewer than two elements at resolution {n}")

    nodes, squares = _structured_grid(UNIT_SQUARE, n, n)
    sign = None
    if not geom.is_empty:
        sign = _snap_to_interface(nodes, geom, n)
    triangles = _split_squares(squares, sign)

    phases = np.full(len(triangles), Phase.MATRIX, dtype=np.int8)
    if sign is not None:
        s = sign[triangles]
        has_in = np.any(s < 0, axis=1)
        has_out = np.any(s > 0, axis=1)
        if np.any(has_in & has_out):
            raise ResolutionTooCoarse("Interface is not resolved by element edges")
        on_interface = ~has_in & ~has_out
        centroid_in = geom.signed_distance(nodes[triangles].mean(axis=1)) < 0.0
        phases[has_in | (on_interface & centroid_in)] = Phase.INCLUSION
        if not np.any(phases == Phase.INCLUSION):
            raise ResolutionTooCoarse("Inclusion captured no elements")

    mesh = PeriodicMesh(nodes, triangles, phases, pair_periodic_nodes(nodes, UNIT_SQUARE),
                        _boundary_vertices(triangles), "P1", UNIT_SQUARE)
    if np.any(mesh.areas <= 1e-6 * h * h):
        raise ResolutionTooCoarse("Snapping produced degenerate or inverted elements")
    if not mesh.matrix_connected():
        raise ResolutionTooCoarse("Matrix phase is not connected")
    logger.debug("cell mesh: %d nodes, %d triangles, inclusion area %.6f",
                 mesh.n_nodes, mesh.n_triangles, mesh.phase_area(Phase.INCLUSION))
    return mesh


def build_macro_mesh(domain: Rectangle = UNIT_SQUARE, n: int = 8) -> PeriodicMesh:
    """Structured matrix-only mesh with ``n`` segments per unit length."""
    if n < 2:
        raise ValueError(f"Macro resolution n={n} < 2")
    nx = max(1, int(round(n * domain.width)))
    ny = max(1, int(round(n * domain.height)))
    nodes, squares = _structured_grid(domain, nx, ny)
    triangles = _split_squares(squares)
    return PeriodicMesh(nodes, triangles, np.zeros(len(triangles), dtype=np.int8),
                        np.zeros((0, 2), dtype=np.int64), _boundary_vertices(triangles), "P1", domain)


def cells_per_side(domain: Rectangle, eps: float) -> Tuple[int, int]:
    counts = []
    for length in (domain.width, domain.height):
        m = length / eps
        if abs(m - round(m)) > 1e-9 or round(m) < 1:
            raise NonTilingEpsilon(f"eps={eps} does not tile a side of length {length}")
        counts.append(int(round(m)))
    inverse = 1.0 / eps
    if abs(inverse - round(inverse)) > 1e-9:
        raise NonTilingEpsilon(f"1/eps = {inverse} is not an integer")
    return counts[0], counts[1]


def build_fine_mesh(domain: Rectangle, eps: float, cells_res: int,
                    geometry: Optional[CellGeometry] = None) -> PeriodicMesh:
    """Tile ``domain`` with eps-scaled copies of the cell mesh.

    Inclusions of cells that touch the outer boundary are tagged as matrix, so no
    inclusion intersects or touches the boundary of the domain.
    """
    nxc, nyc = cells_per_side(domain, eps)
    if cells_res < 8:
        raise ResolutionTooCoarse(f"cells_res={cells_res} < 8")
    geom = replace(geometry or CellGeometry(), resolution=int(cells_res))
    cell = build_cell_mesh(geom)

    ci, cj = np.meshgrid(np.arange(nxc), np.arange(nyc))
    ci, cj = ci.ravel(), cj.ravel()
    n_cells = len(ci)
    offsets = np.column_stack([ci, cj]).astype(float)
    coords = ((offsets[:, None, :] + cell.nodes[None, :, :]) * eps
              + np.array([domain.x0, domain.y0])).reshape(-1, 2)
    triangles = (cell.triangles[None, :, :] + (np.arange(n_cells) * cell.n_nodes)[:, None, None]).reshape(-1, 3)
    touches = (ci == 0) | (ci == nxc - 1) | (cj == 0) | (cj == nyc - 1)
    phases = np.where(touches[:, None], Phase.MATRIX, cell.phases[None, :]).astype(np.int8).ravel()

    keys = np.round(coords / COORD_TOL).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    nodes = coords[first]
    triangles = inverse[triangles]
    mesh = PeriodicMesh(nodes, triangles, phases, np.zeros((0, 2), dtype=np.int64),
                        _boundary_vertices(triangles), "P1", domain)
    logger.info("fine mesh eps=%g: %d cells (%d with inclusions), %d triangles",
                eps, n_cells, int(np.sum(~touches)) if not geom.is_empty else 0, mesh.n_triangles)
    return mesh


def locate_phase(mesh: PeriodicMesh, x: Sequence[float], tol: float = 1e-12) -> Phase:
    """Phase of the containing triangle; points on shared edges go to the lowest triangle index."""
    point = np.asarray(x, dtype=float)
    if not mesh.bounds.contains(point, tol)[0]:
        raise PointOutsideDomain(f"{tuple(point)} lies outside the mesh bounding box")
    a, b, c = (mesh.nodes[mesh.corners[:, k]] for k in range(3))
    v0, v1, v2 = b - a, c - a, point - a
    det = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
    l1 = (v2[:, 0] * v1[:, 1] - v2[:, 1] * v1[:, 0]) / det
    l2 = (v0[:, 0] * v2[:, 1] - v0[:, 1] * v2[:, 0]) / det
    inside = (l1 >= -tol) & (l2 >= -tol) & (1.0 - l1 - l2 >= -tol)
    hits = np.flatnonzero(inside)
    if not len(hits):
        raise PointOutsideDomain(f"{tuple(point)} is not covered by any triangle")
    return Phase(int(mesh.phases[hits[0]]))
