"""Plain-text mesh format ``mesh2d v1``.

Layout::

    mesh2d v1
    nodes N
    <id> <x> <y>
    tris M
    <id> <n1> <n2> <n3> <phase>
    periodic K
    <master> <slave>
    dirichlet L
    <node id>

Only P1 meshes are written; quadratic meshes are rebuilt with ``elevate``.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterator, List, Tuple, Union

import numpy as np

from errors import ParseError, ReportIoError, UnsupportedOrder
from geometry.mesh import Phase, PeriodicMesh, Rectangle

logger = logging.getLogger(__name__)

HEADER = "mesh2d v1"
PHASE_NAMES = {Phase.MATRIX: "matrix", Phase.INCLUSION: "inclusion"}
PHASE_BY_NAME = {name: phase for phase, name in PHASE_NAMES.items()}


def format_mesh(mesh: PeriodicMesh) -> str:
    if mesh.element_order != "P1":
        raise UnsupportedOrder("mesh2d v1 stores P1 meshes only")
    lines: List[str] = [HEADER, f"nodes {mesh.n_nodes}"]
    lines += [f"{i} {x:.17g} {y:.17g}" for i, (x, y) in enumerate(mesh.nodes)]
    lines.append(f"tris {mesh.n_triangles}")
    lines += [f"{i} {a} {b} {c} {PHASE_NAMES[Phase(int(p))]}"
              for i, ((a, b, c), p) in enumerate(zip(mesh.triangles, mesh.phases))]
    lines.append(f"periodic {len(mesh.periodic_pairs)}")
    lines += [f"{m} {s}" for m, s in mesh.periodic_pairs]
    lines.append(f"dirichlet {len(mesh.boundary_nodes)}")
    lines += [str(n) for n in mesh.boundary_nodes]
    return "\n".join(lines) + "\n"


def write_mesh(mesh: PeriodicMesh, path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(format_mesh(mesh), encoding="utf-8")
    except OSError as e:
        raise ReportIoError(f"Cannot write mesh to {path}: {e}") from e
    logger.debug("wrote %s (%d nodes)", path, mesh.n_nodes)
    return path


class _Lines:
    """Cursor over non-empty lines that remembers 1-based line numbers."""

    def __init__(self, text: str):
        self._items: List[Tuple[int, List[str]]] = [
            (n, line.split()) for n, line in enumerate(text.splitlines(), start=1) if line.strip()]
        self._pos = 0

    def next(self, what: str) -> Tuple[int, List[str]]:
        if self._pos >= len(self._items):
            raise ParseError(f"Unexpected end of file while reading {what}")
        item = self._items[self._pos]
        self._pos += 1
        return item

    def section(self, keyword: str) -> Tuple[int, int]:
        line_no, tokens = self.next(f"'{keyword}' header")
        if len(tokens) != 2 or tokens[0] != keyword:
            raise ParseError(f"Expected '{keyword} <count>'", line_no, 1)
        return line_no, _int(tokens[1], line_no)

    def rows(self, count: int, width: int, what: str) -> Iterator[Tuple[int, List[str]]]:
        for _ in range(count):
            line_no, tokens = self.next(what)
            if len(tokens) != width:
                raise ParseError(f"Expected {width} fields in {what} row, got {len(tokens)}", line_no, 1)
            yield line_no, tokens

    def exhausted(self) -> bool:
        return self._pos >= len(self._items)


def _int(token: str, line_no: int) -> int:
    try:
        return int(token)
    except ValueError:
        raise ParseError(f"Expected integer, got {token!r}", line_no)


def parse_mesh(text: str) -> PeriodicMesh:
    cursor = _Lines(text)
    line_no, tokens = cursor.next("header")
    if " ".join(tokens) != HEADER:
        raise ParseError(f"Expected header '{HEADER}'", line_no, 1)

    _, n_nodes = cursor.section("nodes")
    nodes = np.zeros((n_nodes, 2))
    for line_no, tokens in cursor.rows(n_nodes, 3, "node"):
        index = _int(tokens[0], line_no)
        if not 0 <= index < n_nodes:
            raise ParseError(f"Node id {index} out of range", line_no, 1)
        try:
            nodes[index] = float(tokens[1]), float(tokens[2])
        except ValueError:
            raise ParseError("Node coordinates must be real numbers", line_no, 2)

    _, n_tris = cursor.section("tris")
    triangles = np.zeros((n_tris, 3), dtype=np.int64)
    phases = np.zeros(n_tris, dtype=np.int8)
    for line_no, tokens in cursor.rows(n_tris, 5, "triangle"):
        index = _int(tokens[0], line_no)
        if not 0 <= index < n_tris:
            raise ParseError(f"Triangle id {index} out of range", line_no, 1)
        triangles[index] = [_int(t, line_no) for t in tokens[1:4]]
        if tokens[4] not in PHASE_BY_NAME:
            raise ParseError(f"Unknown phase {tokens[4]!r}", line_no, 5)
        phases[index] = PHASE_BY_NAME[tokens[4]]
    if n_tris and (triangles.min() < 0 or triangles.max() >= n_nodes):
        raise ParseError("Triangle references an unknown node")

    _, n_pairs = cursor.section("periodic")
    pairs = np.array([[_int(t, n) for t in tokens] for n, tokens in cursor.rows(n_pairs, 2, "periodic")],
                     dtype=np.int64).reshape(-1, 2)
    _, n_dirichlet = cursor.section("dirichlet")
    boundary = np.array([_int(tokens[0], n) for n, tokens in cursor.rows(n_dirichlet, 1, "dirichlet")],
                        dtype=np.int64)
    if not cursor.exhausted():
        line_no, _ = cursor.next("trailing data")
        raise ParseError("Trailing data after dirichlet section", line_no, 1)

    bounds = Rectangle(nodes[:, 0].min(), nodes[:, 0].max(), nodes[:, 1].min(), nodes[:, 1].max())
    return PeriodicMesh(nodes, triangles, phases, pairs, boundary, "P1", bounds)


def read_mesh(path: Union[str, Path]) -> PeriodicMesh:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ReportIoError(f"Cannot read mesh {path}: {e}") from e
    return parse_mesh(text)
