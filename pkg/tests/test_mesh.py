import numpy as np
import pytest

from errors import InclusionTouchesBoundary, NonTilingEpsilon, ParseError, PointOutsideDomain, ResolutionTooCoarse
from geometry.mesh import (
    UNIT_SQUARE, CellGeometry, InclusionShape, Phase, build_cell_mesh, build_fine_mesh, build_macro_mesh,
    cells_per_side, locate_phase,
)
from geometry.mesh_io import format_mesh, parse_mesh, read_mesh, write_mesh


def test_cell_mesh_partitions_the_unit_cell():
    mesh = build_cell_mesh(CellGeometry(size=0.25, resolution=32))
    assert np.all(mesh.areas > 0), "Triangles must be positively oriented"
    assert abs(mesh.areas.sum() - 1.0) < 1e-12
    inclusion = mesh.phase_area(Phase.INCLUSION)
    assert abs(inclusion - np.pi * 0.25 ** 2) / (np.pi * 0.25 ** 2) < 1e-2, f"Inclusion area {inclusion}"
    assert mesh.matrix_connected()


def test_square_inclusion_is_resolved_exactly():
    mesh = build_cell_mesh(CellGeometry(shape=InclusionShape.SQUARE, size=0.25, resolution=16))
    assert abs(mesh.phase_area(Phase.INCLUSION) - 0.25) < 1e-12


def test_periodic_pairs_differ_by_lattice_vectors():
    mesh = build_cell_mesh(CellGeometry(resolution=16))
    masters, slaves = mesh.periodic_pairs.T
    shift = mesh.nodes[slaves] - mesh.nodes[masters]
    lattice = [np.isclose(shift, vector, atol=1e-12).all(axis=1) for vector in ([1.0, 0.0], [0.0, 1.0])]
    assert np.all(lattice[0] | lattice[1]), "Every pair differs by (1,0) or (0,1)"
    assert len(set(slaves)) == len(slaves), "A slave has exactly one master"
    roots = mesh.periodic_roots
    assert not set(roots[slaves]) & set(slaves), "Roots are never slaves"
    # the four corners share one master at the origin
    corners = [np.flatnonzero(np.all(np.isclose(mesh.nodes, c), axis=1))[0]
               for c in ((0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0))]
    assert set(roots[corners]) == {corners[0]}


def test_empty_geometry_has_only_matrix():
    mesh = build_cell_mesh(CellGeometry(size=0.0, resolution=8))
    assert np.all(mesh.phases == Phase.MATRIX)
    assert mesh.n_triangles == 2 * 8 * 8


def test_cell_mesh_rejects_bad_geometry():
    with pytest.raises(InclusionTouchesBoundary):
        build_cell_mesh(CellGeometry(size=0.49, resolution=8))
    with pytest.raises(ResolutionTooCoarse):
        build_cell_mesh(CellGeometry(resolution=2))
    with pytest.raises(ResolutionTooCoarse):
        build_cell_mesh(CellGeometry(size=0.1, resolution=8))


def test_fine_mesh_keeps_inclusions_off_the_boundary():
    cell = build_cell_mesh(CellGeometry(resolution=8))
    fine = build_fine_mesh(UNIT_SQUARE, 0.25, 8)
    assert fine.n_triangles == 16 * cell.n_triangles
    inclusion_triangles = int(np.sum(cell.phases == Phase.INCLUSION))
    assert int(np.sum(fine.phases == Phase.INCLUSION)) == 4 * inclusion_triangles
    assert abs(fine.phase_area(Phase.INCLUSION) - 4 * 0.25 ** 2 * cell.phase_area(Phase.INCLUSION)) < 1e-12
    boundary = fine.boundary_nodes
    on_edge = np.isclose(fine.nodes[boundary], 0.0) | np.isclose(fine.nodes[boundary], 1.0)
    assert np.all(on_edge.any(axis=1))
    assert fine.n_nodes == (4 * 8 + 1) ** 2, "Shared cell faces must be merged"


def test_fine_mesh_rejects_non_tiling_eps():
    with pytest.raises(NonTilingEpsilon):
        cells_per_side(UNIT_SQUARE, 0.3)
    with pytest.raises(ResolutionTooCoarse):
        build_fine_mesh(UNIT_SQUARE, 0.25, 4)


def test_elevate_adds_one_node_per_edge():
    mesh = build_cell_mesh(CellGeometry(resolution=8))
    p2 = mesh.elevate("P2")
    assert p2.n_nodes == mesh.n_nodes + len(mesh.edges)
    assert p2.n_vertices == mesh.n_nodes
    assert p2.triangles.shape == (mesh.n_triangles, 6)
    midpoint = 0.5 * (p2.nodes[p2.triangles[:, 0]] + p2.nodes[p2.triangles[:, 1]])
    assert np.allclose(midpoint, p2.nodes[p2.triangles[:, 3]])
    assert len(p2.periodic_pairs) > len(mesh.periodic_pairs)


def test_macro_mesh_boundary():
    mesh = build_macro_mesh(UNIT_SQUARE, 4)
    assert mesh.n_nodes == 25
    assert len(mesh.boundary_nodes) == 16


def test_locate_phase():
    mesh = build_cell_mesh(CellGeometry(resolution=16))
    assert locate_phase(mesh, (0.5, 0.5)) == Phase.INCLUSION
    assert locate_phase(mesh, (0.05, 0.05)) == Phase.MATRIX
    with pytest.raises(PointOutsideDomain):
        locate_phase(mesh, (1.5, 0.5))


def test_mesh_file_reads_back(tmp_path):
    mesh = build_cell_mesh(CellGeometry(resolution=8))
    path = write_mesh(mesh, tmp_path / "cell.txt")
    again = read_mesh(path)
    assert np.array_equal(again.nodes, mesh.nodes), "17 significant digits must round trip exactly"
    assert np.array_equal(again.triangles, mesh.triangles)
    assert np.array_equal(again.phases, mesh.phases)
    assert np.array_equal(again.periodic_pairs, mesh.periodic_pairs)
    assert format_mesh(again) == format_mesh(mesh)


def test_mesh_parse_errors_carry_lines():
    text = format_mesh(build_cell_mesh(CellGeometry(resolution=8)))
    with pytest.raises(ParseError):
        parse_mesh("mesh2d v2\n" + text.split("\n", 1)[1])
    lines = text.splitlines()
    lines[2] = "0 zero 0.0"
    with pytest.raises(ParseError) as info:
        parse_mesh("\n".join(lines))
    assert info.value.line == 3
