import numpy as np
import pytest

from fem.assembly import mean_value
from fem.tensors import ElasticityTensor4, MaterialSpec
from geometry.mesh import CellGeometry, build_cell_mesh
from homogenization.cell_problem import CellHomogenizer, compute_effective_tensor, tensor_checks

HOMOGENEOUS = np.array([[3.0, 1.0, 0.0], [1.0, 3.0, 0.0], [0.0, 0.0, 1.0]])


def test_homogeneous_cell_returns_the_matrix_tensor():
    mesh = build_cell_mesh(CellGeometry(size=0.0, resolution=8))
    cell = CellHomogenizer(mesh, MaterialSpec.isotropic(1.0, 1.0))
    chom = cell.compute_effective_tensor()
    assert np.abs(chom.voigt - HOMOGENEOUS).max() <= 1e-9, f"Got {chom.voigt}"
    assert all(cell.solve_cell_problem(rs).zero_rhs for rs in ("11", "22", "12"))


def test_homogeneous_anisotropic_cell():
    voigt = np.array([[4.0, 1.5, 0.3], [1.5, 2.0, -0.2], [0.3, -0.2, 1.2]])
    material = MaterialSpec(ElasticityTensor4.from_voigt(voigt))
    chom = compute_effective_tensor(build_cell_mesh(CellGeometry(size=0.0, resolution=8)), material)
    assert np.abs(chom.voigt - voigt).max() <= 1e-9


@pytest.fixture(scope="module")
def disk_cell():
    mesh = build_cell_mesh(CellGeometry(size=0.25, resolution=16))
    return CellHomogenizer(mesh, MaterialSpec.isotropic(1.0, 1.0), bubble_samples=6)


def test_disk_cell_tensor_structure(disk_cell):
    chom = disk_cell.compute_effective_tensor()
    checks = tensor_checks(chom, disk_cell.compute_perforated_tensor(), disk_cell.arithmetic_mean())
    assert checks["symmetry_ok"], checks
    assert checks["positivity_ok"], checks
    assert checks["sandwich_ok"], checks
    assert abs(chom.voigt[0, 0] - chom.voigt[1, 1]) <= 1e-6 * chom.voigt[0, 0], "Disk cell is symmetric in x <-> y"
    # the soft inclusion lowers the stiffness below the matrix
    assert chom.voigt[0, 0] < HOMOGENEOUS[0, 0]


def test_cell_solutions_are_consistent(disk_cell):
    for rs in ("11", "22", "12"):
        solution = disk_cell.solve_cell_problem(rs)
        assert solution.report.converged
        assert solution.consistency_defect <= 1e-12
        assert solution.report.range_defect <= 1e-9
    assert disk_cell.solve_cell_problem("21") is disk_cell.solve_cell_problem("12")
    with pytest.raises(ValueError):
        disk_cell.solve_cell_problem("13")


def test_correctors_have_zero_mean(disk_cell):
    mesh = disk_cell.mesh.elevate("P2")
    for rs in ("11", "22", "12"):
        field = disk_cell.solve_cell_problem(rs).field
        assert np.abs(mean_value(mesh, field)).max() <= 1e-12


def test_kernel_members_do_not_change_chom(disk_cell):
    kernel = disk_cell.kernel_basis()
    assert kernel.bubble_samples.shape[1] > 0
    assert kernel.dimension is None or kernel.dimension > 2
    defects = kernel.annihilation_defects(disk_cell.system().matrix)
    assert defects.max() <= 1e-8 * abs(disk_cell.system().matrix).max()
    assert disk_cell.kernel_invariance_defect() <= 1e-8


def test_stiffer_inclusion_raises_chom():
    mesh = build_cell_mesh(CellGeometry(size=0.25, resolution=8))
    soft = CellHomogenizer(mesh, MaterialSpec.isotropic(1.0, 1.0, inclusion_lambda=1.0)).compute_effective_tensor()
    stiff = CellHomogenizer(mesh, MaterialSpec.isotropic(1.0, 1.0, inclusion_lambda=10.0)).compute_effective_tensor()
    strains = np.vstack([np.eye(3), [[1.0, 1.0, 0.0]]])
    assert all(stiff.quadratic_form(e) >= soft.quadratic_form(e) - 1e-10 for e in strains)
