import numpy as np
import pytest

from errors import EmptyWindow, IncompatibleInputs
from experiments.fine_scale import (
    EpsRun, FineScaleProblem, a_priori_report, eps_eigenvalues, evaluate_at_points, solve_eps_resolvent,
    spectral_gap_report, spectrum_hausdorff, two_scale_distance,
)
from fem.assembly import FormKind, assemble_form, project_field
from fem.constraints import DIRICHLET, constrain
from fem.tensors import SHEAR_PART, MaterialSpec
from forcing.spec import ForcingSpec
from geometry.mesh import UNIT_SQUARE, CellGeometry, Phase, build_macro_mesh
from homogenization.cell_problem import EffectiveTensor
from homogenization.two_scale import SpectrumLabel, SpectrumSet, macro_eigenpairs

EMPTY = CellGeometry(size=0.0)
MATERIAL = MaterialSpec.isotropic(1.0, 1.0)


@pytest.fixture(scope="module")
def problem():
    return FineScaleProblem(UNIT_SQUARE, 0.25, 8, MATERIAL)


def constant_force(x):
    return np.column_stack([np.ones(len(x)), np.zeros(len(x))])


def test_zero_force_gives_zero_displacement(problem):
    run = problem.solve_resolvent(lambda x: np.zeros((len(x), 2)), 1.0)
    assert not np.any(run.u)
    assert run.energy == 0.0 and run.energy_defect == 0.0


def test_energy_identity(problem):
    run = problem.solve_resolvent(ForcingSpec("(1, x2)", "0", "(0, y1)").eps_sampler(0.25), 1.0)
    assert run.energy_defect <= 1e-10, f"defect {run.energy_defect}"
    assert run.energy > 0
    assert set(run.norms) == {"l2", "eps_grad", "degenerate_energy"}
    assert np.all(run.u[2 * run.mesh.boundary_nodes] == 0.0)
    assert run.dofs == 2 * run.mesh.n_nodes


def test_iterative_and_direct_solvers_agree():
    direct = FineScaleProblem(UNIT_SQUARE, 0.25, 8, MATERIAL).solve_resolvent(constant_force, 1.0)
    iterative = FineScaleProblem(UNIT_SQUARE, 0.25, 8, MATERIAL, tol=1e-12,
                                 linear_solver="cg").solve_resolvent(constant_force, 1.0)
    assert np.abs(direct.u - iterative.u).max() <= 1e-6 * np.abs(direct.u).max()
    with pytest.raises(ValueError):
        FineScaleProblem(UNIT_SQUARE, 0.25, 8, MATERIAL, linear_solver="gmres")


def test_negative_alpha_is_rejected(problem):
    with pytest.raises(ValueError):
        problem.solve_resolvent(constant_force, -1.0)


def test_classical_contrast_stiffness():
    material = MaterialSpec.isotropic(1.0, 1.0, degenerate_scaling=False)
    fine = FineScaleProblem(UNIT_SQUARE, 0.25, 8, material)
    tensors = {Phase.MATRIX: material.matrix_tensor,
               Phase.INCLUSION: material.degenerate_tensor(Phase.INCLUSION)
               + 2.0 * material.inclusion_mu_scale * SHEAR_PART}
    manual = constrain(assemble_form(fine.mesh, FormKind.ELASTICITY, tensors=tensors), fine.mesh, {DIRICHLET})
    assert abs(fine.K - manual.matrix).max() <= 1e-12


def test_homogeneous_eigenvalues_match_the_macro_problem():
    fine = FineScaleProblem(UNIT_SQUARE, 0.25, 8, MATERIAL, EMPTY)
    chom = EffectiveTensor(MATERIAL.matrix_tensor.to_voigt())
    macro = macro_eigenpairs(build_macro_mesh(UNIT_SQUARE, 32), chom, 4)
    fine_values = fine.eigenvalues(4).as_array()
    assert np.allclose(fine_values, macro.values, rtol=1e-8)


def test_eigenvalues_decrease_under_refinement():
    coarse = FineScaleProblem(UNIT_SQUARE, 0.25, 8, MATERIAL, EMPTY).eigenpairs(4).values
    fine = FineScaleProblem(UNIT_SQUARE, 0.25, 16, MATERIAL, EMPTY).eigenpairs(4).values
    assert np.all(fine <= coarse * (1 + 1e-10))


def test_window_slicing_recovers_the_lowest_values(problem):
    reference = problem.eigenpairs(10).values
    j = next(i for i in range(4, 10) if reference[i] - reference[i - 1] > 1e-6 * reference[i])
    window = 0.5 * (reference[j - 1] + reference[j])
    spectrum, modes, coverage = problem.spectrum_in_window(window, k_slice=6)
    assert coverage.complete and coverage.covered_to == window
    assert np.allclose(spectrum.as_array(), reference[:j], rtol=1e-8)
    assert modes.shape == (problem.dof_map.n_full, j)
    fractions = [problem.inclusion_fraction(modes[:, i]) for i in range(j)]
    assert all(0.0 <= f <= 1.0 for f in fractions)


def test_small_slices_tile_the_window_without_gaps(problem):
    reference = problem.eigenpairs(24).values
    j = next(i for i in range(12, 24) if reference[i] - reference[i - 1] > 1e-6 * reference[i])
    window = 0.5 * (reference[j - 1] + reference[j])
    spectrum, modes, coverage = problem.spectrum_in_window(window, k_slice=3)
    assert coverage.complete
    assert coverage.slices >= j // 3
    assert np.allclose(spectrum.as_array(), reference[:j], rtol=1e-8)
    gram = modes.T @ (assemble_form(problem.mesh, FormKind.MASS).matrix @ modes)
    assert np.allclose(np.diag(gram), 1.0, atol=1e-6)
    assert np.linalg.matrix_rank(gram) == j, "Each kept mode is a distinct eigenvector"


def test_slice_budget_exhaustion_is_reported(problem):
    reference = problem.eigenpairs(12).values
    spectrum, _, coverage = problem.spectrum_in_window(2.0 * reference[-1], k_slice=3, max_slices=2)
    assert not coverage.complete
    assert coverage.slices == 2
    assert coverage.covered_to < 2.0 * reference[-1]
    assert np.all(spectrum.as_array() <= coverage.covered_to * (1 + 1e-12))


def test_hausdorff_distance():
    window = 3.0
    fine = SpectrumSet.fragment([1.0, 2.0], SpectrumLabel.FINE)
    limit = SpectrumSet.fragment([1.1, 2.0], SpectrumLabel.MACRO)
    assert abs(spectrum_hausdorff(fine, limit, window) - 0.1) < 1e-12
    assert spectrum_hausdorff(limit, limit, window) == 0.0
    # fine values next to the window end need no limit partner
    edge = SpectrumSet.fragment([1.0, 2.0, 2.95], SpectrumLabel.FINE)
    assert abs(spectrum_hausdorff(edge, limit, window) - 0.1) < 1e-12
    with pytest.raises(EmptyWindow):
        spectrum_hausdorff(SpectrumSet.fragment([4.0], SpectrumLabel.FINE), limit, window)


def test_point_evaluation_reproduces_quadratics():
    mesh = build_macro_mesh(UNIT_SQUARE, 4).elevate("P2")
    u = project_field(mesh, lambda x: np.column_stack([x[:, 0] ** 2, x[:, 0] * x[:, 1]]))
    points = np.random.default_rng(7).uniform(0.0, 1.0, (20, 2))
    values = evaluate_at_points(mesh, u, points)
    assert np.allclose(values, np.column_stack([points[:, 0] ** 2, points[:, 0] * points[:, 1]]))
    with pytest.raises(IncompatibleInputs):
        evaluate_at_points(mesh, u, np.array([[1.5, 0.5]]))


def test_distance_needs_a_solution(problem):
    with pytest.raises(IncompatibleInputs):
        two_scale_distance(EpsRun(0.25, problem.mesh), None)


def test_a_priori_and_gap_reports():
    runs = [EpsRun(0.25, None, load_norm=2.0, norms={"l2": 1.0, "eps_grad": 0.5}),
            EpsRun(0.125, None, load_norm=2.0, norms={"l2": 1.05, "eps_grad": 0.4})]
    report = a_priori_report(runs)
    assert report["constant"] == 0.5
    assert report["passed"]
    runs.append(EpsRun(0.0625, None, load_norm=1.0, norms={"l2": 1.0}))
    assert not a_priori_report(runs)["passed"]

    gap = spectral_gap_report({0.25: 12.0, 0.125: 11.0}, 20.0)
    assert gap["bound"] == 10.0 and gap["passed"]
    assert [row["epsilon"] for row in gap["rows"]] == [0.25, 0.125]
    assert not spectral_gap_report({0.25: 9.0}, 20.0)["passed"]


def test_module_entry_points_match_the_problem(problem):
    spectrum = eps_eigenvalues(UNIT_SQUARE, 0.25, 8, MATERIAL, 3)
    assert spectrum.labels == (("fine",),) * 3
    assert np.allclose(spectrum.as_array(), problem.eigenvalues(3).as_array(), rtol=1e-8)
    run = solve_eps_resolvent(UNIT_SQUARE, 0.25, 8, MATERIAL, constant_force, 1.0)
    assert np.allclose(run.u, problem.solve_resolvent(constant_force, 1.0).u)
