import numpy as np
import pytest
from scipy.special import jn_zeros

from geometry.mesh import CellGeometry, build_cell_mesh
from homogenization.micro_stokes import MicroStokesSolver, disk_inclusion_mesh, inclusion_mesh

POTENTIAL = "sin(2*pi*y1)*cos(2*pi*y2)"


@pytest.fixture(scope="module")
def stokes():
    return MicroStokesSolver(disk_inclusion_mesh(0.25, 16), viscosity=1.0, method="direct", inner_solver="direct")


def test_constant_forces_are_absorbed_by_the_pressure(stokes):
    result = stokes.irrotational_collapse_check((1.0, 0.0), None)
    assert result["passed"], result
    assert result["v_norm"] <= 1e-9


def test_sampled_gradient_forces_leave_a_velocity_that_refines_away():
    norms = [MicroStokesSolver(disk_inclusion_mesh(0.25, res), method="direct")
             .irrotational_collapse_check((1.0, 0.0), POTENTIAL)["v_norm"] for res in (16, 32)]
    assert 0.0 < norms[1] < norms[0], norms
    assert norms[1] <= 1e-5
    with pytest.raises(ValueError):
        MicroStokesSolver(disk_inclusion_mesh(0.25, 16), method="gmres")


@pytest.mark.slow
def test_sampled_gradient_forces_collapse_at_resolution_64():
    result = MicroStokesSolver(disk_inclusion_mesh(0.25, 64), method="direct").irrotational_collapse_check(
        (1.0, 0.0), POTENTIAL)
    assert result["passed"], result


def test_resolvent_is_divergence_free_with_zero_mean_pressure(stokes):
    force = lambda y: np.column_stack([0.5 - y[:, 1], y[:, 0] - 0.5])  # noqa: E731
    field_ = stokes.solve_micro_resolvent(force, alpha=1.0)
    reduced = stokes.dof_map.restrict(field_.velocity)
    assert np.linalg.norm(stokes.B_full @ field_.velocity) <= 1e-9 * np.linalg.norm(field_.velocity)
    assert abs(stokes.pressure_weights @ field_.pressure) <= 1e-10
    assert stokes.l2_norm(field_.velocity) > 1e-5, "A rotational force must drive a flow"
    assert np.abs(field_.cell_mean).max() <= 1e-12, "Divergence-free fields vanishing on the interface have zero mean"
    assert reduced.shape[0] == stokes.A.shape[0]
    with pytest.raises(ValueError):
        stokes.solve_micro_resolvent(None, alpha=-1.0)


def test_minres_and_direct_agree():
    mesh = disk_inclusion_mesh(0.25, 8)
    force = lambda y: np.column_stack([0.5 - y[:, 1], y[:, 0] - 0.5])  # noqa: E731
    direct = MicroStokesSolver(mesh, method="direct").solve_micro_resolvent(force, alpha=2.0)
    iterative = MicroStokesSolver(mesh, method="minres", tol=1e-10).solve_micro_resolvent(force, alpha=2.0)
    assert np.allclose(direct.velocity, iterative.velocity, atol=1e-7)
    assert np.allclose(direct.cell_mean, iterative.cell_mean, atol=1e-8)


def test_disk_eigenvalues_follow_bessel_zeros(stokes):
    spectrum = stokes.stokes_eigenpairs(3)
    exact = np.array([jn_zeros(1, 1)[0], jn_zeros(2, 1)[0]]) ** 2 / 0.25 ** 2
    relative = np.abs(spectrum.values[:2] - exact) / exact
    assert np.all(relative <= 0.05), f"relative errors {relative}"
    assert np.max(spectrum.report.divergence_norms) <= 1e-8
    assert np.all(np.diff(spectrum.values) >= 0)


def test_eigenvalues_scale_with_inverse_radius_squared(stokes):
    small = MicroStokesSolver(inclusion_mesh(build_cell_mesh(CellGeometry(size=0.125, resolution=32))),
                              method="direct", inner_solver="direct")
    ratio = small.stokes_eigenpairs(1).values[0] / stokes.stokes_eigenpairs(1).values[0]
    assert abs(ratio / 4.0 - 1.0) <= 0.01, f"ratio {ratio}"


def test_viscosity_scales_the_spectrum(stokes):
    thick = MicroStokesSolver(disk_inclusion_mesh(0.25, 16), viscosity=2.0, method="direct", inner_solver="direct")
    assert np.allclose(thick.stokes_eigenpairs(2).values, 2.0 * stokes.stokes_eigenpairs(2).values, rtol=1e-7)
