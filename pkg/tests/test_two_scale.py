import numpy as np
import pytest

from fem.tensors import MaterialSpec
from forcing.spec import ForcingSpec
from geometry.mesh import UNIT_SQUARE, CellGeometry, build_cell_mesh, build_macro_mesh
from homogenization.cell_problem import EffectiveTensor
from homogenization.two_scale import LimitProblemSolver, SpectrumLabel, SpectrumSet, macro_eigenpairs

ROTATIONAL = ForcingSpec("(1, 0)", "0", "(0.5 - y2, y1 - 0.5)")


def test_merge_joins_values_across_labels_only():
    macro = SpectrumSet.fragment([1.0, 2.0, 2.0], SpectrumLabel.MACRO)
    micro = SpectrumSet.fragment([2.0 + 1e-12, 3.0], SpectrumLabel.MICRO)
    merged = SpectrumSet.merge([macro, micro])
    assert merged.values == (1.0, 2.0, 2.0, 3.0)
    assert merged.labels == (("macro",), ("macro",), ("macro", "micro"), ("micro",))
    assert merged.count(SpectrumLabel.MACRO) == 3
    assert SpectrumSet.merge([macro, micro], window=2.5).values == (1.0, 2.0, 2.0)


def test_fragment_sorts_and_truncates():
    spectrum = SpectrumSet.fragment([3.0, 1.0, 5.0], SpectrumLabel.FINE, window=4.0)
    assert spectrum.values == (1.0, 3.0)
    assert spectrum.rows() == [(1.0, "fine"), (3.0, "fine")]
    with pytest.raises(ValueError):
        SpectrumSet((2.0, 1.0), (("fine",), ("fine",)))


def test_macro_eigenpairs_are_mass_orthonormal():
    chom = EffectiveTensor(np.array([[3.0, 1.0, 0.0], [1.0, 3.0, 0.0], [0.0, 0.0, 1.0]]))
    spectrum = macro_eigenpairs(build_macro_mesh(UNIT_SQUARE, 4), chom, 4)
    assert np.all(spectrum.values > 0)
    assert np.all(np.diff(spectrum.values) >= 0)
    assert spectrum.fields.shape[1] == 4


@pytest.fixture(scope="module")
def limit_solver():
    return LimitProblemSolver(build_macro_mesh(UNIT_SQUARE, 4), build_cell_mesh(CellGeometry(resolution=16)),
                              MaterialSpec.isotropic(1.0, 1.0), tol=1e-12, inner_solver="direct")


def test_decoupled_resolvent_matches_the_monolithic_system(limit_solver):
    field_ = limit_solver.solve_limit_resolvent(ROTATIONAL, 1.0)
    u, velocities = limit_solver.monolithic_resolvent(ROTATIONAL, 1.0)
    assert np.abs(field_.u - u).max() <= 1e-7 * np.abs(u).max()
    micro = field_.micro_velocities()
    assert np.abs(micro - velocities).max() <= 1e-7 * np.abs(velocities).max()
    assert field_.micro_l2_norm() > 0
    assert field_.two_scale_norm_squared() >= field_.macro_l2_norm() ** 2


def test_limit_resolvent_needs_positive_alpha(limit_solver):
    with pytest.raises(ValueError):
        limit_solver.solve_limit_resolvent(ROTATIONAL, 0.0)


def test_macro_only_forcing_leaves_no_micro_flow(limit_solver):
    field_ = limit_solver.solve_limit_resolvent(ForcingSpec.macroscopic(1.0, 0.0), 1.0)
    assert field_.micro_l2_norm() <= 1e-10 * max(field_.macro_l2_norm(), 1.0)
    plain = limit_solver.solve_macro_dirichlet(ForcingSpec.macroscopic(1.0, 0.0), 1.0)
    assert np.allclose(field_.u, plain, atol=1e-9)


def test_limit_spectrum_unites_macro_and_micro(limit_solver):
    micro = limit_solver.micro_eigenpairs(3)
    window = 1.1 * float(micro.values[1])
    limit = limit_solver.limit_spectrum(window, k_start=4)
    values = limit.spectrum.as_array()
    assert np.all(values <= window)
    assert np.all(np.diff(values) >= 0)
    assert limit.spectrum.count(SpectrumLabel.MICRO) >= 2
    assert limit.spectrum.count(SpectrumLabel.MACRO) >= 1
    assert np.isclose(values, micro.values[0]).any()


def test_micro_fields_have_zero_cell_mean(limit_solver):
    assert np.abs(limit_solver.coupling_matrix(1.0)).max() <= 1e-12
    field_ = limit_solver.solve_limit_resolvent(ROTATIONAL, 1.0)
    micro = field_.micro_field(0)
    assert np.allclose(micro.velocity, field_.micro_velocities()[:, 0])
    assert np.abs(field_.cell_means()).max() <= 1e-12
