import pytest

import experiments.invariants as invariants
from config import settings
from config.run_config import RunConfig, parse_config, parse_config_text
from experiments.invariants import (
    COLLAPSE_RESOLUTION, check_homogeneous_tensor, check_irrotational_collapse, check_solver_oracles,
    check_stokes_spectrum, run_invariant_suite,
)


def test_solver_oracles_pass():
    results = check_solver_oracles()
    assert [r.name for r in results] == ["cg_dense_oracle", "minres_dense_oracle", "eigen_dense_oracle",
                                         "deterministic_rerun"]
    assert all(r.passed for r in results), [r.to_dict() for r in results]


def test_homogeneous_tensor_check():
    result = check_homogeneous_tensor(RunConfig())
    assert result.passed, result.to_dict()
    assert result.value <= 1e-9


def test_raising_check_becomes_a_failure(monkeypatch):
    def broken(config):
        raise RuntimeError("assembly exploded")

    monkeypatch.setattr(invariants, "SUITE", {"broken": broken, "homogeneous_chom": check_homogeneous_tensor})
    results = run_invariant_suite(RunConfig())
    assert [r.name for r in results] == ["broken", "homogeneous_chom"]
    assert not results[0].passed and results[0].details == {"error": "assembly exploded"}
    assert results[1].passed


@pytest.mark.slow
def test_default_configuration_passes_every_invariant(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "ORACLE_PATH", str(tmp_path / "oracles.json"))
    results = run_invariant_suite(parse_config())
    failed = [r.to_dict() for r in results if not r.passed]
    assert not failed, failed


def test_micro_checks_are_skipped_without_an_inclusion():
    config = parse_config_text("[geometry]\nsize = 0\n")
    collapse = check_irrotational_collapse(config)
    stokes = check_stokes_spectrum(config)
    assert collapse.passed and collapse.details == {"skipped": "no inclusion"}
    assert [r.name for r in stokes] == ["stokes_spectrum"] and stokes[0].passed
    assert check_homogeneous_tensor(config).passed


@pytest.mark.slow
def test_collapse_gate_uses_the_sampled_gradient_at_resolution_64():
    result = check_irrotational_collapse(RunConfig())
    assert result.details["resolution"] == COLLAPSE_RESOLUTION
    assert set(result.details["v_norms"]) == {"32", "64"}
    assert result.details["decreasing"]
    assert 0.0 < result.value <= result.tol
    assert result.passed, result.to_dict()
