import math

import pytest

import experiments.sweep as sweep_module
from config.run_config import parse_config_text
from experiments.sweep import EpsilonSweep, convergence_checks, sweep_epsilon

SMALL = """
[geometry]
cell_res = 16

[solver]
inner_solver = direct

[experiment]
epsilon = [1/4, 1/8]
macro_res = 4
k = 4
"""


def row(eps, error, distance):
    return {"epsilon": eps, "success": True, "l2_macro_error": error, "hausdorff": distance}


def test_convergence_checks_on_decreasing_errors():
    checks = convergence_checks([row(0.125, 0.2, 1.0), row(0.25, 0.5, 3.0), row(0.0625, 0.1, 1.0)])
    assert checks["macro_error_decreasing"] and checks["macro_error_passed"]
    assert checks["macro_error_ratio"] == pytest.approx(0.2)
    assert checks["hausdorff_decreasing"], "Equal distances count as non-increasing"
    assert checks["hausdorff_passed"]


def test_convergence_checks_flag_growth():
    checks = convergence_checks([row(0.25, 0.5, 1.0), row(0.125, 0.6, 0.9)])
    assert not checks["macro_error_decreasing"]
    assert not checks["hausdorff_passed"], "A ratio of 0.9 is above the required halving"
    assert convergence_checks([row(0.25, 0.5, 1.0)])["macro_error_decreasing"] is None


def test_failed_entry_becomes_a_flagged_row(monkeypatch):
    sweep = EpsilonSweep(parse_config_text(SMALL), progress=False)

    def broken(*args, **kwargs):
        raise RuntimeError("fine assembly failed")

    monkeypatch.setattr(sweep_module, "FineScaleProblem", broken)
    outcome = sweep.run_one(0.25, None, None, 10.0)
    assert outcome["row"] == {"epsilon": 0.25, "success": False, "error": "fine assembly failed"}
    assert outcome["run"] is None


@pytest.mark.slow
def test_small_sweep_runs_every_epsilon():
    result = sweep_epsilon(parse_config_text(SMALL), progress=False)
    assert [r["epsilon"] for r in result.rows] == [0.25, 0.125]
    assert all(r["success"] for r in result.rows), result.rows
    assert result.window > result.limit.micro.values[1]
    for r in result.rows:
        assert r["n_fine"] > 0
        assert math.isfinite(r["hausdorff"]) and r["hausdorff"] >= 0
        assert r["l2_macro_error"] >= 0
    assert set(result.reports) == {"a_priori", "spectral_gap", "concentration", "convergence"}
    assert result.reports["concentration"]["epsilon"] == 0.125
    assert set(result.to_dict()) >= {"config", "window", "rows", "reports"}


def test_incomplete_window_fails_the_spectral_gate():
    rows = [row(0.25, 0.5, 3.0), row(0.125, 0.2, 1.0)]
    assert convergence_checks(rows)["hausdorff_passed"]
    rows[1]["window_complete"] = False
    checks = convergence_checks(rows)
    assert not checks["windows_complete"]
    assert not checks["hausdorff_passed"]
