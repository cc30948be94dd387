import json

import numpy as np
import pytest
from scipy.special import jn_zeros

import experiments.oracles as oracles_module
from config.run_config import parse_config_text
from errors import ReportIoError
from experiments.invariants import _micro, check_stokes_spectrum
from experiments.oracles import (
    ORACLE_AGREEMENT, cell_key, ensure_oracles, load_oracles, oracle_defects, richardson, write_oracles,
)

SMALL = parse_config_text("[geometry]\ncell_res = 16\n\n[solver]\ninner_solver = direct\n")


def test_richardson_removes_the_second_order_term():
    exact, a = 3.0, 0.7
    assert richardson(exact + 4 * a, exact + a) == pytest.approx(exact, abs=1e-14)
    assert np.allclose(richardson([1.0, 2.0], [1.0, 2.0]), [1.0, 2.0])


def test_defects_are_relative_to_the_reference():
    reference = {"mu1": 100.0, "mu2": 200.0}
    assert np.allclose(oracle_defects([100.5, 201.0, 999.0], reference), [0.005, 0.005])
    assert np.all(oracle_defects([100.5, 201.0], reference) <= ORACLE_AGREEMENT)
    assert not np.all(oracle_defects([102.0, 200.0], reference) <= ORACLE_AGREEMENT)


def test_reference_values_are_built_once_then_reused(tmp_path, monkeypatch):
    path = tmp_path / "reference" / "oracles.json"
    built = ensure_oracles(SMALL, path, resolutions=(16, 32, 64))
    assert path.exists()
    assert built["cell"] == cell_key(SMALL)
    assert "chom" not in built
    exact = np.array([jn_zeros(1, 1)[0], jn_zeros(2, 1)[0]]) ** 2 / 0.25 ** 2
    assert np.all(np.abs(np.array([built["mu1"], built["mu2"]]) - exact) / exact <= 0.05)

    def no_rebuild(*args, **kwargs):
        raise AssertionError("stored values should have been reused")

    monkeypatch.setattr(oracles_module, "build_oracles", no_rebuild)
    assert ensure_oracles(SMALL, path) == load_oracles(path)


def test_reference_values_for_another_cell_are_rebuilt(tmp_path, monkeypatch):
    path = tmp_path / "oracles.json"
    other = parse_config_text("[geometry]\nsize = 0.2\n")
    write_oracles({"cell": cell_key(other), "mu1": 1.0, "mu2": 2.0}, path)
    calls = []

    def fake_build(config, resolutions, with_chom=True):
        calls.append(list(resolutions))
        return {"cell": cell_key(config), "mu1": 3.0, "mu2": 4.0}

    monkeypatch.setattr(oracles_module, "build_oracles", fake_build)
    oracles = ensure_oracles(SMALL, path, resolutions=(16, 32, 64))
    assert calls == [[16, 32, 64]]
    assert oracles["mu1"] == 3.0
    assert load_oracles(path)["cell"] == cell_key(SMALL)


def test_unreadable_reference_file(tmp_path):
    path = tmp_path / "oracles.json"
    assert load_oracles(path) is None
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ReportIoError):
        load_oracles(path)
    path.write_text(json.dumps({"mu1": 1.0}), encoding="utf-8")
    with pytest.raises(ReportIoError):
        load_oracles(path)


@pytest.mark.parametrize("scale, passed", [(1.005, True), (1.05, False)])
def test_stokes_check_gates_on_the_reference_values(tmp_path, scale, passed):
    computed = _micro(SMALL).stokes_eigenpairs(3).values
    path = write_oracles({"cell": cell_key(SMALL), "mu1": computed[0] * scale, "mu2": computed[1] * scale},
                         tmp_path / "oracles.json")
    results = {r.name: r for r in check_stokes_spectrum(SMALL, str(path))}
    reference = results["stokes_reference"]
    assert reference.passed is passed, reference.to_dict()
    assert reference.tol == ORACLE_AGREEMENT
    assert reference.value == pytest.approx(1.0 - 1.0 / scale, abs=1e-6)
