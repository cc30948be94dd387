import json

import pytest

from app import main
from commands.exit_codes import cli_handler
from errors import AcceptanceFailure, Stagnation
from reporting.report_writer import read_manifest


def test_help_lists_the_defaults(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--help"])
    assert info.value.code == 0
    assert "inclusion_mu_scale" in capsys.readouterr().out


def test_bad_config_exits_with_2(tmp_path):
    config = tmp_path / "run.ini"
    config.write_text("[solver]\ntol = -1\n")
    assert main(["--config", str(config), "--out", str(tmp_path), "cell-mesh"]) == 2
    assert main(["--config", str(tmp_path / "missing.ini"), "--out", str(tmp_path), "cell-mesh"]) == 2


def test_cell_mesh_writes_its_artifacts(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "--deterministic", "cell-mesh", "--resolution", "8"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["success"] and summary["resolution"] == 8
    files = {entry["file"] for entry in read_manifest(tmp_path / "cell-mesh")}
    assert files == {"cell_mesh.txt", "cell_mesh.json", "cell_mesh.svg"}


def test_eps_eigs_writes_a_table(tmp_path):
    assert main(["--out", str(tmp_path), "--deterministic", "eps-eigs", "--eps", "1/4", "--k", "3"]) == 0
    lines = (tmp_path / "eps-eigs" / "eps_eigs_1_4.csv").read_text().splitlines()
    assert lines[0] == "index,lambda,residual"
    assert len(lines) == 4


def test_non_tiling_epsilon_exits_with_2(tmp_path):
    assert main(["--out", str(tmp_path), "eps-solve", "--eps", "0.3"]) == 2


@pytest.mark.parametrize("error, code", [
    (Stagnation("no progress"), 3),
    (AcceptanceFailure("gate failed"), 4),
    (ValueError("bad input"), 2),
    (RuntimeError("boom"), 3),
])
def test_handler_failures_map_to_exit_codes(error, code):
    @cli_handler
    def handler():
        raise error

    assert handler() == code


def test_handler_success_codes():
    assert cli_handler(lambda: None)() == 0
    assert cli_handler(lambda: 4)() == 4


def test_stokes_eigs_takes_radius_and_resolution(tmp_path, capsys):
    assert main(["--out", str(tmp_path / "big"), "--deterministic", "stokes-eigs", "--res", "16",
                 "--radius", "0.25", "--k", "2", "--svg"]) == 0
    big = json.loads(capsys.readouterr().out)
    assert len(big["mu"]) == 2 and len(big["mean_norms"]) == 2
    files = {entry["file"] for entry in read_manifest(tmp_path / "big" / "stokes-eigs")}
    assert files == {"stokes_eigs.json", "stokes_eigs.csv", "stokes_mode_1.svg"}
    report = json.loads((tmp_path / "big" / "stokes-eigs" / "stokes_eigs.json").read_text())
    assert report["radius"] == 0.25 and report["resolution"] == 16

    assert main(["--out", str(tmp_path / "small"), "stokes-eigs", "--res", "32", "--radius", "0.125",
                 "--k", "1"]) == 0
    small = json.loads(capsys.readouterr().out)
    assert abs(small["mu"][0] / big["mu"][0] / 4.0 - 1.0) <= 0.01
    assert not (tmp_path / "small" / "stokes-eigs" / "stokes_mode_1.svg").exists()


def test_stokes_eigs_flag_errors(tmp_path):
    assert main(["--out", str(tmp_path), "stokes-eigs", "--radius", "-0.1"]) == 2
    with pytest.raises(SystemExit) as info:
        main(["--out", str(tmp_path), "stokes-eigs", "--resolution", "16"])
    assert info.value.code == 2
