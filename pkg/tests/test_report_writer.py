import hashlib
import json

import numpy as np
import pytest

from errors import ReportIoError
from homogenization.two_scale import SpectrumLabel
from reporting.plots import spectra_figure
from reporting.report_writer import ReportWriter, _safe_json, format_cell, read_manifest, write_report


def sample_results():
    return {
        "summary.json": {"mu": np.array([1.5, 2.0]), "n": np.int64(3), "bad": float("nan"),
                         "label": SpectrumLabel.MICRO, "runtime": 0.25},
        "rows.csv": {"columns": ["epsilon", "value", "solve_time"],
                     "rows": [{"epsilon": 0.25, "value": 1.0 / 3.0, "solve_time": 1.5},
                              {"epsilon": 0.125, "value": None, "solve_time": 0.5}]},
        "spectra.svg": spectra_figure({0.25: [1.0, 2.0], 0.125: [1.1, 2.1]}, [1.2, 2.2], window=3.0),
    }


def test_safe_json_converts_numpy_and_non_finite_values():
    out = _safe_json(sample_results()["summary.json"])
    assert out == {"mu": [1.5, 2.0], "n": 3, "bad": None, "label": "micro", "runtime": 0.25}
    assert "runtime" not in _safe_json({"runtime": 1.0, "x": 1}, drop_timing=True)
    json.dumps(out, allow_nan=False)


def test_format_cell():
    assert format_cell(0.1) == "0.10000000000000001"
    assert format_cell(np.float64(2.5)) == "2.5"
    assert format_cell(True) == "true"
    assert format_cell(None) == ""
    assert format_cell(np.int32(7)) == "7"


def test_deterministic_reports_are_byte_identical(tmp_path):
    first = write_report(sample_results(), tmp_path / "a", deterministic=True)
    second = write_report(sample_results(), tmp_path / "b", deterministic=True)
    assert first.read_bytes() == second.read_bytes()
    for entry in read_manifest(tmp_path / "a"):
        data = (tmp_path / "a" / entry["file"]).read_bytes()
        assert data == (tmp_path / "b" / entry["file"]).read_bytes(), entry["file"]
        assert hashlib.sha256(data).hexdigest() == entry["sha256"]
        assert len(data) == entry["bytes"]


def test_deterministic_csv_drops_timing_columns(tmp_path):
    write_report(sample_results(), tmp_path, deterministic=True)
    lines = (tmp_path / "rows.csv").read_text().splitlines()
    assert lines == ["epsilon,value", "0.25,0.33333333333333331", "0.125,"]
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert "runtime" not in summary


def test_timed_manifest_keeps_timings(tmp_path):
    manifest = json.loads(write_report(sample_results(), tmp_path).read_text())
    assert "created" in manifest
    assert (tmp_path / "rows.csv").read_text().splitlines()[0] == "epsilon,value,solve_time"


def test_empty_result_has_an_empty_manifest(tmp_path):
    write_report({}, tmp_path, deterministic=True)
    assert read_manifest(tmp_path) == []


def test_unsupported_artifacts_are_rejected(tmp_path):
    with pytest.raises(ReportIoError):
        ReportWriter(tmp_path).write("matrix.npz", b"")
    with pytest.raises(ReportIoError):
        read_manifest(tmp_path / "missing")
