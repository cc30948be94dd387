"""Result persistence: JSON, CSV and SVG artifacts plus a hashed manifest.

Artifacts are picked by file suffix: ``.json`` takes any JSON-able value,
``.csv`` takes ``{"columns": [...], "rows": [...]}`` (or a plain list of row
dicts), ``.svg`` takes a matplotlib ``Figure`` and ``.txt`` takes a string.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from collections.abc import Mapping
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Union

import matplotlib
import numpy as np
from matplotlib.figure import Figure

from errors import ReportIoError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
TIMING_KEYS = frozenset({"runtime", "solve_time", "spectrum_time", "elapsed", "created"})
SVG_HASH_SALT = "homogenization-lab"


def _safe_json(value: Any, drop_timing: bool = False) -> Any:
    """Recursively convert numpy values, enums, paths and result records to JSON-safe values."""
    if hasattr(value, "to_dict") and callable(value.to_dict):
        return _safe_json(value.to_dict(), drop_timing)
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, datetime):
        return value.isoformat()
    if isinstance(value, np.ndarray):
        return [_safe_json(v, drop_timing) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, (list, tuple)):
        return [_safe_json(v, drop_timing) for v in value]
    if isinstance(value, Mapping):
        return {str(k): _safe_json(v, drop_timing) for k, v in value.items()
                if not (drop_timing and str(k) in TIMING_KEYS)}
    if value is None or isinstance(value, str):
        return value
    return str(value)


def format_cell(value: Any) -> str:
    """CSV cell text: floats with 17 significant digits and a '.' separator."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (np.integer, int)):
        return str(int(value))
    if isinstance(value, (np.floating, float)):
        return "%.17g" % float(value)
    return str(value)


def csv_text(columns: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_cell(row.get(c)) for c in columns])
    return buffer.getvalue()


class ReportWriter:
    """Writes artifacts into one directory and records their hashes."""

    def __init__(self, outdir: Union[str, Path], deterministic: bool = False):
        self.outdir = Path(outdir)
        self.deterministic = deterministic
        self.artifacts: Dict[str, Dict[str, Any]] = {}
        try:
            self.outdir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ReportIoError(f"Cannot create {self.outdir}: {e}") from e

    # ---- Public API ---- #
    def write(self, name: str, content: Any) -> Path:
        suffix = Path(name).suffix
        if suffix == ".json":
            return self.write_json(name, content)
        if suffix == ".csv":
            if isinstance(content, Mapping):
                return self.write_csv(name, content["columns"], content["rows"])
            rows = list(content)
            columns = list(rows[0]) if rows else []
            return self.write_csv(name, columns, rows)
        if suffix == ".svg":
            return self.write_svg(name, content)
        if suffix == ".txt":
            return self.write_bytes(name, str(content).encode("utf-8"))
        raise ReportIoError(f"Unsupported artifact type {name!r}")

    def write_json(self, name: str, value: Any) -> Path:
        text = json.dumps(_safe_json(value, self.deterministic), indent=2, allow_nan=False)
        return self.write_bytes(name, (text + "\n").encode("utf-8"))

    def write_csv(self, name: str, columns: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> Path:
        if self.deterministic:
            columns = [c for c in columns if c not in TIMING_KEYS]
        return self.write_bytes(name, csv_text(columns, rows).encode("utf-8"))

    def write_svg(self, name: str, figure: Figure) -> Path:
        buffer = io.BytesIO()
        with matplotlib.rc_context({"svg.hashsalt": SVG_HASH_SALT, "svg.fonttype": "none"}):
            figure.savefig(buffer, format="svg", metadata={"Date": None})
        return self.write_bytes(name, buffer.getvalue())

    def write_bytes(self, name: str, data: bytes) -> Path:
        path = self.outdir / name
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(data)
        except OSError as e:
            raise ReportIoError(f"Cannot write {path}: {e}") from e
        self.artifacts[name] = {"file": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)}
        logger.debug("wrote %s (%d bytes)", path, len(data))
        return path

    def record(self, path: Union[str, Path]) -> None:
        """Hash a file some other writer placed in the output directory."""
        path = Path(path)
        try:
            data = path.read_bytes()
        except OSError as e:
            raise ReportIoError(f"Cannot read {path}: {e}") from e
        name = path.relative_to(self.outdir).as_posix()
        self.artifacts[name] = {"file": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)}

    def finish(self) -> Path:
        manifest: Dict[str, Any] = {
            "artifacts": [self.artifacts[name] for name in sorted(self.artifacts)],
            "deterministic": self.deterministic,
        }
        if not self.deterministic:
            manifest["created"] = datetime.now().isoformat()
        text = json.dumps(manifest, indent=2) + "\n"
        path = self.outdir / MANIFEST_NAME
        try:
            path.write_text(text, encoding="utf-8")
        except OSError as e:
            raise ReportIoError(f"Cannot write {path}: {e}") from e
        logger.info("report: %d artifacts in %s", len(self.artifacts), self.outdir)
        return path


def write_report(results: Mapping[str, Any], outdir: Union[str, Path], deterministic: bool = False) -> Path:
    """Write every artifact of ``results`` (file name -> content) and return the manifest path."""
    writer = ReportWriter(outdir, deterministic)
    for name in sorted(results):
        writer.write(name, results[name])
    return writer.finish()


def read_manifest(outdir: Union[str, Path]) -> List[Dict[str, Any]]:
    path = Path(outdir) / MANIFEST_NAME
    try:
        return json.loads(path.read_text(encoding="utf-8"))["artifacts"]
    except (OSError, ValueError, KeyError) as e:
        raise ReportIoError(f"Cannot read manifest {path}: {e}") from e
