"""State shared by every subcommand: the parsed config, the output directory and run flags."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from config.run_config import RunConfig
from config.settings import Settings
from errors import InvalidValue
from fem.tensors import MaterialSpec
from geometry.mesh import PeriodicMesh, build_cell_mesh, build_macro_mesh
from reporting.report_writer import ReportWriter, _safe_json, write_report

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CommandContext:
    config: RunConfig
    settings: Settings
    out: Path

    @property
    def deterministic(self) -> bool:
        return self.config.solver.deterministic

    @property
    def workers(self) -> int:
        return 1 if self.deterministic else self.config.solver.workers

    @property
    def material(self) -> MaterialSpec:
        return self.config.material.material_spec()

    def cell_mesh(self, resolution: Optional[int] = None) -> PeriodicMesh:
        return build_cell_mesh(self.config.geometry.cell_geometry(resolution))

    def macro_mesh(self) -> PeriodicMesh:
        return build_macro_mesh(self.config.geometry.rectangle, self.config.experiment.macro_res)

    def with_solver(self, **changes) -> "CommandContext":
        return replace(self, config=replace(self.config, solver=replace(self.config.solver, **changes)))

    def writer(self, name: str) -> ReportWriter:
        return ReportWriter(self.out / name, self.deterministic)

    def write(self, name: str, artifacts: Mapping[str, Any]) -> Path:
        return write_report(artifacts, self.out / name, self.deterministic)


def parse_epsilon(text: str) -> float:
    """``1/8`` or ``0.125``; only reciprocals of integers tile the domain."""
    try:
        value = Fraction(text.strip()).limit_denominator(10 ** 6)
    except (ValueError, ZeroDivisionError) as e:
        raise InvalidValue(f"Cannot read epsilon {text!r}") from e
    if value.numerator != 1 or value.denominator < 1:
        raise InvalidValue(f"epsilon {text!r} is not the reciprocal of an integer")
    return 1.0 / value.denominator


def epsilon_tag(eps: float) -> str:
    return f"1_{int(round(1.0 / eps))}"


def emit(payload: Dict[str, Any]) -> None:
    """Print a command summary the way the handlers report success."""
    print(json.dumps(_safe_json({"success": True, **payload}), indent=2))
