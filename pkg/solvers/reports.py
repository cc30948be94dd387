"""Result records returned by the linear and eigenvalue solvers."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np


@dataclass
class SolveReport:
    iterations: int
    final_residual: float
    converged: bool
    range_defect: float = 0.0
    history: List[float] = field(default_factory=list)
    energy_history: List[float] = field(default_factory=list)

    def history_rows(self) -> List[Tuple[int, float]]:
        """``(iter, residual)`` rows for CSV dumps."""
        return list(enumerate(self.history))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "iterations": int(self.iterations),
            "final_residual": float(self.final_residual),
            "converged": bool(self.converged),
            "range_defect": float(self.range_defect),
        }


@dataclass
class EigReport:
    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    filtered_count: int = 0
    shift: float = 0.0
    pressures: Optional[np.ndarray] = None
    divergence_norms: Optional[np.ndarray] = None

    @property
    def k(self) -> int:
        return len(self.values)

    def to_dict(self) -> Dict[str, Any]:
        out = {
            "values": [float(v) for v in self.values],
            "residuals": [float(r) for r in self.residuals],
            "filtered_count": int(self.filtered_count),
            "shift": float(self.shift),
        }
        if self.divergence_norms is not None:
            out["divergence_norms"] = [float(d) for d in self.divergence_norms]
        return out
