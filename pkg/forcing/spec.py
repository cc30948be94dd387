"""Body forces f(x, y) = f0(x) + grad_y f1(x, y) + frot(x, y)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Tuple

import numpy as np

from forcing.expressions import Expr, parse_expression, parse_vector

MACRO_VARIABLES = ("x1", "x2")


def _env(x: np.ndarray, y: np.ndarray = None) -> Dict[str, np.ndarray]:
    x = np.atleast_2d(x)
    env = {"x1": x[:, 0], "x2": x[:, 1]}
    if y is not None:
        y = np.atleast_2d(y)
        env.update(y1=y[:, 0], y2=y[:, 1])
    return env


def _vector(pair: Tuple[Expr, Expr], env: Dict[str, np.ndarray], n: int) -> np.ndarray:
    return np.column_stack([np.broadcast_to(e.evaluate(env), (n,)) for e in pair])


@dataclass(frozen=True)
class ForcingSpec:
    """Parsed forcing; the source strings are kept so it serialises back unchanged."""
    f0_source: str = "(0, 0)"
    f1_source: str = "0"
    frot_source: str = "(0, 0)"
    f0: Tuple[Expr, Expr] = field(init=False, repr=False, compare=False)
    f1: Expr = field(init=False, repr=False, compare=False)
    frot: Tuple[Expr, Expr] = field(init=False, repr=False, compare=False)
    grad_f1: Tuple[Expr, Expr] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "f0", parse_vector(self.f0_source, MACRO_VARIABLES))
        f1 = parse_expression(self.f1_source)
        object.__setattr__(self, "f1", f1)
        object.__setattr__(self, "frot", parse_vector(self.frot_source))
        object.__setattr__(self, "grad_f1", (f1.derivative("y1"), f1.derivative("y2")))

    @classmethod
    def macroscopic(cls, fx: float, fy: float) -> "ForcingSpec":
        return cls(f0_source=f"({fx!r}, {fy!r})")

    # ---- classification ---- #
    @property
    def has_micro_part(self) -> bool:
        """True when the force depends on the fast variable at all."""
        micro = [*self.grad_f1, *self.frot]
        return any("y1" in e.variables() or "y2" in e.variables() or not e.is_zero() for e in micro)

    @property
    def is_irrotational(self) -> bool:
        return all(e.is_zero() for e in self.frot)

    # ---- evaluation ---- #
    def macro_part(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return _vector(self.f0, _env(x), len(x))

    def gradient_part(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x, y = np.atleast_2d(x), np.atleast_2d(y)
        return _vector(self.grad_f1, _env(x, y), len(x))

    def rotational_part(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x, y = np.atleast_2d(x), np.atleast_2d(y)
        return _vector(self.frot, _env(x, y), len(x))

    def micro_part(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """grad_y f1 + frot at matching rows of x and y."""
        return self.gradient_part(x, y) + self.rotational_part(x, y)

    def evaluate(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.macro_part(x) + self.micro_part(x, y)

    def eps_sampler(self, eps: float) -> Callable[[np.ndarray], np.ndarray]:
        """x -> f(x, {x/eps}) for the fine-scale problem."""
        def sample(x: np.ndarray) -> np.ndarray:
            x = np.atleast_2d(x)
            scaled = x / eps
            return self.evaluate(x, scaled - np.floor(scaled))
        return sample

    def to_dict(self) -> Dict[str, str]:
        return {"f0": self.f0_source, "f1": self.f1_source, "frot": self.frot_source}

