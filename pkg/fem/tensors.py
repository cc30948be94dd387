"""Rank-4 elasticity tensors in two dimensions and the two-phase material.

Voigt convention used everywhere: strains are packed as ``[e11, e22, 2*e12]``
(engineering shear) and stresses as ``[s11, s22, s12]``, so the 3x3 Voigt matrix
of a tensor holds its components directly: ``V[2, 2] = C_1212``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from errors import InvalidValue, PhaseFieldMissing
from geometry.mesh import Phase

logger = logging.getLogger(__name__)

VOIGT_PAIRS = ((0, 0), (1, 1), (0, 1))
VOIGT_LABELS = ("11", "22", "12")
SHEAR_WEIGHTS = np.array([1.0, 1.0, 2.0])
MANDEL_SCALE = np.array([1.0, 1.0, np.sqrt(2.0)])
SYMMETRY_TOL = 1e-14


def unit_strain(rs: str) -> np.ndarray:
    """Symmetrised e_r (x) e_s as a 2x2 matrix; ``"21"`` is the same strain as ``"12"``."""
    if rs not in {"11", "22", "12", "21"}:
        raise ValueError(f"Unknown index pair {rs!r}")
    r, s = int(rs[0]) - 1, int(rs[1]) - 1
    eta = np.zeros((2, 2))
    eta[r, s] += 0.5
    eta[s, r] += 0.5
    return eta


@dataclass(frozen=True, eq=False)
class ElasticityTensor4:
    entries: np.ndarray

    def __post_init__(self):
        c = np.array(self.entries, dtype=float)
        if c.shape != (2, 2, 2, 2):
            raise ValueError(f"Elasticity tensor must be 2x2x2x2, got {c.shape}")
        scale = max(1.0, float(np.abs(c).max()))
        minor = max(np.abs(c - c.transpose(1, 0, 2, 3)).max(), np.abs(c - c.transpose(0, 1, 3, 2)).max())
        major = np.abs(c - c.transpose(2, 3, 0, 1)).max()
        if max(minor, major) > SYMMETRY_TOL * scale:
            raise ValueError(f"Tensor lacks minor/major symmetry (defect {max(minor, major):.3e})")
        c.setflags(write=False)
        object.__setattr__(self, "entries", c)

    # ---- construction ---- #
    @classmethod
    def isotropic(cls, lam: float, mu: float) -> "ElasticityTensor4":
        d = np.eye(2)
        c = (lam * np.einsum("ij,pq->ijpq", d, d)
             + mu * (np.einsum("ip,jq->ijpq", d, d) + np.einsum("iq,jp->ijpq", d, d)))
        return cls(c)

    @classmethod
    def from_voigt(cls, voigt: np.ndarray) -> "ElasticityTensor4":
        v = np.asarray(voigt, dtype=float)
        if v.shape != (3, 3):
            raise ValueError(f"Voigt matrix must be 3x3, got {v.shape}")
        c = np.zeros((2, 2, 2, 2))
        for I, (i, j) in enumerate(VOIGT_PAIRS):
            for J, (p, q) in enumerate(VOIGT_PAIRS):
                for a, b in {(i, j), (j, i)}:
                    for m, n in {(p, q), (q, p)}:
                        c[a, b, m, n] = v[I, J]
        return cls(c)

    @classmethod
    def zero(cls) -> "ElasticityTensor4":
        return cls(np.zeros((2, 2, 2, 2)))

    # ---- views ---- #
    def to_voigt(self) -> np.ndarray:
        v = np.empty((3, 3))
        for I, (i, j) in enumerate(VOIGT_PAIRS):
            for J, (p, q) in enumerate(VOIGT_PAIRS):
                v[I, J] = self.entries[i, j, p, q]
        return v

    def mandel(self) -> np.ndarray:
        """Matrix whose eigenvalues are the extreme values of eta.C.eta over unit symmetric eta."""
        return MANDEL_SCALE[:, None] * self.to_voigt() * MANDEL_SCALE[None, :]

    def coercivity(self) -> float:
        return float(np.linalg.eigvalsh(self.mandel()).min())

    def energy(self, eta: np.ndarray) -> float:
        """eta : C : eta for a symmetric 2x2 strain."""
        return float(np.einsum("ij,ijpq,pq->", eta, self.entries, eta))

    # ---- arithmetic ---- #
    def __add__(self, other: "ElasticityTensor4") -> "ElasticityTensor4":
        return ElasticityTensor4(self.entries + other.entries)

    def __mul__(self, s: float) -> "ElasticityTensor4":
        return ElasticityTensor4(float(s) * self.entries)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"ElasticityTensor4(voigt={self.to_voigt().tolist()})"


BULK_PART = ElasticityTensor4.isotropic(1.0, 0.0)    # delta (x) delta
SHEAR_PART = ElasticityTensor4.isotropic(0.0, 1.0)   # C0: d_ip d_jq + d_iq d_jp


@dataclass(frozen=True)
class MaterialSpec:
    """Matrix tensor C2 and the weakly compressible inclusion.

    Inclusion tensor: ``inclusion_lambda * delta(x)delta + 2*inclusion_mu_scale*contrast*C0``
    with ``contrast = eps**2`` (or 1 when ``degenerate_scaling`` is off). The
    degenerate part drops the shear term altogether.
    """
    matrix_tensor: ElasticityTensor4 = field(default_factory=lambda: ElasticityTensor4.isotropic(1.0, 1.0))
    inclusion_lambda: float = 1.0
    inclusion_mu_scale: float = 0.5
    epsilon: Optional[float] = None
    degenerate_scaling: bool = True

    def __post_init__(self):
        if not self.inclusion_lambda > 0:
            raise InvalidValue(f"inclusion_lambda must be > 0, got {self.inclusion_lambda}")
        if not self.inclusion_mu_scale > 0:
            raise InvalidValue(f"inclusion_mu_scale must be > 0, got {self.inclusion_mu_scale}")
        if self.matrix_tensor.coercivity() <= 0:
            raise InvalidValue("matrix_tensor must be positive definite")
        if self.epsilon is not None and not 0 < self.epsilon <= 1:
            raise InvalidValue(f"epsilon must lie in (0, 1], got {self.epsilon}")

    @classmethod
    def isotropic(cls, lam: float = 1.0, mu: float = 1.0, **kwargs) -> "MaterialSpec":
        return cls(matrix_tensor=ElasticityTensor4.isotropic(lam, mu), **kwargs)

    def with_epsilon(self, epsilon: Optional[float]) -> "MaterialSpec":
        return MaterialSpec(self.matrix_tensor, self.inclusion_lambda, self.inclusion_mu_scale,
                            epsilon, self.degenerate_scaling)

    @property
    def micro_viscosity(self) -> float:
        return 2.0 * self.inclusion_mu_scale

    def degenerate_tensor(self, phase: Phase) -> ElasticityTensor4:
        """C1: C2 in the matrix, lambda * delta(x)delta in the inclusion."""
        if phase == Phase.MATRIX:
            return self.matrix_tensor
        return self.inclusion_lambda * BULK_PART

    def full_tensor(self, phase: Phase, epsilon: Optional[float] = None) -> ElasticityTensor4:
        """C1 + eps^2 C0."""
        if phase == Phase.MATRIX:
            return self.matrix_tensor
        eps = self.epsilon if epsilon is None else epsilon
        if eps is None:
            raise PhaseFieldMissing("Inclusion tensor needs a value of epsilon")
        contrast = eps ** 2 if self.degenerate_scaling else 1.0
        return self.degenerate_tensor(phase) + (2.0 * self.inclusion_mu_scale * contrast) * SHEAR_PART

    def arithmetic_mean(self, inclusion_fraction: float) -> ElasticityTensor4:
        """Integral of C1 over the unit cell."""
        return ((1.0 - inclusion_fraction) * self.matrix_tensor
                + inclusion_fraction * self.degenerate_tensor(Phase.INCLUSION))
