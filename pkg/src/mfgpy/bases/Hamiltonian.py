"""Quadratic Hamiltonian ½ pApᵀ and its bounded regularization pApᵀ / (2 + ε|pApᵀ|).

``h_eps`` and ``dh_eps_dp`` work on a single momentum; the ``*_field`` variants
evaluate the same formulas on every grid point at once.
"""

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from mfgpy.bases.Grid import MatrixField, VectorField
from mfgpy.common.errors import ValidationError


@dataclass(frozen=True)
class EpsSchedule:
    eps0: float = 1.0
    factor: float = 0.25
    eps_min: float = 0.0
    eps_floor: float = 1e-8

    def __post_init__(self):
        if not self.eps0 > 0:
            raise ValidationError(f"eps0 must be positive, got {self.eps0}")
        if not 0 < self.factor < 1:
            raise ValidationError(f"factor must lie in (0,1), got {self.factor}")
        if self.eps_min < 0:
            raise ValidationError(f"eps_min must be nonnegative, got {self.eps_min}")
        if not self.eps_floor > 0:
            raise ValidationError(f"eps_floor must be positive, got {self.eps_floor}")

    def __iter__(self) -> Iterator[float]:
        stop = self.eps_min if self.eps_min > 0 else self.eps_floor
        eps = self.eps0
        while True:
            yield eps
            if eps <= stop:
                break
            eps *= self.factor
        if self.eps_min == 0:
            yield 0.0

    def stages(self) -> tuple[float, ...]:
        return tuple(self)


def _quadratic(p: np.ndarray, A_x: np.ndarray) -> float:
    return float(np.abs(p @ A_x @ p))


def h_eps(p: np.ndarray, A_x: np.ndarray, eps: float) -> float:
    p = np.atleast_1d(np.asarray(p, dtype=float))
    A_x = np.atleast_2d(np.asarray(A_x, dtype=float))
    q = _quadratic(p, A_x)
    if eps == 0:
        return 0.5 * q
    return q / (2.0 + eps * q)


def dh_eps_dp(p: np.ndarray, A_x: np.ndarray, eps: float) -> np.ndarray:
    p = np.atleast_1d(np.asarray(p, dtype=float))
    A_x = np.atleast_2d(np.asarray(A_x, dtype=float))
    q = _quadratic(p, A_x)
    return 4.0 / (2.0 + eps * q) ** 2 * (A_x @ p)


def h_eps_field(Du: VectorField, A: MatrixField, eps: float) -> np.ndarray:
    q = np.abs(A.quadratic_form(Du.values))
    if eps == 0:
        return 0.5 * q
    return q / (2.0 + eps * q)


def dh_eps_dp_field(Du: VectorField, A: MatrixField, eps: float) -> np.ndarray:
    q = np.abs(A.quadratic_form(Du.values))
    return 4.0 / (2.0 + eps * q) ** 2 * A.apply(Du.values)
