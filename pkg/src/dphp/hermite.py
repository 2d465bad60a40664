"""Hermite-polynomial eigenfunction features of the 1-D Gaussian kernel.

The Mehler expansion writes

    exp(-rho / (1 - rho**2) * (x - y)**2) = sum_c lambda_c f_c(x) f_c(y)

with eigenvalues ``lambda_c = (1 - rho) * rho**c``.  The feature for order
``c`` is ``phi_c = sqrt(lambda_c) * f_c``.  Raw Hermite polynomials overflow
quickly, so ``phi_c`` is built with a three-term recursion directly on the
scaled values.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDataError

logger = logging.getLogger(__name__)

RHO_MIN = 1e-6
RHO_MAX = 1.0 - 1e-6


@dataclass(frozen=True)
class HermiteBasis:
    """A truncated Mehler expansion: decay ``rho`` and order ``C``.

    The feature vector has ``order + 1`` entries.
    """

    rho: float
    order: int

    def __post_init__(self):
        if not (0.0 < self.rho < 1.0) or not math.isfinite(self.rho):
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if int(self.order) != self.order or self.order < 0:
            raise ValueError(f"order must be a non-negative integer, got {self.order}")
        object.__setattr__(self, "rho", float(self.rho))
        object.__setattr__(self, "order", int(self.order))

    @property
    def size(self) -> int:
        return self.order + 1

    @property
    def length_scale(self) -> float:
        return length_scale_from_rho(self.rho)

    @classmethod
    def from_length_scale(cls, length_scale: float, order: int) -> "HermiteBasis":
        return cls(clamp_rho(rho_from_length_scale(length_scale)), order)


def rho_from_length_scale(length_scale: float) -> float:
    """Solve ``rho / (1 - rho**2) = 1 / (2 l**2)`` for ``rho`` in (0, 1)."""
    l = float(length_scale)
    if not math.isfinite(l) or l <= 0:
        raise ValueError(f"length scale must be positive and finite, got {length_scale}")
    a = 1.0 / (2.0 * l * l)
    # a*rho^2 + rho - a = 0; the rationalized root avoids cancellation for small a.
    return 2.0 * a / (1.0 + math.sqrt(1.0 + 4.0 * a * a))


def length_scale_from_rho(rho: float) -> float:
    if not (0.0 < rho < 1.0):
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    return math.sqrt((1.0 - rho * rho) / (2.0 * rho))


def clamp_rho(rho: float) -> float:
    """Clamp ``rho`` into ``[1e-6, 1 - 1e-6]``, warning when it moves."""
    clamped = min(max(rho, RHO_MIN), RHO_MAX)
    if clamped != rho:
        logger.warning("rho=%g clamped to %g", rho, clamped)
    return clamped


def eigenvalue(c: int, rho: float) -> float:
    return (1.0 - rho) * rho**c


def _check_finite(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise ValueError("hp_features requires finite inputs")


def hp_features(x, basis: HermiteBasis) -> np.ndarray:
    """Scaled Hermite features ``[phi_0(x), ..., phi_C(x)]``.

    ``x`` may be a scalar or an array; the feature axis is appended last.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_finite(x)
    rho, C = basis.rho, basis.order
    out = np.empty(x.shape + (C + 1,))
    scale = ((1.0 + rho) * (1.0 - rho)) ** 0.25
    out[..., 0] = scale * np.exp(-rho * x * x / (1.0 + rho))
    if C >= 1:
        out[..., 1] = math.sqrt(rho / 2.0) * 2.0 * x * out[..., 0]
    for k in range(1, C):
        out[..., k + 1] = (math.sqrt(rho / (2.0 * (k + 1))) * 2.0 * x * out[..., k]
                           - rho * math.sqrt(k / (k + 1.0)) * out[..., k - 1])
    return out


def hp_features_with_grad(x, basis: HermiteBasis) -> tuple[np.ndarray, np.ndarray]:
    """Features and their derivatives with respect to ``x``.

    The derivative follows the same recursion, differentiated term by term.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_finite(x)
    rho, C = basis.rho, basis.order
    phi = np.empty(x.shape + (C + 1,))
    dphi = np.empty_like(phi)
    scale = ((1.0 + rho) * (1.0 - rho)) ** 0.25
    phi[..., 0] = scale * np.exp(-rho * x * x / (1.0 + rho))
    dphi[..., 0] = -2.0 * rho * x / (1.0 + rho) * phi[..., 0]
    if C >= 1:
        s = math.sqrt(rho / 2.0) * 2.0
        phi[..., 1] = s * x * phi[..., 0]
        dphi[..., 1] = s * (phi[..., 0] + x * dphi[..., 0])
    for k in range(1, C):
        a = math.sqrt(rho / (2.0 * (k + 1))) * 2.0
        b = rho * math.sqrt(k / (k + 1.0))
        phi[..., k + 1] = a * x * phi[..., k] - b * phi[..., k - 1]
        dphi[..., k + 1] = a * (phi[..., k] + x * dphi[..., k]) - b * dphi[..., k - 1]
    return phi, dphi


def median_heuristic(data, max_pairs: int = 100_000, seed: int | None = 0) -> float:
    """Median pairwise Euclidean distance over distinct pairs ``i < j``.

    When there are more than ``max_pairs`` pairs, ``max_pairs`` of them are
    drawn uniformly (with replacement) using ``seed``.
    """
    X = np.asarray(data, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if n < 2:
        raise ValueError("median heuristic needs at least two points")
    total = n * (n - 1) // 2
    if total <= max_pairs:
        i, j = np.triu_indices(n, k=1)
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, n, size=max_pairs)
        j = rng.integers(0, n - 1, size=max_pairs)
        j = j + (j >= i)  # uniform over j != i
    dist = np.sqrt(np.sum((X[i] - X[j]) ** 2, axis=1))
    l = float(np.median(dist))
    if l <= 0.0:
        if np.all(X == X[0]):
            raise DegenerateDataError("all points coincide; supply a length scale explicitly")
        raise DegenerateDataError("median pairwise distance is zero; supply a length scale explicitly")
    return l
