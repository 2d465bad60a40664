"""Gaussian-mechanism calibration, budget splitting and embedding release."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import log_ndtr

from .embedding import LabeledMeanEmbedding
from .errors import SensitivityMismatchError, UnsupportedCalibrationError

METHODS = ("classical", "analytic")


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float
    split_fraction: float = 0.8
    product_releases: int = 1

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if not 0 < self.split_fraction < 1:
            raise ValueError(f"split fraction must lie in (0, 1), got {self.split_fraction}")
        if self.product_releases < 0:
            raise ValueError("number of product releases must be non-negative")


@dataclass(frozen=True)
class NoiseCalibration:
    """Noise multiplier ``sigma``: the released noise std is ``sigma * sensitivity``."""

    sigma: float
    epsilon: float
    delta: float
    method: str
    sensitivity: float = 1.0
    releases: int = 1

    @property
    def noise_std(self) -> float:
        return self.sigma * self.sensitivity

    def with_sensitivity(self, sensitivity: float) -> "NoiseCalibration":
        return replace(self, sensitivity=float(sensitivity))

    def to_dict(self) -> dict:
        return {"sigma": self.sigma, "epsilon": self.epsilon, "delta": self.delta,
                "method": self.method, "sensitivity": self.sensitivity, "releases": self.releases}


def sensitivity_bound(m: int, part: str = "sum") -> float:
    """Replace-one L2 sensitivity of a labeled mean embedding over ``m`` records.

    Every per-record feature has norm at most one for the sum, product and
    random-Fourier maps (and for each block of the combined map), so the
    bound is ``2/m`` for all of them.
    """
    if m < 1:
        raise ValueError("sample count must be at least 1")
    if part not in ("sum", "product", "rff", "combined-sum-block", "combined-product-block"):
        raise ValueError(f"unknown part {part!r}")
    return 2.0 / m


def analytic_delta(sigma: float, epsilon: float) -> float:
    """Smallest delta achieved by unit-sensitivity Gaussian noise of std ``sigma``.

    ``Phi(1/(2 sigma) - eps sigma) - e^eps Phi(-1/(2 sigma) - eps sigma)``
    """
    a = 1.0 / (2.0 * sigma)
    b = epsilon * sigma
    first = math.exp(log_ndtr(a - b))
    second = math.exp(epsilon + log_ndtr(-a - b))
    return first - second


def _analytic_sigma(epsilon: float, delta: float) -> float:
    lo, hi = 1e-3, 1.0
    while analytic_delta(hi, epsilon) > delta:
        lo, hi = hi, hi * 2.0
        if hi > 1e12:
            raise RuntimeError("could not bracket the analytic Gaussian sigma")
    while analytic_delta(lo, epsilon) <= delta:
        lo /= 2.0
        if lo < 1e-12:
            raise RuntimeError("could not bracket the analytic Gaussian sigma")
    # analytic_delta decreases in sigma; keep hi on the satisfying side
    while hi - lo > 1e-12 * hi:
        mid = 0.5 * (lo + hi)
        if analytic_delta(mid, epsilon) <= delta:
            hi = mid
        else:
            lo = mid
    return hi


def calibrate_sigma(epsilon: float, delta: float, method: str = "analytic") -> NoiseCalibration:
    if not (epsilon > 0 and math.isfinite(epsilon)):
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if method == "classical":
        if epsilon > 1:
            raise UnsupportedCalibrationError("classical calibration requires epsilon <= 1; use 'analytic'")
        sigma = math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon
    elif method == "analytic":
        sigma = _analytic_sigma(epsilon, delta)
    else:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    return NoiseCalibration(sigma, float(epsilon), float(delta), method)


def split_budget(budget: PrivacyBudget) -> tuple[tuple[float, float], tuple[float, float]]:
    """``((eps1, delta1), (eps2, delta2))``: the first pair goes to the sum embedding."""
    f = budget.split_fraction
    eps1, delta1 = f * budget.epsilon, f * budget.delta
    return (eps1, delta1), (budget.epsilon - eps1, budget.delta - delta1)


def compose_product_releases(releases: int, epsilon: float, delta: float,
                             method: str = "analytic") -> NoiseCalibration:
    """Per-release noise for ``releases`` equal Gaussian releases sharing ``(epsilon, delta)``.

    ``E`` releases with noise multiplier ``s`` each are jointly a single
    Gaussian mechanism with sensitivity ``sqrt(E)``, so the per-release
    multiplier is ``sigma(epsilon, delta) * sqrt(E)``.
    """
    if releases < 1:
        raise ValueError("need at least one release")
    base = calibrate_sigma(epsilon, delta, method)
    return replace(base, sigma=base.sigma * math.sqrt(releases), releases=int(releases))


def privatize(emb: LabeledMeanEmbedding, calib: NoiseCalibration,
              rng: np.random.Generator) -> LabeledMeanEmbedding:
    """Add i.i.d. ``N(0, (sigma * sensitivity)^2)`` noise to every entry."""
    expected = sensitivity_bound(emb.count, emb.part)
    if not math.isclose(calib.sensitivity, expected, rel_tol=1e-12):
        raise SensitivityMismatchError(
            f"calibration sensitivity {calib.sensitivity} != bound {expected} for m={emb.count}")
    std = calib.noise_std
    noise = rng.standard_normal(emb.matrix.shape) * std
    total_std = math.sqrt(emb.noise_std**2 + std**2)
    return emb.with_matrix(emb.matrix + noise, privatized=True, noise_std=total_std)


def privatize_class_counts(labels, num_classes: int, epsilon: float, delta: float,
                           rng: np.random.Generator) -> np.ndarray:
    """Release class frequencies with the Gaussian mechanism.

    Replacing one record moves two frequencies by ``1/m`` each, so the L2
    sensitivity is ``sqrt(2)/m``.  The result is clipped and renormalized.
    """
    labels = np.asarray(labels, dtype=np.int64)
    m = labels.shape[0]
    freq = np.bincount(labels, minlength=num_classes) / m
    calib = calibrate_sigma(epsilon, delta, "analytic")
    noisy = freq + rng.standard_normal(num_classes) * calib.sigma * math.sqrt(2.0) / m
    noisy = np.clip(noisy, 1e-12, None)
    return noisy / noisy.sum()
