"""Prediction and link-quality metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class MetricError(ValueError):
    pass


# Values reported for the proprietary TV-band dataset; shown next to our own
# numbers for orientation only, they are not reproduction targets.
REFERENCE_VALUES = {
    "rmse_train": 0.2143,
    "rmse_validation_test": 0.2116,
    "mse": 0.46,
    "psnr_db": 21.4549,
    "snr_db": 27.4231,
}


@dataclass(frozen=True)
class SignalPair:
    reference: np.ndarray
    estimate: np.ndarray

    def __post_init__(self):
        ref = np.asarray(self.reference, dtype=float).ravel()
        est = np.asarray(self.estimate, dtype=float).ravel()
        if ref.size == 0:
            raise MetricError("signal pair is empty")
        if ref.size != est.size:
            raise MetricError(f"length mismatch: {ref.size} reference vs {est.size} estimate values")
        object.__setattr__(self, "reference", ref)
        object.__setattr__(self, "estimate", est)


def _pair(reference, estimate=None) -> SignalPair:
    if isinstance(reference, SignalPair):
        return reference
    return SignalPair(reference, estimate)


def snr_db(p_signal: float, p_noise: float) -> float:
    if not (p_signal > 0.0 and p_noise > 0.0):
        raise MetricError(f"powers must be positive, got signal={p_signal}, noise={p_noise}")
    return 10.0 * math.log10(p_signal) - 10.0 * math.log10(p_noise)


def snr_quality(db: float) -> str:
    """Coarse link-quality band for an SNR in dB."""
    if db < 12.0:
        return "serious problem"
    if db > 30.0:
        return "suitable"
    if db > 20.0:
        return "satisfying"
    return "marginal"


def mse(reference, estimate=None) -> float:
    """Mean squared error.  Accepts a :class:`SignalPair` or two sequences."""
    pair = _pair(reference, estimate)
    d = pair.reference - pair.estimate
    return float(np.mean(d * d))


def rmse(reference, estimate=None) -> float:
    return math.sqrt(mse(reference, estimate))


def nrmse(reference, estimate=None, *, observed_min: float, observed_max: float) -> float:
    """RMSE divided by the observed range, as a fraction (x100 for percent)."""
    span = observed_max - observed_min
    if not span > 0.0:
        raise MetricError("constant observations: observed_max must exceed observed_min")
    return rmse(reference, estimate) / span


def psnr_db(max_value: float, mse_value: float) -> float:
    """Peak SNR in dB; a zero error returns ``math.inf``."""
    if not max_value > 0.0:
        raise MetricError(f"peak value must be positive, got {max_value}")
    if mse_value < 0.0:
        raise MetricError(f"mse must be nonnegative, got {mse_value}")
    if mse_value == 0.0:
        return math.inf
    return 10.0 * math.log10(max_value * max_value / mse_value)
