"""Energy detection, its analytic operating characteristic, and sensing plans.

Two closed forms of the detector's false-alarm / detection probabilities are
provided:

* the time-bandwidth form, ``P_F = Q(u, lambda/2)`` and
  ``P_D = Q_u(sqrt(2 r), sqrt(lambda))`` (deterministic primary signal,
  threshold on the unnormalized energy in noise units);
* the sample-count form for a Gaussian primary signal, where the normalized
  statistic ``Y = mean |y_i|^2`` is gamma distributed with shape ``NB``, so
  ``P_f = Q(NB, NB lambda / sigma_n^2)`` and
  ``P_d = Q(NB, NB lambda / (sigma_n^2 + sigma_s^2))``.

With ``u = NB`` and the time-bandwidth threshold set to
``2 NB lambda / sigma_n^2`` the two false-alarm expressions coincide.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .special import gammainc_upper, gaussian_tail_inv, marcum_q


class SensingError(ValueError):
    """Invalid detector or sensing-plan input."""


class UndefinedSensingTime(SensingError, ArithmeticError):
    """The chosen sensing-time reading has no real value for these inputs."""


class Hypothesis(enum.IntEnum):
    H0_IDLE = 0
    H1_BUSY = 1


class SensingTimeForm(str, enum.Enum):
    """Readings of the sensing-time expression.

    ``PRODUCT``: ``((sqrt(2s+1) Qi(P_d) - Qi(P_f)) / (s sqrt(B)))**2``.
    ``SWAPPED``: the radical multiplies the false-alarm term instead,
    ``((Qi(P_d) - sqrt(2s+1) Qi(P_f)) / (s sqrt(B)))**2``.
    ``RADICAL``: everything in the numerator sits under the square root,
    ``(2s + Qi(P_d) - Qi(P_f)) / (s**2 B)``; undefined when negative.
    """

    PRODUCT = "product"
    SWAPPED = "swapped"
    RADICAL = "radical"


@dataclass(frozen=True)
class DetectorConfig:
    threshold: float
    nb: int = 1
    u: int = 1

    def __post_init__(self):
        if not self.threshold > 0.0:
            raise SensingError(f"detector threshold must be positive, got {self.threshold}")
        if int(self.nb) != self.nb or self.nb < 1:
            raise SensingError(f"nb must be an integer >= 1, got {self.nb}")
        if int(self.u) != self.u or self.u < 1:
            raise SensingError(f"u must be an integer >= 1, got {self.u}")

    @staticmethod
    def nb_from_bandwidth(bandwidth_hz: float, duration_s: float) -> int:
        """Complex sample count ``round(B * t)``, at least 1."""
        return max(1, int(round(bandwidth_hz * duration_s)))


@dataclass(frozen=True)
class SensingOutcome:
    statistic: float
    decision: Hypothesis


@dataclass(frozen=True)
class SensingPlan:
    t_s: float
    t_c: float
    l_channels: int


def energy_statistic(samples, normalized: bool = True) -> float:
    """Received energy ``sum |y|^2``, or its per-sample mean when ``normalized``."""
    y = np.asarray(samples)
    if y.size == 0:
        raise SensingError("energy statistic needs at least one sample")
    energy = float(np.sum(y.real * y.real + y.imag * y.imag))
    return energy / y.size if normalized else energy


def energy_statistics(samples: np.ndarray) -> np.ndarray:
    """Row-wise normalized statistic for a ``(trials, nb)`` sample matrix."""
    y = np.asarray(samples)
    return np.mean(y.real * y.real + y.imag * y.imag, axis=-1)


def detect(statistic: float, threshold: float) -> Hypothesis:
    """Decide busy iff the statistic strictly exceeds the threshold."""
    if not threshold > 0.0:
        raise SensingError(f"threshold must be positive, got {threshold}")
    return Hypothesis.H1_BUSY if statistic > threshold else Hypothesis.H0_IDLE


def sense(samples, threshold: float) -> SensingOutcome:
    y = energy_statistic(samples, normalized=True)
    return SensingOutcome(y, detect(y, threshold))


# -- time-bandwidth form -----------------------------------------------------

def analytic_pf_gamma(config: DetectorConfig) -> float:
    return gammainc_upper(config.u, config.threshold / 2.0)


def analytic_pd_marcum(config: DetectorConfig, snr: float) -> float:
    if snr < 0.0:
        raise SensingError(f"snr must be nonnegative, got {snr}")
    return marcum_q(config.u, math.sqrt(2.0 * snr), math.sqrt(config.threshold))


# -- sample-count form -------------------------------------------------------

def _check_nb_args(threshold: float, nb: int, *variances: float) -> None:
    if not threshold > 0.0:
        raise SensingError(f"threshold must be positive, got {threshold}")
    if nb < 1:
        raise SensingError(f"nb must be >= 1, got {nb}")
    for v in variances:
        if not v > 0.0:
            raise SensingError(f"variances must be positive, got {v}")


def analytic_pf_nb(threshold: float, nb: int, sigma_n2: float) -> float:
    """False-alarm probability of the normalized energy detector."""
    _check_nb_args(threshold, nb, sigma_n2)
    return gammainc_upper(nb, nb * threshold / sigma_n2)


def analytic_pf_nb_printed(threshold: float, nb: int, sigma_s2: float) -> float:
    """False-alarm expression with the signal variance in the denominator.

    Kept only for side-by-side comparison; the noise-only hypothesis does not
    depend on the signal power, so this is not a false-alarm probability.
    """
    _check_nb_args(threshold, nb, sigma_s2)
    return gammainc_upper(nb, nb * threshold / sigma_s2)


def analytic_pd_nb(threshold: float, nb: int, sigma_n2: float, sigma_s2: float) -> float:
    """Detection probability for a circular Gaussian primary signal."""
    _check_nb_args(threshold, nb, sigma_n2)
    if sigma_s2 < 0.0:
        raise SensingError(f"sigma_s2 must be nonnegative, got {sigma_s2}")
    return gammainc_upper(nb, nb * threshold / (sigma_n2 + sigma_s2))


def threshold_for_pf(target_pf: float, nb: int, sigma_n2: float, tol: float = 1e-13) -> float:
    """Threshold giving a false-alarm probability of ``target_pf`` (bisection)."""
    if not 0.0 < target_pf < 1.0:
        raise SensingError(f"target P_f must be in (0, 1), got {target_pf}")
    lo, hi = 0.0, sigma_n2
    while analytic_pf_nb(hi, nb, sigma_n2) > target_pf:
        hi *= 2.0
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if analytic_pf_nb(mid, nb, sigma_n2) > target_pf:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# -- likelihood ratio --------------------------------------------------------

def lrt_log_statistic(samples, sigma_n2: float, sigma_s2: float) -> float:
    """Log of ``L(H0 | y) / L(H1 | y)`` for the two-variance Gaussian model.

    Oriented with H0 in the numerator: large values favour the idle
    hypothesis, and H0 is rejected when the ratio falls below a constant.
    """
    if not sigma_n2 > 0.0 or sigma_s2 < 0.0:
        raise SensingError("noise variance must be positive and signal variance nonnegative")
    y = np.asarray(samples)
    if y.size == 0:
        raise SensingError("likelihood ratio needs at least one sample")
    energy = float(np.sum(y.real * y.real + y.imag * y.imag))
    s1 = sigma_n2 + sigma_s2
    return y.size * math.log(s1 / sigma_n2) - energy * (1.0 / sigma_n2 - 1.0 / s1)


def lrt_statistic(samples, sigma_n2: float, sigma_s2: float) -> float:
    """Likelihood ratio ``L(H0) / L(H1)``; overflows to ``inf`` for huge windows."""
    try:
        return math.exp(lrt_log_statistic(samples, sigma_n2, sigma_s2))
    except OverflowError:
        return math.inf


def lrt_log_threshold(energy_threshold: float, nb: int, sigma_n2: float, sigma_s2: float) -> float:
    """Log-ratio threshold equivalent to the normalized-energy threshold.

    The log ratio is affine and strictly decreasing in the energy when
    ``sigma_s2 > 0``, so ``Y > lambda`` iff ``log ratio < this value``.
    """
    if not sigma_s2 > 0.0:
        raise SensingError("the mapping needs sigma_s2 > 0 (identical hypotheses otherwise)")
    s1 = sigma_n2 + sigma_s2
    return nb * math.log(s1 / sigma_n2) - nb * energy_threshold * (1.0 / sigma_n2 - 1.0 / s1)


def lrt_detect(samples, energy_threshold: float, sigma_n2: float, sigma_s2: float) -> Hypothesis:
    """Thresholded likelihood-ratio decision at the energy-equivalent level."""
    y = np.asarray(samples)
    stat = lrt_log_statistic(y, sigma_n2, sigma_s2)
    limit = lrt_log_threshold(energy_threshold, y.size, sigma_n2, sigma_s2)
    return Hypothesis.H1_BUSY if stat < limit else Hypothesis.H0_IDLE


# -- goodness of fit ---------------------------------------------------------

@dataclass(frozen=True)
class ChiSquaredResult:
    statistic: float
    small_count: bool
    dof: int


def chi_squared(observed: Sequence[float], expected: Sequence[float]) -> ChiSquaredResult:
    """Pearson goodness-of-fit statistic.

    ``small_count`` is set when more than 20% of categories have fewer than
    five observations, the usual limit of the chi-squared approximation.
    """
    o = np.asarray(observed, dtype=float)
    e = np.asarray(expected, dtype=float)
    if o.shape != e.shape or o.ndim != 1:
        raise SensingError(f"observed and expected must be equal-length 1-D, got {o.shape} and {e.shape}")
    if o.size < 2:
        raise SensingError("chi-squared needs at least two categories")
    if np.any(e <= 0.0):
        raise SensingError("expected counts must all be positive")
    stat = float(np.sum((o - e) ** 2 / e))
    small = np.count_nonzero(o < 5) > 0.2 * o.size
    return ChiSquaredResult(stat, bool(small), o.size - 1)


# -- sensing plan ------------------------------------------------------------

def sensing_time(
    snr: float,
    bandwidth: float,
    p_d: float,
    p_f: float,
    form: SensingTimeForm = SensingTimeForm.PRODUCT,
) -> float:
    """Per-channel sensing time (s) needed to meet ``(p_d, p_f)`` at linear ``snr``."""
    for name, v in (("p_d", p_d), ("p_f", p_f)):
        if not 0.0 < v < 1.0:
            raise SensingError(f"{name} must lie strictly between 0 and 1, got {v}")
    if not snr > 0.0:
        raise SensingError(f"snr must be positive, got {snr}")
    if not bandwidth > 0.0:
        raise SensingError(f"bandwidth must be positive, got {bandwidth}")
    qd = gaussian_tail_inv(p_d)
    qf = gaussian_tail_inv(p_f)
    root = math.sqrt(2.0 * snr + 1.0)
    form = SensingTimeForm(form)
    if form is SensingTimeForm.PRODUCT:
        num = root * qd - qf
    elif form is SensingTimeForm.SWAPPED:
        num = qd - root * qf
    else:
        radicand = 2.0 * snr + 1.0 * qd - qf
        if radicand < 0.0:
            raise UndefinedSensingTime(f"radical form undefined: 2*snr + Qinv(p_d) - Qinv(p_f) = {radicand} < 0")
        return radicand / (snr * snr * bandwidth)
    return (num / (snr * math.sqrt(bandwidth))) ** 2


def control_time(t_b1: float, t_b2: float, n_channels: int, t_ms: float, t_sifs: float) -> float:
    """Control-message duration: two beacons, one report slot per channel, five SIFS."""
    for name, v in (("t_b1", t_b1), ("t_b2", t_b2), ("n_channels", n_channels), ("t_ms", t_ms), ("t_sifs", t_sifs)):
        if v < 0:
            raise SensingError(f"{name} must be nonnegative, got {v}")
    return t_b1 + t_b2 + n_channels * t_ms + 5.0 * t_sifs


def _ceil(x: float) -> int:
    # absorb representation error in ratios such as 0.09 / 0.01
    r = round(x)
    if abs(x - r) <= 1e-9 * max(1.0, abs(x)):
        return int(r)
    return math.ceil(x)


def channels_to_sense(n_channels: int, m_s: int, t_frame: float, t_c: float, t_s: float) -> int:
    """Channels each sensing user can cover in one frame.

    The lesser of an even share of the channels and the number of sensing
    windows (each costing ``2 t_s``) that fit after the control phase; at
    least one.  ``t_s = 0`` leaves the time budget unbounded.
    """
    if m_s < 1:
        raise SensingError(f"m_s must be >= 1, got {m_s}")
    if n_channels < 1:
        raise SensingError(f"n_channels must be >= 1, got {n_channels}")
    if t_s < 0.0:
        raise SensingError(f"t_s must be nonnegative, got {t_s}")
    if not t_frame > t_c:
        raise SensingError(f"no sensing budget: frame {t_frame} s does not exceed control time {t_c} s")
    share = _ceil(n_channels / m_s)
    if t_s == 0.0:
        return max(1, share)
    budget = _ceil((t_frame - t_c) / (2.0 * t_s))
    return max(1, min(share, budget))


def sensing_plan(
    *,
    n_channels: int,
    m_s: int,
    t_frame: float,
    t_c: float | None = None,
    t_b1: float | None = None,
    t_b2: float | None = None,
    t_ms: float | None = None,
    t_sifs: float | None = None,
    t_s: float | None = None,
    snr: float | None = None,
    bandwidth: float | None = None,
    p_d: float | None = None,
    p_f: float | None = None,
    form: SensingTimeForm = SensingTimeForm.PRODUCT,
) -> SensingPlan:
    """Compute ``(t_s, T_c, L)``; explicit ``t_c`` / ``t_s`` override the formulas."""
    if t_c is None:
        t_c = control_time(t_b1, t_b2, n_channels, t_ms, t_sifs)
    if t_s is None:
        t_s = sensing_time(snr, bandwidth, p_d, p_f, form)
    return SensingPlan(t_s, t_c, channels_to_sense(n_channels, m_s, t_frame, t_c, t_s))


def empirical_roc(
    thresholds: Sequence[float],
    nb: int,
    sigma_n2: float,
    sigma_s2: float,
    trials: int,
    rng: np.random.Generator,
    chunk: int = 20_000,
) -> tuple[np.ndarray, np.ndarray]:
    """Monte-Carlo false-alarm and detection rates at each threshold.

    Noise-only and signal-plus-noise windows are synthesized as complex
    Gaussian samples and passed through the normalized energy statistic.
    Returns ``(pf, pd)`` arrays aligned with ``thresholds``.
    """
    from .channel import complex_gaussian

    lam = np.asarray(thresholds, dtype=float)
    fa = np.zeros(lam.size, dtype=np.int64)
    hits = np.zeros(lam.size, dtype=np.int64)
    done = 0
    while done < trials:
        n = min(chunk, trials - done)
        y0 = complex_gaussian(sigma_n2, (n, nb), rng)
        y1 = complex_gaussian(sigma_n2, (n, nb), rng) + complex_gaussian(sigma_s2, (n, nb), rng)
        s0 = energy_statistics(y0)
        s1 = energy_statistics(y1)
        fa += np.count_nonzero(s0[:, None] > lam[None, :], axis=0)
        hits += np.count_nonzero(s1[:, None] > lam[None, :], axis=0)
        done += n
    return fa / trials, hits / trials
