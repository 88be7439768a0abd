"""Special functions for detector performance curves.

Regularized incomplete gamma
    Power series for ``x < a + 1`` and a modified-Lentz continued fraction
    otherwise; the function that is *not* small in a region is the one
    computed directly, and the other is its complement.  Relative error is
    below 1e-11 for ``a`` in [0.5, 1000] and ``x`` in [1e-3, 2000].

Generalized Marcum Q
    Poisson mixture of gamma tails,
    ``Q_M(a, b) = sum_k e^{-a^2/2} (a^2/2)^k / k! * Q(M + k, b^2/2)``,
    summed outward from the Poisson mode so that every term is positive and
    the truncation error is bounded by the discarded Poisson mass.  Weights
    come from a recurrence normalized by their own sum.  Relative error is
    below 1e-12 for orders 1 to 20 and ``a, b`` up to 30.

Inverse Gaussian tail
    Acklam's rational approximation refined by two Halley steps against
    ``math.erfc``.
"""

from __future__ import annotations

import math

EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 100_000


class SpecialFunctionError(ArithmeticError):
    """Iteration failed to converge."""


def _log_prefactor(a: float, x: float) -> float:
    return a * math.log(x) - x - math.lgamma(a)


def _gamma_series(a: float, x: float) -> float:
    # P(a, x) by the series x^a e^-x / Gamma(a+1) * sum x^n / ((a+1)...(a+n))
    ap = a
    term = total = 1.0 / a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * EPS:
            return total * math.exp(_log_prefactor(a, x))
    raise SpecialFunctionError(f"gamma series did not converge for a={a}, x={x}")


def _gamma_cf(a: float, x: float) -> float:
    # Q(a, x) by the Legendre continued fraction, modified Lentz evaluation
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < EPS:
            return math.exp(_log_prefactor(a, x)) * h
    raise SpecialFunctionError(f"gamma continued fraction did not converge for a={a}, x={x}")


def _check_gamma_args(a: float, x: float) -> None:
    if not a > 0.0:
        raise ValueError(f"shape a must be positive, got {a}")
    if x < 0.0 or math.isnan(x):
        raise ValueError(f"argument x must be nonnegative, got {x}")


def gammainc_lower(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    _check_gamma_args(a, x)
    if x == 0.0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        return min(_gamma_series(a, x), 1.0)
    return max(1.0 - _gamma_cf(a, x), 0.0)


def gammainc_upper(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x)."""
    _check_gamma_args(a, x)
    if x == 0.0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return max(1.0 - _gamma_series(a, x), 0.0)
    return min(_gamma_cf(a, x), 1.0)


def marcum_q(m: float, a: float, b: float, tol: float = 1e-17) -> float:
    """Generalized Marcum Q function ``Q_m(a, b)`` for ``m > 0``, ``a, b >= 0``."""
    if not m > 0.0:
        raise ValueError(f"order m must be positive, got {m}")
    if a < 0.0 or b < 0.0:
        raise ValueError(f"a and b must be nonnegative, got a={a}, b={b}")
    if b == 0.0:
        return 1.0
    if math.isinf(a):
        return 1.0
    x = 0.5 * b * b
    mu = 0.5 * a * a
    if mu == 0.0:
        return gammainc_upper(m, x)

    # Poisson weights by recurrence outward from the mode, relative to the
    # mode weight; normalizing by their sum avoids the cancellation in
    # exp(-mu + k log mu - lgamma(k + 1)) when mu is large
    k0 = int(math.floor(mu))
    total = 0.0
    mass = 0.0
    # upward: Q(m+k, x) increases toward 1, so the rest of the sum is bounded
    # by the remaining Poisson mass, itself < w * mu / (k + 1 - mu) once k > mu
    k, w = k0, 1.0
    while True:
        total += w * gammainc_upper(m + k, x)
        mass += w
        tail = w * mu / (k + 1 - mu) if k + 1 > mu else math.inf
        if tail <= tol * total or w == 0.0 and k > mu:
            break
        k += 1
        w *= mu / k
        if k - k0 > _MAX_ITER:
            raise SpecialFunctionError("Marcum Q upward sum did not converge")
    # downward: terms and weights below k are bounded by w * k / (mu - k);
    # both the sum and the normalizing mass must be converged
    k, w = k0, 1.0
    while k > 0:
        w *= k / mu
        k -= 1
        term = w * gammainc_upper(m + k, x)
        total += term
        mass += w
        if k == 0 or w == 0.0:
            break
        ratio = k / (mu - k)
        if term * ratio <= tol * total and w * ratio <= tol * mass:
            break
    total /= mass
    return min(total, 1.0)


def gaussian_tail(x: float) -> float:
    """Q(x) = P(Z > x) for a standard normal Z."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


# Acklam's coefficients for the standard normal quantile
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _acklam(prob: float) -> float:
    if prob < _P_LOW:
        t = math.sqrt(-2.0 * math.log(prob))
        return (((((_C[0] * t + _C[1]) * t + _C[2]) * t + _C[3]) * t + _C[4]) * t + _C[5]) / (
            (((_D[0] * t + _D[1]) * t + _D[2]) * t + _D[3]) * t + 1.0
        )
    if prob > 1.0 - _P_LOW:
        return -_acklam(1.0 - prob)
    t = prob - 0.5
    r = t * t
    return (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * t / (
        ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
    )


def gaussian_tail_inv(prob: float) -> float:
    """Inverse of :func:`gaussian_tail`: the ``x`` with ``P(Z > x) = prob``."""
    if not 0.0 < prob < 1.0:
        raise ValueError(f"inverse Gaussian tail needs 0 < prob < 1, got {prob}")
    if prob == 0.5:
        return 0.0
    # quantile of the lower tail is -Q^{-1}; refine in the smaller tail for accuracy
    lower = prob > 0.5
    tail = 1.0 - prob if lower else prob
    x = -_acklam(tail)
    for _ in range(2):
        err = gaussian_tail(x) - tail
        pdf = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
        u = err / pdf
        x = x + u / (1.0 - 0.5 * x * u)
    return -x if lower else x
