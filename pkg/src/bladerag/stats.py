"""Regularized incomplete Beta, Beta quantiles and Clopper-Pearson intervals."""

from __future__ import annotations

import math
from dataclasses import dataclass

_EPS = 1e-15
_TINY = 1e-300
QUANTILE_TOL = 1e-10
QUANTILE_MAX_ITER = 200


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for I_x(a, b), modified Lentz's method."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for m in range(1, 10_000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b), the CDF of Beta(a, b) at x."""
    if a <= 0 or b <= 0:
        raise ValueError("Beta parameters must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(log_front)
    # The continued fraction converges fast only below the mean; use symmetry above it.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def beta_quantile(p: float, a: float, b: float) -> float:
    """Inverse of :func:`regularized_incomplete_beta` in x, by bisection."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if p == 0.0:
        return 0.0
    if p == 1.0:
        return 1.0
    lo, hi = 0.0, 1.0
    mid = 0.5
    for _ in range(QUANTILE_MAX_ITER):
        mid = 0.5 * (lo + hi)
        f = regularized_incomplete_beta(a, b, mid) - p
        if abs(f) <= QUANTILE_TOL * 1e-2 or hi - lo < 1e-16:
            break
        if f < 0:
            lo = mid
        else:
            hi = mid
    return mid


@dataclass(frozen=True)
class BinomialObservation:
    successes: int
    trials: int
    level: float = 0.95

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ValueError("trials must be positive")
        if not 0 <= self.successes <= self.trials:
            raise ValueError(f"successes must lie in [0, {self.trials}], got {self.successes}")
        if not 0.0 < self.level < 1.0:
            raise ValueError(f"confidence level must lie in (0, 1), got {self.level}")

    @property
    def alpha(self) -> float:
        return 1.0 - self.level


def clopper_pearson(successes: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    """Exact two-sided binomial interval for ``successes / trials``."""
    obs = BinomialObservation(successes, trials, level)
    x, n, alpha = obs.successes, obs.trials, obs.alpha
    if x == 0:
        return 0.0, beta_quantile(1.0 - alpha / 2, 1, n)
    if x == n:
        return beta_quantile(alpha / 2, x, 1), 1.0
    return beta_quantile(alpha / 2, x, n - x + 1), beta_quantile(1.0 - alpha / 2, x + 1, n - x)
