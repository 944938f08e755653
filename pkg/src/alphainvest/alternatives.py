"""Non-null p-value distributions and the two-group mixture marginal.

Each alternative describes the CDF ``F`` of a non-null p-value on [0, 1] and
its density.  Densities are computed in log space: near x = 0 they blow up
for every alternative of interest, and the optimal-gamma solver needs them
there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc, betaln, log_ndtr, ndtr, ndtri

from .core import ConfigError

_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


def _clip01(x):
    return np.clip(np.asarray(x, dtype=float), 0.0, 1.0)


class Alternative:
    kind = "alternative"

    def cdf(self, x):
        raise NotImplementedError

    def log_pdf(self, x):
        raise NotImplementedError

    def pdf(self, x):
        return np.exp(self.log_pdf(x))

    def mixture(self, pi1: float) -> "Mixture":
        return Mixture(self, pi1)


@dataclass(frozen=True)
class GaussianAlternative(Alternative):
    """Two-sided test of N(mu, 1) against N(0, 1)."""

    mu: float
    kind = "gaussian"

    def cdf(self, x):
        x = _clip01(x)
        with np.errstate(divide="ignore"):
            z = -ndtri(x / 2)
        return np.where(x >= 1, 1.0, ndtr(-z - self.mu) + ndtr(self.mu - z))

    def log_pdf(self, x):
        # F'(x) = exp(-mu^2/2) cosh(mu z)
        z = -ndtri(_clip01(x) / 2)
        mz = self.mu * z
        return -0.5 * self.mu**2 + mz + np.log1p(np.exp(-2 * mz)) - math.log(2)


@dataclass(frozen=True)
class SimpleAlternative(Alternative):
    """One-sided test against a fixed shift ``A``: p = Phi(-A - eps)."""

    shift: float
    kind = "simple"

    def cdf(self, x):
        x = _clip01(x)
        with np.errstate(divide="ignore"):
            return ndtr(self.shift + ndtri(x))

    def log_pdf(self, x):
        u = ndtri(_clip01(x))
        return -self.shift * u - 0.5 * self.shift**2


@dataclass(frozen=True)
class ExponentialAlternative(Alternative):
    """One-sided test with effect theta ~ Exp(mean) plus N(0, 1) noise.

    The statistic is exponentially modified Gaussian, so with
    z = Phi^{-1}(1 - x) and rate l = 1/mean,
    F(x) = x + exp(l^2/2 - l z) Phi(z - l).
    """

    mean: float
    kind = "exponential"

    def _log_excess(self, z):
        lam = 1.0 / self.mean
        return 0.5 * lam**2 - lam * z + log_ndtr(z - lam)

    def cdf(self, x):
        x = _clip01(x)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            z = -ndtri(x)
            out = x + np.exp(self._log_excess(z))
        return np.where(x <= 0, 0.0, np.where(x >= 1, 1.0, np.minimum(out, 1.0)))

    def log_pdf(self, x):
        lam = 1.0 / self.mean
        z = -ndtri(_clip01(x))
        return math.log(lam) + self._log_excess(z) + 0.5 * z**2 + _LOG_SQRT_2PI


@dataclass(frozen=True)
class NormalPriorAlternative(Alternative):
    """Two-sided test with effect theta ~ N(0, variance)."""

    variance: float
    kind = "normal_prior"

    def cdf(self, x):
        x = _clip01(x)
        s = math.sqrt(1 + self.variance)
        with np.errstate(divide="ignore"):
            z = -ndtri(x / 2)
        return np.where(x >= 1, 1.0, 2 * ndtr(-z / s))

    def log_pdf(self, x):
        s2 = 1 + self.variance
        z = -ndtri(_clip01(x) / 2)
        return 0.5 * z**2 * (1 - 1 / s2) - 0.5 * math.log(s2)


@dataclass(frozen=True)
class BetaAlternative(Alternative):
    a: float
    b: float
    kind = "beta"

    def cdf(self, x):
        return betainc(self.a, self.b, _clip01(x))

    def log_pdf(self, x):
        x = _clip01(x)
        with np.errstate(divide="ignore"):
            return (self.a - 1) * np.log(x) + (self.b - 1) * np.log1p(-x) - betaln(self.a, self.b)


@dataclass(frozen=True)
class Mixture:
    """Marginal p-value law G(x) = (1 - pi1) x + pi1 F(x)."""

    alternative: Alternative
    pi1: float

    def __post_init__(self):
        if not 0 <= self.pi1 <= 1:
            raise ConfigError(f"pi1: must lie in [0, 1], got {self.pi1}")

    def cdf(self, x):
        x = _clip01(x)
        if self.pi1 == 0:
            return x
        return (1 - self.pi1) * x + self.pi1 * self.alternative.cdf(x)

    def log_pdf(self, x):
        if self.pi1 == 0:
            return np.zeros_like(np.asarray(x, dtype=float))
        log_alt = math.log(self.pi1) + self.alternative.log_pdf(x)
        if self.pi1 == 1:
            return log_alt
        return np.logaddexp(math.log1p(-self.pi1), log_alt)

    def pdf(self, x):
        return np.exp(self.log_pdf(x))

    def inverse(self, y, iterations: int = 200):
        """G^{-1}(y) by bisection in log x (G is continuous and increasing)."""
        y = np.asarray(y, dtype=float)
        lo = np.full(y.shape, -745.0)
        hi = np.zeros(y.shape)
        for _ in range(iterations):
            mid = 0.5 * (lo + hi)
            below = self.cdf(np.exp(mid)) < y
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        out = np.exp(hi)
        return np.where(y <= 0, 0.0, np.where(y >= 1, 1.0, out))


def parse_alternative(text: str) -> Alternative:
    """Parse ``gaussian:3``, ``simple:2.5``, ``exponential:2``, ``normal_prior:16``, ``beta:0.5,1.5``."""
    kind, _, args = text.strip().partition(":")
    try:
        values = [float(v) for v in args.split(",")] if args else []
    except ValueError:
        raise ConfigError(f"alternative: cannot parse {text!r}") from None
    builders = {
        "gaussian": (GaussianAlternative, 1),
        "simple": (SimpleAlternative, 1),
        "exponential": (ExponentialAlternative, 1),
        "normal_prior": (NormalPriorAlternative, 1),
        "beta": (BetaAlternative, 2),
    }
    if kind not in builders:
        raise ConfigError(f"alternative: unknown kind {kind!r}")
    cls, arity = builders[kind]
    if len(values) != arity:
        raise ConfigError(f"alternative: {kind} takes {arity} parameter(s), got {text!r}")
    if kind == "beta" and (values[0] <= 0 or values[1] <= 0):
        raise ConfigError("alternative: beta parameters must be positive")
    if kind in ("exponential", "normal_prior") and values[0] <= 0:
        raise ConfigError(f"alternative: {kind} parameter must be positive")
    return cls(*values)
