"""Spending sequences gamma, LORD power lower bounds and the optimal gamma.

The default sequence is

    gamma_m = C * log(max(m, 2)) / (m * exp(sqrt(log m)))

whose tail is extremely heavy (about 40% of the mass sits beyond m = 10^6),
so the normalizer is computed from an exact partial sum plus the closed-form
tail integral 2 * Gamma(4, sqrt(log N)) with an Euler-Maclaurin correction.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .alternatives import Mixture
from .core import ConfigError, NumericError

PUBLISHED_CONSTANT = 0.07720838
_NORMALIZER_CUTOFF = 2**20
_CHUNK = 2**16


def _shape(m):
    """log(max(m,2)) / (m exp(sqrt(log m))), the unnormalized default gamma."""
    m = np.asarray(m, dtype=float)
    logm = np.log(m)
    return np.log(np.maximum(m, 2.0)) / (m * np.exp(np.sqrt(logm)))


def _shape_tail(N: float) -> float:
    """sum_{m > N} of the unnormalized shape (N >= 3)."""
    u = math.sqrt(math.log(N))
    integral = 2 * math.exp(-u) * (u**3 + 3 * u**2 + 6 * u + 6)
    f = float(_shape(N))
    L = math.log(N)
    fprime = f * (1 / L - 1 - 0.5 / u) / N
    return integral - f / 2 - fprime / 12


@functools.cache
def default_normalizer() -> float:
    """C such that the default gamma sums to one."""
    total = 0.0
    for start in range(1, _NORMALIZER_CUTOFF + 1, _CHUNK):
        stop = min(start + _CHUNK, _NORMALIZER_CUTOFF + 1)
        total += math.fsum(_shape(np.arange(start, stop)))
    total += _shape_tail(_NORMALIZER_CUTOFF)
    return 1.0 / total


class GammaSequence:
    """Non-negative, non-increasing sequence gamma_1, gamma_2, ... summing to 1.

    ``support`` is ``None`` for infinite sequences, otherwise the last index
    with a possibly non-zero value.
    """

    support: int | None = None

    def __call__(self, m):
        raise NotImplementedError

    def head(self, n: int) -> np.ndarray:
        """gamma_1 .. gamma_n as an array (cached, grown by doubling)."""
        cache = getattr(self, "_head", None)
        if cache is None or len(cache) < n:
            size = max(n, 2 * (0 if cache is None else len(cache)), 1024)
            cache = np.asarray(self(np.arange(1, size + 1)), dtype=float)
            self._head = cache
        return cache[:n]

    def total(self) -> float:
        raise NotImplementedError


class DefaultGamma(GammaSequence):
    """The log-shaped default sequence.

    ``constant`` overrides the normalizer C; by default it is computed so the
    sequence sums to one (0.0790820).  Passing ``PUBLISHED_CONSTANT`` reproduces
    the published simulations exactly, at the cost of the sequence summing to
    about 0.976 instead of 1.
    """

    def __init__(self, constant: float | None = None):
        self.constant = default_normalizer() if constant is None else float(constant)

    def __call__(self, m):
        return self.constant * _shape(m)

    def total(self) -> float:
        return self.constant / default_normalizer()

    def __repr__(self):
        return f"DefaultGamma(constant={self.constant!r})"


class ExplicitGamma(GammaSequence):
    """Finite-support sequence given by its values; zero past the end."""

    def __init__(self, values, require_monotone: bool = True):
        values = np.asarray(values, dtype=float)
        if values.ndim != 1 or len(values) == 0:
            raise ConfigError("gamma: need a non-empty 1-D sequence")
        if np.any(values < 0):
            raise ConfigError("gamma: values must be non-negative")
        if require_monotone and np.any(np.diff(values) > 1e-15):
            raise ConfigError("gamma: values must be non-increasing")
        if math.fsum(values) > 1 + 1e-8:
            raise ConfigError(f"gamma: values sum to {math.fsum(values):.10g} > 1")
        self.values = values
        self.support = len(values)

    def __call__(self, m):
        m = np.asarray(m, dtype=np.int64)
        out = np.zeros(m.shape)
        inside = (m >= 1) & (m <= self.support)
        out[inside] = self.values[m[inside] - 1]
        return out

    def total(self) -> float:
        return math.fsum(self.values)

    @classmethod
    def from_file(cls, path) -> "ExplicitGamma":
        """Read one value per line, or ``m,gamma`` CSV rows (header optional)."""
        values = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                cell = line.split(",")[1] if "," in line else line
                try:
                    values.append(float(cell))
                except ValueError:
                    if values:
                        raise ConfigError(f"gamma file {path}: bad line {line!r}") from None
        return cls(values)


def gamma_default(m, constant: float | None = None):
    """gamma_m of the default sequence (vectorized over m >= 1)."""
    return DefaultGamma(constant)(m)


@dataclass
class BoundResult:
    """A power bound with the series it came from.

    ``value = min(1, 1/series)``; ``tail`` is the estimated remainder added to
    the truncated sum and ``terms`` the number of summed terms.
    """

    value: float
    series: float
    terms: int
    tail: float
    warning: str | None = None


def _chunks(limit):
    start, size = 1, 4096
    while start <= limit:
        stop = min(start + size, limit + 1)
        yield start, stop
        start = stop
        size = min(size * 2, 2**20)


def _finish(total, tail, terms, warning):
    series = total + tail
    value = 1.0 if series <= 1.0 else 1.0 / series
    if warning:
        warnings.warn(warning, RuntimeWarning, stacklevel=3)
    return BoundResult(value, series, terms, tail, warning)


def power_lower_bound_exact(
    mixture: Mixture,
    gamma: GammaSequence,
    b0: float,
    horizon: int | None = None,
    n_trunc: int = 10**7,
) -> BoundResult:
    """Lower bound on LORD's average power under the mixture model.

    Sums prod_{l<=m} (1 - G(b0 gamma_l)) over m >= 1.  With ``horizon`` the sum
    stops at that m; otherwise it runs until the running product falls below
    1e-12 of the partial sum and a geometric tail with the last ratio is added.
    """
    if b0 * float(gamma(1)) > 1:
        raise ConfigError("b0 * gamma_1 must not exceed 1")
    limit = horizon if horizon is not None else n_trunc
    if horizon is None and gamma.support is not None:
        limit = gamma.support
    total, log_prod, terms = 0.0, 0.0, 0
    last_q = None
    for start, stop in _chunks(limit):
        q = mixture.cdf(b0 * gamma(np.arange(start, stop)))
        with np.errstate(divide="ignore"):
            logs = log_prod + np.cumsum(np.log1p(-q))
        prods = np.exp(logs)
        total += math.fsum(prods)
        log_prod = float(logs[-1])
        terms = stop - 1
        last_q = float(q[-1])
        if horizon is None and prods[-1] <= 1e-12 * total:
            tail = prods[-1] * (1 - last_q) / last_q if last_q > 0 else math.inf
            return _finish(total, tail, terms, None)
    if horizon is not None:
        return _finish(total, 0.0, terms, None)
    if gamma.support is not None:
        if log_prod == -math.inf:
            return _finish(total, 0.0, terms, None)
        return _finish(math.inf, 0.0, terms, "finite-support gamma: the infinite series diverges")
    prod = math.exp(log_prod)
    tail = prod * (1 - last_q) / last_q if last_q > 0 else math.inf
    return _finish(total, tail, terms, f"series not converged after {terms} terms (last product {prod:.3g})")


def power_lower_bound_surrogate(
    mixture: Mixture,
    gamma: GammaSequence,
    b0: float,
    horizon: int | None = None,
    n_trunc: int = 10**7,
) -> BoundResult:
    """Surrogate bound 1 / sum_m exp(-m G(b0 gamma_m)); never above the exact bound."""
    limit = horizon if horizon is not None else n_trunc
    if horizon is None and gamma.support is not None:
        return _finish(math.inf, 0.0, gamma.support, "finite-support gamma: the infinite series diverges")
    total, terms = 0.0, 0
    tail_ratio, last = None, None
    for start, stop in _chunks(limit):
        m = np.arange(start, stop)
        terms_chunk = np.exp(-m * mixture.cdf(b0 * gamma(m)))
        total += math.fsum(terms_chunk)
        terms = stop - 1
        last = float(terms_chunk[-1])
        if len(terms_chunk) > 1 and terms_chunk[-2] > 0:
            tail_ratio = float(terms_chunk[-1] / terms_chunk[-2])
        if horizon is None and last <= 1e-12 * total:
            tail = last * tail_ratio / (1 - tail_ratio) if tail_ratio is not None and tail_ratio < 1 else 0.0
            return _finish(total, tail, terms, None)
    if horizon is not None:
        return _finish(total, 0.0, terms, None)
    return _finish(total, 0.0, terms, f"surrogate series not converged after {terms} terms")


def surrogate_objective(mixture: Mixture, gamma: GammaSequence, b0: float, horizon: int) -> float:
    """sum_{m<=horizon} exp(-m G(b0 gamma_m)); smaller is better."""
    m = np.arange(1, horizon + 1)
    return math.fsum(np.exp(-m * mixture.cdf(b0 * gamma(m))))


class OptimalGamma(ExplicitGamma):
    """Finite-horizon maximizer of the surrogate power bound.

    Attributes ``beta`` (= b0 * gamma), ``eta`` (the Lagrange multiplier) and
    ``boundary`` (indices whose KKT root was clamped to b0 or 0) describe the
    solution.

    The exact KKT solution rises over its first terms, where m G(beta_m) << 1
    and the objective is driven by the steep density G' near zero.  LORD needs
    a non-increasing gamma, so use :meth:`monotone` when the sequence is to
    drive a rule.
    """

    def __init__(self, beta, b0, eta, boundary):
        self.beta = np.asarray(beta, dtype=float)
        self.b0 = b0
        self.eta = eta
        self.boundary = boundary
        super().__init__(self.beta / b0, require_monotone=False)

    @property
    def is_monotone(self) -> bool:
        return not np.any(np.diff(self.values) > 1e-15)

    def monotone(self) -> ExplicitGamma:
        """Least-squares non-increasing projection (same total mass)."""
        fit = optimize.isotonic_regression(self.values, increasing=False).x
        return ExplicitGamma(np.maximum(fit, 0.0))


def _log_h(mixture: Mixture, m, beta):
    """log of m G'(beta) exp(-m G(beta))."""
    return np.log(m) + mixture.log_pdf(beta) - m * mixture.cdf(beta)


@dataclass
class _KKTSolver:
    mixture: Mixture
    b0: float
    horizon: int
    grid_points: int = 160
    iterations: int = 80
    m: np.ndarray = field(init=False)
    log_peak: np.ndarray = field(init=False)
    log_h_peak: np.ndarray = field(init=False)
    log_h_top: np.ndarray = field(init=False)
    _solved: list = field(init=False, default_factory=list)

    def __post_init__(self):
        self.m = np.arange(1, self.horizon + 1, dtype=float)
        top = math.log(self.b0)
        grid = np.linspace(-700.0, top, self.grid_points)
        # the decreasing branch starts at the maximizer of h over (0, b0]
        peak = np.empty(self.horizon)
        peak_val = np.full(self.horizon, -np.inf)
        for t in grid:
            val = _log_h(self.mixture, self.m, np.full(self.horizon, math.exp(t)))
            better = val > peak_val
            peak = np.where(better, t, peak)
            peak_val = np.where(better, val, peak_val)
        self.log_peak = peak
        self.log_h_peak = peak_val
        self.log_h_top = _log_h(self.mixture, self.m, np.full(self.horizon, self.b0))

    def beta(self, log_eta: float):
        # beta_m(eta) is decreasing in eta: earlier solves bracket later ones
        lo, hi = self.log_peak.copy(), np.full(self.horizon, math.log(self.b0))
        for known_eta, known in self._solved:
            if known_eta <= log_eta:
                hi = np.minimum(hi, known)
            else:
                lo = np.maximum(lo, known)
        lo = np.minimum(lo, hi)
        log_beta = self._illinois(lo, hi, log_eta)
        log_beta = np.where(self.log_h_top >= log_eta, math.log(self.b0), log_beta)
        zero = self.log_h_peak < log_eta
        log_beta = np.where(zero, self.log_peak, log_beta)
        self._solved.append((log_eta, log_beta))
        return np.where(zero, 0.0, np.exp(log_beta))

    def _illinois(self, lo, hi, log_eta):
        """Vectorized Illinois regula falsi for log h(e^t) = log eta on [lo, hi]."""
        f = lambda t: _log_h(self.mixture, self.m, np.exp(t)) - log_eta  # noqa: E731
        f_lo, f_hi = f(lo), f(hi)
        # entries without a sign change are overridden by the caller
        done = ~((f_lo > 0) & (f_hi < 0))
        side = np.zeros(self.horizon, dtype=np.int8)
        root = np.full(self.horizon, np.nan)
        for _ in range(self.iterations):
            width = hi - lo
            if np.all(done):
                break
            with np.errstate(invalid="ignore", divide="ignore"):
                t = hi - f_hi * width / (f_hi - f_lo)
            bad = ~np.isfinite(t) | (t <= lo) | (t >= hi)
            t = np.where(bad, 0.5 * (lo + hi), t)
            f_t = f(t)
            above = f_t > 0
            # Illinois: halve the stale endpoint's value after repeated same-side steps
            lo, f_lo, hi, f_hi = (
                np.where(above, t, lo),
                np.where(above, f_t, np.where(side == -1, 0.5 * f_lo, f_lo)),
                np.where(above, hi, t),
                np.where(above, np.where(side == 1, 0.5 * f_hi, f_hi), f_t),
            )
            side = np.where(above, 1, -1).astype(np.int8)
            hit = ~done & ((np.abs(f_t) < 1e-13) | (hi - lo < 1e-15 * np.maximum(1.0, np.abs(t))))
            root = np.where(hit, t, root)
            done |= hit
        return np.where(np.isnan(root), 0.5 * (lo + hi), root)

    def excess(self, log_eta: float) -> float:
        return math.fsum(self.beta(log_eta)) - self.b0


def optimal_gamma(mixture: Mixture, b0: float, horizon: int = 10**5) -> OptimalGamma:
    """Solve the KKT system eta = m G'(beta_m) exp(-m G(beta_m)), sum beta_m = b0.

    Each beta_m is the root on the decreasing branch of the right-hand side
    (bisection in log beta); eta is found by Brent's method on log eta.
    gamma_m = beta_m / b0 for m <= horizon and zero afterwards.
    """
    if horizon < 1:
        raise ConfigError("horizon must be >= 1")
    if not 0 < b0 <= 1:
        raise ConfigError("b0 must lie in (0, 1]")
    if horizon == 1:
        log_eta = float(_log_h(mixture, 1.0, b0))
        return OptimalGamma([b0], b0, math.exp(log_eta), [])
    solver = _KKTSolver(mixture, b0, horizon)
    lo = float(np.min(solver.log_h_top)) - 1.0
    if solver.excess(lo) <= 0:
        raise NumericError(f"optimal_gamma: no bracket at log eta = {lo:.4g}")
    hi = max(lo + 1.0, float(np.max(solver.log_h_top)))
    for _ in range(200):
        if solver.excess(hi) < 0:
            break
        hi += 2.0 * (hi - lo)
    else:
        raise NumericError(f"optimal_gamma: sum of beta_m stays above b0 up to log eta = {hi:.4g}")
    log_eta = optimize.brentq(solver.excess, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    beta = solver.beta(log_eta)
    err = math.fsum(beta) - b0
    if abs(err) > 1e-9:
        raise NumericError(f"optimal_gamma: sum of beta_m misses b0 by {err:.3g} (eta = {math.exp(log_eta):.6g})")
    boundary = np.flatnonzero((beta >= b0) | (beta <= 0)) + 1
    return OptimalGamma(beta, b0, math.exp(log_eta), boundary.tolist())


def kkt_residual(mixture: Mixture, gamma: OptimalGamma, m) -> np.ndarray:
    """|eta - m G'(beta_m) exp(-m G(beta_m))| at the given 1-based indices."""
    m = np.asarray(m)
    return np.abs(gamma.eta - np.exp(_log_h(mixture, m, gamma.beta[m - 1])))
