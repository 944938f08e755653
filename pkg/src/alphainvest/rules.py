"""Concrete online testing rules.

All rules are vectorized over independent streams (see :class:`OnlineRule`).
Each has a stable identifier used by the configuration layer:

    lord, ai, ero_ai, asr, bonferroni, dep_lord, fdx_lord
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

from .core import ConfigError, NumericError, OnlineRule, RuleParams
from .gamma import DefaultGamma, GammaSequence

ALPHA_CEILING = 1 - 1e-9

_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


class Lord(OnlineRule):
    """LORD: spend the fraction gamma_{i - tau_i} of the wealth held at the last discovery.

    alpha_i = phi_i = gamma_{i - tau_i} W(tau_i), psi_i = b0.
    """

    name = "lord"

    def __init__(self, params: RuleParams, gamma: GammaSequence | None = None, size: int = 1):
        super().__init__(params, size)
        self.gamma = gamma if gamma is not None else DefaultGamma()
        self.wealth_at_tau = self.wealth.copy()
        self.steps_since_tau = np.ones(self.size, dtype=np.int64)

    def _gamma_at(self, index):
        table = self.gamma.head(int(index.max()))
        return table[index - 1]

    def _quote(self):
        level = self._gamma_at(self.steps_since_tau) * self.wealth_at_tau
        return level, level, self.params.b0

    def _update(self, decision):
        self.wealth_at_tau = np.where(decision, self.wealth, self.wealth_at_tau)
        self.steps_since_tau = np.where(decision, 1, self.steps_since_tau + 1)


class AlphaInvesting(OnlineRule):
    """Alpha-investing with levels W(j-1) / (1 + j - tau_j).

    Pay-out phi_j = alpha_j / (1 - alpha_j), pay-off psi_j = b0 + phi_j.  The
    level is capped at W/(1+W), which is exactly phi_j <= W(j-1), and at
    1 - 1e-9 so phi stays finite.  ``cap=False`` removes the wealth cap; the
    resulting rule is invalid and exists only to exercise the validators.

    The rule is not monotone: a history with an extra discovery restarts the
    1/(1 + j - tau) schedule, spends faster and can later sit below the
    history without it.  Its guarantee is the classical mFDR one.
    """

    name = "ai"
    monotone = False

    def __init__(self, params: RuleParams, size: int = 1, cap: bool = True):
        super().__init__(params, size)
        self.cap = cap
        self.steps_since_tau = np.ones(self.size, dtype=np.int64)

    def _quote(self):
        W = self.wealth
        level = W / (1 + self.steps_since_tau)
        if self.cap:
            level = np.minimum(level, W / (1 + W))
        level = np.clip(level, 0.0, ALPHA_CEILING)
        phi = level / (1 - level)
        return level, phi, self.params.b0 + phi

    def _update(self, decision):
        self.steps_since_tau = np.where(decision, 1, self.steps_since_tau + 1)


def ero_residual(alpha, phi, mu):
    """phi / rho(alpha) - phi / alpha + 1 with rho(alpha) = Phi(mu + Phi^{-1}(alpha))."""
    alpha = np.asarray(alpha, dtype=float)
    return phi / ndtr(mu + ndtri(alpha)) - phi / alpha + 1


def ero_solve_alpha(phi, mu: float, max_iter: int = 200):
    """Solve phi / rho(alpha) = phi / alpha - 1 for alpha in (0, 1), vectorized over phi.

    Works in u = Phi^{-1}(alpha), where the residual
    r(u) = phi / Phi(mu + u) - phi / Phi(u) + 1 is increasing, negative as
    u -> -inf and close to 1 at the top of the bracket.  Newton steps are
    safeguarded by bisection on [Phi^{-1}(1e-300), Phi^{-1}(1 - 1e-9)].
    Where r has no sign change the level is clamped to 1 - 1e-9; phi = 0
    gives alpha = 0.
    """
    if mu <= 0:
        raise ConfigError(f"mu: must be > 0, got {mu}")
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    out = np.zeros(phi.shape)
    active = phi > 0
    if not np.any(active):
        return out
    f = phi[active]
    lo = np.full(f.shape, float(ndtri(1e-300)))
    hi = np.full(f.shape, float(ndtri(ALPHA_CEILING)))

    def residual(u):
        log_a, log_r = log_ndtr(u), log_ndtr(mu + u)
        r = f * np.exp(-log_r) - f * np.exp(-log_a) + 1
        log_pdf_u = -0.5 * u**2 - _LOG_SQRT_2PI
        log_pdf_r = -0.5 * (mu + u) ** 2 - _LOG_SQRT_2PI
        dr = f * np.exp(log_pdf_u - 2 * log_a) - f * np.exp(log_pdf_r - 2 * log_r)
        return r, dr

    top, _ = residual(hi)
    clamp = top <= 0
    u = np.clip(ndtri(f / (1 + f)), lo, hi)
    done = clamp.copy()
    for _ in range(max_iter):
        r, dr = residual(u)
        done |= np.abs(r) <= 1e-13
        if np.all(done):
            break
        lo = np.where(r < 0, u, lo)
        hi = np.where(r > 0, u, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = u - r / dr
        bad = ~np.isfinite(step) | (step <= lo) | (step >= hi)
        step = np.where(bad, 0.5 * (lo + hi), step)
        done |= hi - lo <= 4e-16 * np.maximum(1.0, np.abs(u))
        u = np.where(done, u, step)
    else:
        raise NumericError(f"ero_solve_alpha: no convergence for phi in [{f.min():.3g}, {f.max():.3g}], mu={mu:g}")
    alpha = np.where(clamp, ALPHA_CEILING, ndtr(u))
    out[active] = np.minimum(alpha, ALPHA_CEILING)
    return out


class EroAlphaInvesting(OnlineRule):
    """Expected-reward-optimal alpha-investing for a simple alternative of size ``mu``.

    phi_i = W(i-1)/10 and alpha_i solves phi/rho = phi/alpha - 1 with
    rho = Phi(mu + Phi^{-1}(alpha)).  The nominal pay-off
    phi/alpha + b0 - 1 equals phi/rho + b0, which exceeds the cap phi + b0
    whenever rho < 1, so by default the pay-off is clamped to
    min(phi/alpha + b0 - 1, phi + b0).  ``literal_payoff=True`` keeps the
    unclamped value.
    """

    name = "ero_ai"

    def __init__(
        self,
        params: RuleParams,
        mu: float,
        size: int = 1,
        payout_fraction: float = 0.1,
        literal_payoff: bool = False,
    ):
        super().__init__(params, size)
        if not 0 < payout_fraction < 1:
            raise ConfigError(f"payout_fraction: must lie in (0, 1), got {payout_fraction}")
        if not mu > 0:
            raise ConfigError(f"mu: must be > 0, got {mu}")
        self.mu = float(mu)
        self.payout_fraction = payout_fraction
        self.literal_payoff = literal_payoff

    def _quote(self):
        phi = self.payout_fraction * np.maximum(self.wealth, 0.0)
        level = ero_solve_alpha(phi, self.mu)
        with np.errstate(divide="ignore", invalid="ignore"):
            psi = np.where(level > 0, phi / np.where(level > 0, level, 1.0) + self.params.b0 - 1, self.params.b0)
        if not self.literal_payoff:
            psi = np.minimum(psi, phi + self.params.b0)
        return level, phi, psi


class AlphaSpendingWithRewards(OnlineRule):
    """phi_j = c1 W(j-1), alpha_j = phi_j / kappa, maximal reward min(kappa alpha_j + b0, kappa - 1 + b0)."""

    name = "asr"

    def __init__(self, params: RuleParams, size: int = 1, kappa: float = 1.0, payout_fraction: float = 0.1):
        super().__init__(params, size)
        if kappa < 1:
            raise ConfigError(f"kappa: must be >= 1, got {kappa}")
        if not 0 < payout_fraction < 1:
            raise ConfigError(f"c1: must lie in (0, 1), got {payout_fraction}")
        self.kappa = float(kappa)
        self.payout_fraction = float(payout_fraction)

    def _quote(self):
        phi = self.payout_fraction * self.wealth
        level = np.minimum(phi / self.kappa, 1.0)
        b0 = self.params.b0
        psi = np.minimum(self.kappa * level + b0, self.kappa - 1 + b0)
        return level, phi, psi


class OnlineBonferroni(OnlineRule):
    """Fixed levels alpha_m = gamma_m * alpha.

    Embedded in the wealth framework with W(0) = alpha, phi_m = alpha_m and
    psi_m = 0, so the wealth is the unspent budget alpha (1 - sum gamma) and
    both G1 inequalities hold.
    """

    name = "bonferroni"

    def __init__(self, params: RuleParams, gamma: GammaSequence | None = None, size: int = 1):
        super().__init__(params, size)
        self.gamma = gamma if gamma is not None else DefaultGamma()

    @classmethod
    def with_level(cls, alpha: float, gamma: GammaSequence | None = None, size: int = 1, b0: float | None = None):
        params = RuleParams(w0=alpha, b0=alpha if b0 is None else b0, alpha=alpha, mode="none")
        return cls(params, gamma, size)

    def _quote(self):
        level = self.params.alpha * self.gamma.head(self.step + 1)[self.step]
        return level, level, 0.0


def default_xi(alpha: float, b0: float, gamma: GammaSequence | None = None):
    """xi_i = (alpha/b0) gamma_i / (1 + log i), so sum xi_i (1 + log i) = (alpha/b0) sum gamma_i."""
    gamma = gamma if gamma is not None else DefaultGamma()
    scale = alpha / b0

    def xi(i):
        i = np.asarray(i, dtype=float)
        return scale * gamma(i) / (1 + np.log(i))

    return xi


class DependentLord(OnlineRule):
    """LORD with absolute-time discounts: alpha_i = phi_i = xi_i W(tau_i), psi_i = b0.

    Controls FDR under arbitrary dependence at level sum_i b0 xi_i (1 + log i)
    (see :meth:`fdr_bound`).  The level is additionally capped by W(i-1),
    which never binds when sum xi_i <= 1.
    """

    name = "dep_lord"

    def __init__(self, params: RuleParams, xi=None, size: int = 1):
        super().__init__(params, size)
        self.xi = xi if xi is not None else default_xi(params.alpha, params.b0)
        self.wealth_at_tau = self.wealth.copy()
        self._xi_table = np.empty(0)

    def _xi_at(self, i: int) -> float:
        if i > len(self._xi_table):
            size = max(2 * len(self._xi_table), 1024, i)
            self._xi_table = np.asarray(self.xi(np.arange(1, size + 1)), dtype=float)
        return self._xi_table[i - 1]

    def _quote(self):
        level = np.minimum(self._xi_at(self.step + 1) * self.wealth_at_tau, self.wealth)
        return level, level, self.params.b0

    def _update(self, decision):
        self.wealth_at_tau = np.where(decision, self.wealth, self.wealth_at_tau)

    def fdr_bound(self, n: int) -> float:
        """sum_{i<=n} b0 xi_i (1 + log i)."""
        i = np.arange(1, n + 1)
        return math.fsum(self.params.b0 * np.asarray(self.xi(i)) * (1 + np.log(i)))


class FdxLord(Lord):
    """LORD with b0 = psi = alpha that stops once the FDX budget is spent.

    Before testing hypothesis n+1 the rule stops for good if
    alpha_{n+1} + M(n) > (gamma_fdx - alpha) / (2 (1 - alpha)),
    where M(n) = sum_{i<=n} alpha_i 1(R_i = 0).
    """

    name = "fdx_lord"

    def __init__(self, params: RuleParams, gamma_fdx: float, gamma: GammaSequence | None = None, size: int = 1):
        alpha = params.alpha
        if not alpha < gamma_fdx < 1:
            raise ConfigError(f"gamma_fdx: must lie in (alpha, 1) = ({alpha:g}, 1), got {gamma_fdx}")
        if abs(params.b0 - alpha) > 1e-15:
            raise ConfigError(f"b0: fdx_lord requires b0 = alpha = {alpha:g}, got {params.b0:g}")
        if params.w0 >= gamma_fdx - params.b0:
            raise ConfigError(
                f"w0: must be < gamma_fdx - b0 = {gamma_fdx - params.b0:g}, got {params.w0:g}"
            )
        super().__init__(params, gamma, size)
        self.gamma_fdx = float(gamma_fdx)
        self.budget = (gamma_fdx - alpha) / (2 * (1 - alpha))
        self.spent = np.zeros(self.size)

    @classmethod
    def standard(cls, alpha: float, gamma_fdx: float, gamma: GammaSequence | None = None, size: int = 1):
        """b0 = alpha and w0 = (gamma_fdx - alpha) / 2."""
        params = RuleParams(w0=(gamma_fdx - alpha) / 2, b0=alpha, alpha=alpha, mode="sfdr")
        return cls(params, gamma_fdx, gamma, size)

    def _quote(self):
        level, phi, psi = super()._quote()
        self.stopped |= level + self.spent > self.budget
        return level, phi, psi

    def _update(self, decision):
        super()._update(decision)
        self.spent = self.spent + np.where(decision, 0.0, self.last_quote[0])


RULE_IDS = ("lord", "ai", "ero_ai", "asr", "bonferroni", "dep_lord", "fdx_lord")


@dataclass
class RuleSpec:
    """A rule identifier plus its parameters; :meth:`factory` builds batched instances.

    Recognized options: ``gamma`` (a GammaSequence) for lord, bonferroni and
    fdx_lord; ``mu`` and ``literal_payoff`` for ero_ai; ``kappa`` and ``c1``
    for asr; ``gamma_fdx`` for fdx_lord; ``xi`` for dep_lord; ``cap`` for ai.
    """

    rule_id: str
    alpha: float = 0.05
    w0: float | None = 0.005
    b0: float | None = 0.045
    mode: str = "fdr"
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.rule_id not in RULE_IDS:
            raise ConfigError(f"rule: unknown identifier {self.rule_id!r} (known: {', '.join(RULE_IDS)})")

    @cached_property
    def params(self) -> RuleParams:
        if self.rule_id == "bonferroni":
            return RuleParams(w0=self.alpha, b0=self.alpha if self.b0 is None else self.b0, alpha=self.alpha, mode="none")
        if self.rule_id == "fdx_lord":
            gamma_fdx = self.options.get("gamma_fdx", 0.15)
            w0 = (gamma_fdx - self.alpha) / 2 if self.w0 is None else self.w0
            b0 = self.alpha if self.b0 is None else self.b0
            return RuleParams(w0=w0, b0=b0, alpha=self.alpha, mode="sfdr")
        if self.b0 is None:
            raise ConfigError(f"b0: required for rule {self.rule_id!r}")
        if self.w0 is None:
            raise ConfigError(f"w0: required for rule {self.rule_id!r}")
        return RuleParams(w0=self.w0, b0=self.b0, alpha=self.alpha, mode=self.mode)

    def build(self, size: int = 1) -> OnlineRule:
        opts = self.options
        params = self.params
        if self.rule_id == "lord":
            return Lord(params, opts.get("gamma"), size)
        if self.rule_id == "ai":
            return AlphaInvesting(params, size, cap=opts.get("cap", True))
        if self.rule_id == "ero_ai":
            if "mu" not in opts:
                raise ConfigError("mu: required for rule 'ero_ai'")
            return EroAlphaInvesting(params, opts["mu"], size, literal_payoff=opts.get("literal_payoff", False))
        if self.rule_id == "asr":
            return AlphaSpendingWithRewards(params, size, opts.get("kappa", 1.0), opts.get("c1", 0.1))
        if self.rule_id == "bonferroni":
            return OnlineBonferroni(params, opts.get("gamma"), size)
        if self.rule_id == "dep_lord":
            return DependentLord(params, opts.get("xi"), size)
        return FdxLord(params, opts.get("gamma_fdx", 0.15), opts.get("gamma"), size)

    def factory(self):
        """Callable ``factory(size=1)`` as expected by :func:`replay`."""
        self.params  # validate eagerly
        return lambda size=1: self.build(size)


def make_rule(rule_id: str, size: int = 1, **kwargs) -> OnlineRule:
    """Build one rule; keyword arguments are RuleSpec fields or options.

    bonferroni and fdx_lord derive w0 and b0 from alpha unless given.
    """
    fields = {k: kwargs.pop(k) for k in ("alpha", "w0", "b0", "mode") if k in kwargs}
    if rule_id in ("bonferroni", "fdx_lord"):
        fields.setdefault("w0", None)
        fields.setdefault("b0", None)
    return RuleSpec(rule_id, **fields, options=kwargs).build(size)
