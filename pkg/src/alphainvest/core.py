"""Generalized alpha-investing: rule contract, wealth ledger and validators.

A rule is a state machine over the decision history R_1, ..., R_{j-1}.  Before
step j it quotes a test level alpha_j, a pay-out phi_j and a pay-off psi_j;
after the decision it updates the wealth

    W(j) = W(j-1) - phi_j + R_j * psi_j

Every rule in this package is vectorized over independent streams: the state
arrays have one entry per stream, so ``size=1`` is the ordinary single-stream
case and ``size=T`` advances T Monte Carlo trials in lock-step.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, TextIO

import numpy as np

TOL = 1e-12


class ConfigError(ValueError):
    """Invalid parameters or configuration."""


class NumericError(ArithmeticError):
    """A numerical routine failed to bracket or converge."""


class ContractViolation(RuntimeError):
    """A rule produced a state that breaks the alpha-investing contract."""


@dataclass(frozen=True)
class RuleParams:
    """Wealth parameters shared by all rules.

    ``mode`` selects which regime is checked: ``"fdr"`` requires
    ``w0 + b0 <= alpha``, ``"sfdr"`` (also used for mFDR) requires
    ``b0 <= alpha`` and ``"none"`` skips the regime check.
    """

    w0: float
    b0: float
    alpha: float
    mode: str = "fdr"

    def __post_init__(self):
        for name in ("w0", "b0", "alpha"):
            value = getattr(self, name)
            if value is None or not np.isfinite(value):
                raise ConfigError(f"{name}: must be a finite number, got {value!r}")
        if self.w0 < 0:
            raise ConfigError(f"w0: must be >= 0, got {self.w0}")
        if not 0 < self.b0 <= 1:
            raise ConfigError(f"b0: must lie in (0, 1], got {self.b0}")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha: must lie in (0, 1), got {self.alpha}")
        if self.mode == "fdr":
            if self.w0 + self.b0 > self.alpha + TOL:
                raise ConfigError(
                    f"w0 + b0 = {self.w0 + self.b0:g} exceeds alpha = {self.alpha:g} (FDR mode)"
                )
        elif self.mode == "sfdr":
            if self.b0 > self.alpha + TOL:
                raise ConfigError(f"b0 = {self.b0:g} exceeds alpha = {self.alpha:g} (sFDR mode)")
        elif self.mode != "none":
            raise ConfigError(f"mode: unknown value {self.mode!r}")


@dataclass
class DecisionHistory:
    """Binary rejection sequence; 2-D when it holds a batch of streams."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.size and not np.all((bits == 0) | (bits == 1)):
            raise ValueError("decision bits must be 0 or 1")
        self.bits = bits.astype(np.int8)

    def __len__(self):
        return self.bits.shape[-1]

    @property
    def rejections(self):
        """R(n) = sum of the bits (per stream)."""
        return self.bits.sum(axis=-1)


@dataclass
class WealthLedger:
    """Per-step trace of W(j), alpha_j, phi_j, psi_j and R_j.

    ``wealth`` has one more entry than the other traces: ``wealth[..., 0]`` is
    W(0) = w0 and ``wealth[..., j]`` is W(j).
    """

    w0: float
    b0: float
    wealth: np.ndarray
    alpha: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    decisions: np.ndarray

    @property
    def n(self):
        return self.alpha.shape[-1]

    def to_csv(self, out: TextIO | None = None) -> str:
        """Write ``j,alpha,phi,psi,R,W`` rows (single stream only).

        Floats are printed with 17 significant digits so the file round-trips.
        """
        if self.alpha.ndim != 1:
            raise ValueError("CSV export needs a single-stream ledger")
        buf = out if out is not None else io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["j", "alpha", "phi", "psi", "R", "W"])
        writer.writerow([0, "", "", "", "", _g17(self.wealth[0])])
        for j in range(self.n):
            writer.writerow([
                j + 1,
                _g17(self.alpha[j]),
                _g17(self.phi[j]),
                _g17(self.psi[j]),
                int(self.decisions[j]),
                _g17(self.wealth[j + 1]),
            ])
        return buf.getvalue() if out is None else ""

    @classmethod
    def from_csv(cls, text: str, b0: float) -> "WealthLedger":
        rows = list(csv.DictReader(io.StringIO(text)))
        w0 = float(rows[0]["W"])
        body = rows[1:]
        col = lambda k: np.array([float(r[k]) for r in body])  # noqa: E731
        return cls(
            w0=w0,
            b0=b0,
            wealth=np.concatenate([[w0], col("W")]),
            alpha=col("alpha"),
            phi=col("phi"),
            psi=col("psi"),
            decisions=col("R").astype(np.int8),
        )


def _g17(x) -> str:
    return format(float(x), ".17g")


@dataclass
class StepOutcome:
    level: np.ndarray | float
    decision: np.ndarray | bool
    wealth_after: np.ndarray | float
    stopped: np.ndarray | bool


@dataclass(frozen=True)
class Violation:
    """One failed condition.  ``index`` is the 1-based step j."""

    index: int
    condition: str
    lhs: float
    rhs: float
    stream: int | None = None


class OnlineRule:
    """Base class for generalized alpha-investing rules.

    Subclasses implement :meth:`_quote`, returning ``(alpha, phi, psi)`` for
    the next step from their internal state, and :meth:`_update`, which
    advances that state after the decision.  The wealth recurrence itself
    lives here so every rule shares one update path.
    """

    name = "rule"
    strict = True
    # Whether the levels are claimed non-decreasing in the decision history;
    # the FDR and sFDR guarantees for generalized alpha-investing rely on it.
    monotone = True

    def __init__(self, params: RuleParams, size: int = 1):
        self.params = params
        self.size = int(size)
        self.step = 0
        self.wealth = np.full(self.size, float(params.w0))
        self.stopped = np.zeros(self.size, dtype=bool)
        self._pending = None

    def _quote(self):
        raise NotImplementedError

    def _update(self, decision: np.ndarray) -> None:
        pass

    def quote(self):
        """Return ``(alpha_j, phi_j, psi_j)`` for the upcoming step j."""
        if self._pending is None:
            alpha, phi, psi = (np.broadcast_to(np.asarray(v, dtype=float), (self.size,)) for v in self._quote())
            # condition G2: no wealth, no test (and no reward for a p = 0 tie
            # at level zero); stopped rules test nothing
            dead = self.stopped | (self.wealth <= TOL)
            alpha = np.where(dead, 0.0, alpha)
            phi = np.where(dead, 0.0, phi)
            psi = np.where(dead, 0.0, psi)
            self._pending = (alpha, phi, psi)
        return self._pending

    def next_level(self):
        return self.quote()[0]

    def next_payout(self):
        return self.quote()[1]

    def next_payoff(self):
        return self.quote()[2]

    def observe(self, decision) -> None:
        """Apply decision R_j and move to step j + 1."""
        quoted = self.quote()
        _, phi, psi = quoted
        decision = np.broadcast_to(np.asarray(decision, dtype=bool), (self.size,))
        wealth = self.wealth - phi + decision * psi
        if self.strict and np.any(wealth < -TOL):
            bad = int(np.argmax(wealth < -TOL))
            raise ContractViolation(
                f"{self.name}: wealth {wealth[bad]:.3e} < 0 after step {self.step + 1}"
            )
        self.wealth = wealth
        self.step += 1
        self._pending = None
        self.last_quote = quoted
        self._update(decision)


RuleFactory = Callable[..., OnlineRule]


def _check_pvalues(p):
    p = np.asarray(p, dtype=float)
    bad = np.isnan(p) | (p < 0) | (p > 1)
    return p, bad


def advance(rule: OnlineRule, p) -> StepOutcome:
    """Test the next hypothesis at the rule's current level.

    Rejects iff ``p <= alpha_j`` (ties reject).  Stopped rules always accept.
    """
    p, bad = _check_pvalues(p)
    if np.any(bad):
        raise ValueError(f"p-value must lie in [0, 1], got {p[bad] if p.ndim else p}")
    level = rule.next_level()
    stopped = rule.stopped.copy()
    decision = (p <= level) & ~stopped
    rule.observe(decision)
    if p.ndim == 0 and rule.size == 1:
        return StepOutcome(float(level[0]), bool(decision[0]), float(rule.wealth[0]), bool(stopped[0]))
    return StepOutcome(level.copy(), decision, rule.wealth.copy(), stopped)


def replay(rule_factory: RuleFactory, pvalues, record: bool = True, strict: bool = True):
    """Run a fresh rule over a p-value stream.

    ``pvalues`` is 1-D for one stream or 2-D ``(streams, n)`` for a batch.
    Returns ``(DecisionHistory, WealthLedger)``; with ``record=False`` the
    ledger is ``None`` and only decisions are kept.  ``strict=False`` lets a
    broken rule drive its wealth negative so validators can see the breach.
    """
    P = np.asarray(pvalues, dtype=float)
    single = P.ndim == 1
    P2 = P.reshape(1, -1) if single else P
    _, bad = _check_pvalues(P2)
    if np.any(bad):
        stream, j = np.argwhere(bad)[0]
        raise ValueError(f"invalid p-value {P2[stream, j]!r} at index {j}" + ("" if single else f" of stream {stream}"))
    T, n = P2.shape
    rule = rule_factory(size=T)
    rule.strict = strict
    decisions = np.zeros((T, n), dtype=np.int8)
    if record:
        wealth = np.empty((T, n + 1))
        wealth[:, 0] = rule.wealth
        alpha = np.empty((T, n))
        phi = np.empty((T, n))
        psi = np.empty((T, n))
    for j in range(n):
        a, f, s = rule.quote()
        d = (P2[:, j] <= a) & ~rule.stopped
        if record:
            alpha[:, j], phi[:, j], psi[:, j] = a, f, s
        try:
            rule.observe(d)
        except ContractViolation as exc:
            raise ContractViolation(f"index {j}: {exc}") from exc
        decisions[:, j] = d
        if record:
            wealth[:, j + 1] = rule.wealth
    if single:
        decisions = decisions[0]
    history = DecisionHistory(decisions)
    if not record:
        return history, None
    if single:
        wealth, alpha, phi, psi = wealth[0], alpha[0], phi[0], psi[0]
    ledger = WealthLedger(rule.params.w0, rule.params.b0, wealth, alpha, phi, psi, decisions)
    return history, ledger


def levels_along(rule_factory: RuleFactory, histories) -> np.ndarray:
    """Test levels alpha_j(R_1..R_{j-1}) along forced decision histories.

    ``histories`` has shape ``(streams, n - 1)``; the result has shape
    ``(streams, n)`` with column j - 1 holding alpha_j.
    """
    H = np.atleast_2d(np.asarray(histories, dtype=bool))
    T, k = H.shape
    rule = rule_factory(size=T)
    out = np.empty((T, k + 1))
    for j in range(k):
        out[:, j] = rule.next_level()
        rule.observe(H[:, j])
    out[:, k] = rule.next_level()
    return out


def _violations(mask, condition, lhs, rhs) -> list[Violation]:
    found = []
    for idx in np.argwhere(mask):
        idx = tuple(int(i) for i in idx)
        stream, j = (idx[0], idx[1]) if len(idx) == 2 else (None, idx[0])
        found.append(Violation(j + 1, condition, float(lhs[idx]), float(rhs[idx]), stream))
    return found


def check_g1(ledger: WealthLedger) -> list[Violation]:
    """Check psi <= phi + b0, psi <= phi/alpha + b0 - 1 and phi <= W(j-1).

    The second inequality is skipped where alpha_j = 0.
    """
    b0 = ledger.b0
    alpha, phi, psi = ledger.alpha, ledger.phi, ledger.psi
    prev = ledger.wealth[..., :-1]
    found = []
    rhs_a = phi + b0
    found += _violations(psi > rhs_a + TOL, "A1a", psi, rhs_a)
    with np.errstate(divide="ignore", invalid="ignore"):
        rhs_b = np.where(alpha > 0, phi / np.where(alpha > 0, alpha, 1.0) + b0 - 1, np.inf)
    found += _violations(psi > rhs_b + TOL, "A1b", psi, rhs_b)
    found += _violations(phi > prev + TOL, "Nonneg", phi, prev)
    return sorted(found, key=lambda v: (v.stream or 0, v.index, v.condition))


def check_g2(ledger: WealthLedger) -> list[Violation]:
    """Check that W(j-1) = 0 (within TOL) forces alpha_j = 0."""
    prev = ledger.wealth[..., :-1]
    return _violations((prev <= TOL) & (ledger.alpha != 0), "G2", ledger.alpha, prev)


def check_monotone(rule_factory: RuleFactory, horizon: int, sample_pairs: int, seed) -> list[Violation]:
    """Sample pairs x <= y (coordinatewise) and compare alpha_j(x), alpha_j(y).

    Each sampled pair of length ``horizon - 1`` histories is compared at every
    prefix length, so all steps j <= horizon are covered.  A violation records
    the pair number as ``stream``, ``lhs = alpha_j(x)`` and ``rhs = alpha_j(y)``.
    """
    if horizon < 2:
        raise ValueError("horizon must be >= 2")
    rng = np.random.default_rng(seed)
    k = horizon - 1
    density = rng.uniform(0.0, 0.6, size=(sample_pairs, 1))
    y = rng.random((sample_pairs, k)) < density
    x = y & (rng.random((sample_pairs, k)) < rng.uniform(0.0, 1.0, size=(sample_pairs, 1)))
    levels = levels_along(rule_factory, np.concatenate([x, y]))
    ax, ay = levels[:sample_pairs], levels[sample_pairs:]
    return _violations(ax > ay + TOL, "monotone", ax, ay)


def check_monotone_exhaustive(rule_factory: RuleFactory, horizon: int) -> list[Violation]:
    """Compare alpha_j over every pair x <= y in {0,1}^(j-1), for all j <= horizon."""
    k = horizon - 1
    codes = np.arange(2**k)
    bits = (codes[:, None] >> np.arange(k)) & 1
    levels = levels_along(rule_factory, bits)
    found = []
    for length in range(k + 1):
        m = 2**length
        a = levels[:m, length]
        sub = codes[:m]
        below = (sub[:, None] & sub[None, :]) == sub[:, None]
        bad = below & (a[:, None] > a[None, :] + TOL)
        for xi, yi in np.argwhere(bad):
            found.append(Violation(length + 1, f"monotone x={int(xi)} y={int(yi)}", float(a[xi]), float(a[yi])))
    return found


def check_ledger_recurrence(ledger: WealthLedger) -> float:
    """Largest |W(j) - (W(j-1) - phi_j + R_j psi_j)| over the ledger."""
    W = ledger.wealth
    expected = W[..., :-1] - ledger.phi + ledger.decisions * ledger.psi
    diff = np.abs(W[..., 1:] - expected)
    return float(diff.max()) if diff.size else 0.0


def run_decisions(rule_factory: RuleFactory, pvalues) -> np.ndarray:
    """Decisions only, for a ``(streams, n)`` batch; the Monte Carlo fast path."""
    history, _ = replay(rule_factory, pvalues, record=False)
    return history.bits
