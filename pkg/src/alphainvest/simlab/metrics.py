"""Per-trial error counts and Monte Carlo estimates of FDR, sFDR, mFDR, FDX and power."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import DecisionHistory


@dataclass
class TrialResult:
    """Outcome of one stream: counts, terminal FDP and its running maximum.

    ``power`` is ``nan`` when the stream has no non-nulls.
    """

    history: DecisionHistory
    truth: np.ndarray
    v_count: int
    r_count: int
    fdp: float
    max_fdp: float
    power: float

    @classmethod
    def from_decisions(cls, decisions, truth) -> "TrialResult":
        batch = TrialBatch.from_decisions(np.atleast_2d(decisions), np.atleast_2d(truth))
        return batch.trial(0, np.asarray(decisions), np.asarray(truth))


@dataclass
class TrialBatch:
    """Column arrays for many trials; the working representation of the harness."""

    V: np.ndarray
    R: np.ndarray
    S: np.ndarray
    nonnull: np.ndarray
    max_fdp: np.ndarray

    @classmethod
    def from_decisions(cls, D, H) -> "TrialBatch":
        """Counts from boolean ``(trials, n)`` decision and truth arrays."""
        D = np.asarray(D, dtype=bool)
        H = np.asarray(H, dtype=bool)
        false = D & ~H
        cum_v = np.cumsum(false, axis=1, dtype=np.int64)
        cum_r = np.cumsum(D, axis=1, dtype=np.int64)
        running = cum_v / np.maximum(cum_r, 1)
        max_fdp = running.max(axis=1) if D.shape[1] else np.zeros(len(D))
        return cls(
            V=cum_v[:, -1] if D.shape[1] else np.zeros(len(D), dtype=np.int64),
            R=cum_r[:, -1] if D.shape[1] else np.zeros(len(D), dtype=np.int64),
            S=np.count_nonzero(D & H, axis=1),
            nonnull=np.count_nonzero(H, axis=1),
            max_fdp=max_fdp,
        )

    def __len__(self):
        return len(self.V)

    @property
    def fdp(self) -> np.ndarray:
        return self.V / np.maximum(self.R, 1)

    @property
    def power(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.nonnull > 0, self.S / np.maximum(self.nonnull, 1), np.nan)

    def trial(self, i: int, decisions, truth) -> TrialResult:
        return TrialResult(
            history=DecisionHistory(decisions),
            truth=np.asarray(truth, dtype=bool),
            v_count=int(self.V[i]),
            r_count=int(self.R[i]),
            fdp=float(self.fdp[i]),
            max_fdp=float(self.max_fdp[i]),
            power=float(self.power[i]),
        )

    @classmethod
    def concat(cls, batches) -> "TrialBatch":
        batches = list(batches)
        return cls(*(np.concatenate([getattr(b, f) for b in batches]) for f in ("V", "R", "S", "nonnull", "max_fdp")))

    @classmethod
    def from_trials(cls, trials) -> "TrialBatch":
        trials = list(trials)
        return cls(
            V=np.array([t.v_count for t in trials]),
            R=np.array([t.r_count for t in trials]),
            S=np.array([int(np.count_nonzero(t.history.bits.astype(bool) & t.truth)) for t in trials]),
            nonnull=np.array([int(np.count_nonzero(t.truth)) for t in trials]),
            max_fdp=np.array([t.max_fdp for t in trials]),
        )


@dataclass
class AggregateMetrics:
    """Monte Carlo estimates with standard errors (sample sd / sqrt(trials))."""

    fdr: float
    fdr_se: float
    sfdr: float
    sfdr_se: float
    mfdr: float
    mfdr_se: float
    fdx: float
    fdx_se: float
    power: float
    power_se: float
    trials: int
    eta: float
    gamma_fdx: float


def _mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    x = x[~np.isnan(x)]
    if x.size == 0:
        return math.nan, math.nan
    if x.size == 1:
        return float(x[0]), 0.0
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def ratio_of_means(V, R, eta: float) -> tuple[float, float]:
    """mean(V) / (mean(R) + eta) with a delta-method standard error."""
    V = np.asarray(V, dtype=float)
    R = np.asarray(R, dtype=float)
    T = V.size
    mv, mr = V.mean(), R.mean()
    d = mr + eta
    if d == 0:
        return 0.0, 0.0
    ratio = mv / d
    if T < 2:
        return float(ratio), 0.0
    cov = np.cov(V, R, ddof=1)
    var = (cov[0, 0] - 2 * ratio * cov[0, 1] + ratio**2 * cov[1, 1]) / d**2
    return float(ratio), float(math.sqrt(max(var, 0.0) / T))


def aggregate(trials, eta: float, gamma_fdx: float = 0.15) -> AggregateMetrics:
    """FDR, sFDR_eta, mFDR_eta, FDX_gamma and average power over trials.

    ``trials`` is a :class:`TrialBatch` or a sequence of :class:`TrialResult`.
    Power averages only trials with at least one non-null.
    """
    batch = trials if isinstance(trials, TrialBatch) else TrialBatch.from_trials(trials)
    if len(batch) == 0:
        raise ValueError("aggregate needs at least one trial")
    fdr, fdr_se = _mean_se(batch.fdp)
    denom = batch.R + eta
    smooth = np.where(denom > 0, batch.V / np.where(denom > 0, denom, 1), 0.0)
    sfdr, sfdr_se = _mean_se(smooth)
    mfdr, mfdr_se = ratio_of_means(batch.V, batch.R, eta)
    fdx, fdx_se = _mean_se(batch.max_fdp >= gamma_fdx)
    power, power_se = _mean_se(batch.power)
    return AggregateMetrics(
        fdr, fdr_se, sfdr, sfdr_se, mfdr, mfdr_se, fdx, fdx_se, power, power_se, len(batch), eta, gamma_fdx
    )
