"""Offline step-up procedures and the single-step threshold rule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class OfflineResult:
    """Outcome of a step-up procedure on N p-values.

    ``rejected`` is a boolean mask in input order; ``threshold_index`` is
    i_BH (0 when nothing is rejected) and ``cutoff`` the p-value p_(i_BH)
    (0.0 when i_BH = 0).
    """

    rejected: np.ndarray
    threshold_index: int
    cutoff: float

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.rejected)


def _validate(pvalues) -> np.ndarray:
    p = np.asarray(pvalues, dtype=float)
    if p.ndim != 1:
        raise ValueError("pvalues must be one-dimensional")
    if np.any(np.isnan(p) | (p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    return p


def step_up(pvalues, thresholds) -> OfflineResult:
    """Reject every p_j <= p_(i*), i* = max{i : p_(i) <= thresholds[i-1]} (0 if none)."""
    p = _validate(pvalues)
    N = len(p)
    if N == 0:
        return OfflineResult(np.zeros(0, dtype=bool), 0, 0.0)
    ordered = np.sort(p, kind="stable")
    passing = np.flatnonzero(ordered <= np.asarray(thresholds, dtype=float))
    if len(passing) == 0:
        return OfflineResult(np.zeros(N, dtype=bool), 0, 0.0)
    i_star = int(passing[-1]) + 1
    cutoff = float(ordered[i_star - 1])
    return OfflineResult(p <= cutoff, i_star, cutoff)


def bh(pvalues, alpha: float) -> OfflineResult:
    """Benjamini-Hochberg at level alpha."""
    N = len(np.asarray(pvalues))
    return step_up(pvalues, alpha * np.arange(1, N + 1) / max(N, 1))


def storey_factor(pvalues, lam: float) -> float:
    """H(p) = (1 - lam) N / (#{p_i > lam} + 1), an estimate of 1/pi0."""
    if not 0 < lam < 1:
        raise ValueError(f"lambda must lie in (0, 1), got {lam}")
    p = _validate(pvalues)
    return (1 - lam) * len(p) / (np.count_nonzero(p > lam) + 1)


def storey_bh(pvalues, alpha: float, lam: float, factor: float | None = None) -> OfflineResult:
    """BH with thresholds alpha H(p) i / N using the Storey-lambda factor.

    ``factor`` overrides H(p) (``factor=1`` recovers plain BH).
    """
    N = len(np.asarray(pvalues))
    H = storey_factor(pvalues, lam) if factor is None else factor
    return step_up(pvalues, alpha * H * np.arange(1, N + 1) / max(N, 1))


def by_adjusted_bh(pvalues, alpha: float) -> OfflineResult:
    """BH at level alpha / (1 + 1/2 + ... + 1/N), valid under arbitrary dependence."""
    N = len(np.asarray(pvalues))
    harmonic = float(np.sum(1.0 / np.arange(1, N + 1))) if N else 1.0
    return bh(pvalues, alpha / harmonic)


def single_step(z_values, t: float) -> np.ndarray:
    """Reject H_j iff |z_j| >= t (vectorized over any shape)."""
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    return np.abs(np.asarray(z_values, dtype=float)) >= t


def bh_batch(P, alpha: float, lam: float | None = None, mode: str = "bh") -> np.ndarray:
    """Row-wise offline decisions for a ``(trials, N)`` batch.

    ``mode`` is ``bh``, ``storey`` (needs ``lam``) or ``by``.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    T, N = P.shape
    ranks = np.arange(1, N + 1)
    level = np.full(T, float(alpha))
    if mode == "storey":
        level = level * (1 - lam) * N / (np.count_nonzero(P > lam, axis=1) + 1)
    elif mode == "by":
        level = level / np.sum(1.0 / ranks)
    elif mode != "bh":
        raise ValueError(f"unknown mode {mode!r}")
    ordered = np.sort(P, axis=1)
    passing = ordered <= level[:, None] * ranks[None, :] / N
    any_pass = passing.any(axis=1)
    i_star = N - np.argmax(passing[:, ::-1], axis=1)
    cutoff = np.where(any_pass, ordered[np.arange(T), i_star - 1], -np.inf)
    return P <= cutoff[:, None]
