"""Generative models for p-value streams.

A stream is built from statistics Z_j = theta_j + eps_j, with theta_j = 0 for
true nulls.  Non-null effects follow one of the alternatives below; non-null
noise may share a common factor; hypotheses may be laid out at random, in a
block, on a lattice, or re-ordered by noisy side information.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.special import ndtr

from ..core import ConfigError
from ..gamma import _chunks

ALTERNATIVES = ("gaussian", "exponential", "simple", "point", "zero")
PLACEMENTS = ("iid_mixture", "prefix", "suffix", "lattice", "ordered_side_info")
DEPENDENCE = ("independent", "equicorrelated_nonnull")


@dataclass(frozen=True)
class StreamConfig:
    """Mixture model, placement, dependence and sidedness of a stream.

    ``effect`` parametrizes the alternative and defaults by kind:
    gaussian -> prior variance 2 log n; exponential -> mean sqrt(2 log n);
    simple -> shift sqrt(log n); point -> required theta.
    ``placement_param`` is k for prefix/suffix (default round(pi1 n)), m0
    for lattice and the side-information noise variance for
    ordered_side_info.  ``sided`` defaults to 2 for gaussian and 1 otherwise.
    """

    n: int
    pi1: float = 0.0
    alternative: str = "gaussian"
    effect: float | None = None
    placement: str = "iid_mixture"
    placement_param: float | None = None
    dependence: str = "independent"
    rho: float = 0.0
    sided: int | None = None

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ConfigError(f"n: must be a positive integer, got {self.n}")
        if not 0 <= self.pi1 <= 1:
            raise ConfigError(f"pi1: must lie in [0, 1], got {self.pi1}")
        if self.alternative not in ALTERNATIVES:
            raise ConfigError(f"alternative: unknown kind {self.alternative!r}")
        if self.placement not in PLACEMENTS:
            raise ConfigError(f"placement: unknown kind {self.placement!r}")
        if self.dependence not in DEPENDENCE:
            raise ConfigError(f"dependence: unknown kind {self.dependence!r}")
        if self.sided not in (None, 1, 2):
            raise ConfigError(f"sided: must be 1 or 2, got {self.sided}")
        if self.alternative == "point" and self.effect is None:
            raise ConfigError("effect: required for the point alternative")
        if self.alternative in ("gaussian", "exponential") and self.effect is not None and self.effect <= 0:
            raise ConfigError(f"effect: must be > 0 for {self.alternative}")
        if self.dependence == "equicorrelated_nonnull" and not 0 <= self.rho < 1:
            raise ConfigError(f"rho: must lie in [0, 1), got {self.rho}")
        if self.placement == "lattice":
            if self.dependence != "independent":
                raise ConfigError("placement: lattice streams take no dependence model")
            if self.placement_param is None or self.placement_param < 1:
                raise ConfigError("placement_param: lattice needs m0 >= 1")
        if self.placement in ("prefix", "suffix") and self.placement_param is not None:
            if not 0 <= self.placement_param <= self.n:
                raise ConfigError(f"placement_param: block size must lie in [0, n], got {self.placement_param}")
        if self.placement == "ordered_side_info":
            if self.placement_param is None or self.placement_param <= 0:
                raise ConfigError("placement_param: ordered_side_info needs a noise variance > 0")

    @property
    def effect_value(self) -> float:
        if self.effect is not None:
            return float(self.effect)
        log_n = math.log(max(self.n, 2))
        return {
            "gaussian": 2 * log_n,
            "exponential": math.sqrt(2 * log_n),
            "simple": math.sqrt(log_n),
            "point": float("nan"),
            "zero": 0.0,
        }[self.alternative]

    @property
    def sides(self) -> int:
        if self.sided is not None:
            return self.sided
        return 2 if self.alternative == "gaussian" else 1

    @property
    def block_size(self) -> int:
        if self.placement_param is not None:
            return int(self.placement_param)
        return int(round(self.pi1 * self.n))

    def with_(self, **changes) -> "StreamConfig":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return asdict(self)


def _truth(config: StreamConfig, rng) -> np.ndarray:
    n = config.n
    if config.placement in ("iid_mixture", "ordered_side_info"):
        return rng.random(n) < config.pi1
    truth = np.zeros(n, dtype=bool)
    if config.placement == "prefix":
        truth[: config.block_size] = True
    elif config.placement == "suffix":
        truth[n - config.block_size :] = True
    else:
        m0 = int(config.placement_param)
        truth[m0 - 1 :: m0] = True
    return truth


def _effects(config: StreamConfig, k: int, rng) -> np.ndarray:
    kind, value = config.alternative, config.effect_value
    if kind == "gaussian":
        return rng.normal(0.0, math.sqrt(value), k)
    if kind == "exponential":
        return rng.exponential(value, k)
    if kind in ("simple", "point"):
        return np.full(k, value)
    return np.zeros(k)


def pvalues_from_z(z, sided: int):
    """One-sided Phi(-z) or two-sided 2 Phi(-|z|)."""
    z = np.asarray(z, dtype=float)
    return ndtr(-z) if sided == 1 else 2 * ndtr(-np.abs(z))


def generate_statistics(config: StreamConfig, rng: np.random.Generator):
    """Draw one stream; returns ``(z, pvalues, truth)``.

    Lattice non-nulls get z = +inf and p = 0.
    """
    n = config.n
    truth = _truth(config, rng)
    k = int(truth.sum())
    theta = np.zeros(n)
    theta[truth] = _effects(config, k, rng)
    noise = rng.standard_normal(n)
    if config.dependence == "equicorrelated_nonnull" and k:
        common = rng.standard_normal()
        noise[truth] = math.sqrt(config.rho) * common + math.sqrt(1 - config.rho) * noise[truth]
    z = theta + noise
    if config.placement == "lattice":
        z[truth] = np.inf
    if config.placement == "ordered_side_info":
        side = theta + math.sqrt(config.placement_param) * rng.standard_normal(n)
        key = side if config.sides == 1 else np.abs(side)
        order = np.argsort(-key, kind="stable")
        z, truth = z[order], truth[order]
    p = pvalues_from_z(z, config.sides)
    return z, p, truth


def trial_rng(master_seed: int, trial: int) -> np.random.Generator:
    """PCG64 generator for one trial, keyed by (master_seed, trial index)."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(trial)]))


def generate_stream(config: StreamConfig, seed) -> tuple[np.ndarray, np.ndarray]:
    """``(pvalues, truth)`` for one stream, deterministic in (config, seed).

    ``seed`` is an int or a ``(master_seed, trial)`` pair.
    """
    rng = trial_rng(*seed) if isinstance(seed, tuple) else np.random.default_rng(seed)
    _, p, truth = generate_statistics(config, rng)
    return p, truth


def generate_batch(config: StreamConfig, master_seed: int, trials):
    """Stack streams for the given trial indices: ``(Z, P, H)`` each of shape (T, n)."""
    trials = list(trials)
    Z = np.empty((len(trials), config.n))
    P = np.empty_like(Z)
    H = np.empty(Z.shape, dtype=bool)
    for row, trial in enumerate(trials):
        Z[row], P[row], H[row] = generate_statistics(config, trial_rng(master_seed, trial))
    return Z, P, H


def empirical_pvalue(null_scores, q) -> float:
    """(1/n0) #{i : q_i <= q} over a batch of null scores (any order)."""
    scores = np.sort(np.asarray(null_scores, dtype=float))
    if scores.size == 0:
        raise ValueError("null_scores must be non-empty")
    return float(np.searchsorted(scores, q, side="right")) / scores.size


def simulate_renewal(mixture, gamma, b0: float, samples: int, rng, horizon: int = 10**7):
    """Inter-discovery times of LORD with the wealth reset to b0 at each discovery.

    Draws ``samples`` i.i.d. copies of Delta, where the l-th test after a reset
    is at level b0 gamma_l and rejects with probability G(b0 gamma_l).  Times
    beyond ``horizon`` are returned as ``inf``.
    """
    u = rng.random(samples)
    out = np.full(samples, np.inf)
    pending = np.arange(samples)
    log_surv = 0.0
    for start, stop in _chunks(horizon):
        q = mixture.cdf(b0 * gamma(np.arange(start, stop)))
        with np.errstate(divide="ignore"):
            surv = np.exp(log_surv + np.cumsum(np.log1p(-q)))
        # Delta = min{m : S(m) < u}, with S(m) = P(Delta > m) decreasing
        idx = np.searchsorted(-surv, -u[pending], side="right")
        hit = idx < len(surv)
        out[pending[hit]] = start + idx[hit]
        pending = pending[~hit]
        log_surv = float(np.log(surv[-1])) if surv[-1] > 0 else -np.inf
        if pending.size == 0 or surv[-1] == 0:
            break
    return out
