"""Run online rules and offline baselines over simulated streams.

Trials are processed in fixed chunks so results do not depend on the number
of worker processes: trial ``t`` always draws its stream from the generator
keyed by ``(master_seed, t)`` and chunks are merged in order.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..baselines import bh_batch, single_step
from ..core import ConfigError, run_decisions
from ..rules import RULE_IDS, RuleSpec
from .metrics import TrialBatch, TrialResult
from .streams import StreamConfig, generate_batch, generate_statistics, trial_rng

OFFLINE_IDS = ("bh", "by", "storey_bh@<lambda|alpha>", "single_step@<t>")
CHUNK = 250


@dataclass
class ProcedureSpec:
    """An online rule or offline baseline with its parameters.

    ``proc_id`` is a rule identifier (``lord``, ``ai``, ...) or one of
    ``bh``, ``by``, ``storey_bh@0.5``, ``storey_bh@alpha``, ``single_step@3``.
    ``eta`` is the smoothing constant for sFDR/mFDR; it defaults to w0/b0.
    """

    proc_id: str
    alpha: float = 0.05
    w0: float | None = 0.005
    b0: float | None = 0.045
    mode: str = "fdr"
    options: dict = field(default_factory=dict)
    label: str | None = None
    eta: float | None = None

    def __post_init__(self):
        base, _, arg = self.proc_id.partition("@")
        if base in RULE_IDS:
            if arg:
                raise ConfigError(f"rule: {base!r} takes no '@' argument")
            self.rule_spec().params  # validate before any trial runs
        elif base in ("bh", "by"):
            if arg:
                raise ConfigError(f"rule: {base!r} takes no '@' argument")
        elif base == "storey_bh":
            self.storey_lambda  # validate
        elif base == "single_step":
            self.threshold  # validate
        else:
            raise ConfigError(f"rule: unknown identifier {self.proc_id!r}")
        if self.label is None:
            self.label = self.proc_id

    @property
    def base(self) -> str:
        return self.proc_id.partition("@")[0]

    @property
    def online(self) -> bool:
        return self.base in RULE_IDS

    @property
    def storey_lambda(self) -> float:
        arg = self.proc_id.partition("@")[2]
        if arg == "alpha":
            return self.alpha
        try:
            lam = float(arg)
        except ValueError:
            raise ConfigError(f"rule: storey_bh needs '@<lambda>' or '@alpha', got {self.proc_id!r}") from None
        if not 0 < lam < 1:
            raise ConfigError(f"rule: storey lambda must lie in (0, 1), got {lam}")
        return lam

    @property
    def threshold(self) -> float:
        try:
            t = float(self.proc_id.partition("@")[2])
        except ValueError:
            raise ConfigError(f"rule: single_step needs '@<t>', got {self.proc_id!r}") from None
        if t < 0:
            raise ConfigError(f"rule: single_step threshold must be >= 0, got {t}")
        return t

    def rule_spec(self) -> RuleSpec:
        return RuleSpec(self.base, self.alpha, self.w0, self.b0, self.mode, dict(self.options))

    def smoothing(self) -> float:
        if self.eta is not None:
            return self.eta
        if self.online:
            params = self.rule_spec().params
            return params.w0 / params.b0
        if self.w0 is not None and self.b0:
            return self.w0 / self.b0
        return 0.0

    def decide(self, Z, P) -> np.ndarray:
        """Boolean ``(trials, n)`` decisions for a batch of streams."""
        if self.online:
            return run_decisions(self.rule_spec().factory(), P).astype(bool)
        if self.base == "bh":
            return bh_batch(P, self.alpha)
        if self.base == "by":
            return bh_batch(P, self.alpha, mode="by")
        if self.base == "storey_bh":
            return bh_batch(P, self.alpha, lam=self.storey_lambda, mode="storey")
        return single_step(Z, self.threshold)


def _chunk_ranges(trials: int, chunk: int = CHUNK):
    return [range(s, min(s + chunk, trials)) for s in range(0, trials, chunk)]


def _run_chunk(config: StreamConfig, procedures, master_seed: int, trials: range):
    Z, P, H = generate_batch(config, master_seed, trials)
    return [TrialBatch.from_decisions(proc.decide(Z, P), H) for proc in procedures]


def run_batch(
    config: StreamConfig,
    procedures,
    master_seed: int,
    trials: int,
    jobs: int = 1,
    chunk: int = CHUNK,
) -> dict[str, TrialBatch]:
    """Run every procedure on the same ``trials`` streams; keyed by procedure label."""
    procedures = list(procedures)
    labels = [p.label for p in procedures]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"duplicate procedure labels: {labels}")
    ranges = _chunk_ranges(trials, chunk)
    if jobs > 1 and len(ranges) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_run_chunk, [config] * len(ranges), [procedures] * len(ranges),
                                  [master_seed] * len(ranges), ranges))
    else:
        parts = [_run_chunk(config, procedures, master_seed, r) for r in ranges]
    return {label: TrialBatch.concat(part[i] for part in parts) for i, label in enumerate(labels)}


def run_trial(procedure, config: StreamConfig, seed, trial: int = 0) -> TrialResult:
    """One stream through one procedure (a ProcedureSpec or identifier).

    ``seed`` is the master seed; the stream is the one trial ``trial`` of
    :func:`run_batch` would see.
    """
    if isinstance(procedure, str):
        procedure = ProcedureSpec(procedure)
    z, p, truth = generate_statistics(config, trial_rng(seed, trial))
    decisions = procedure.decide(z[None, :], p[None, :])[0]
    return TrialResult.from_decisions(decisions, truth)


def trial_rows(label: str, config: StreamConfig, batch: TrialBatch, first_trial: int = 0):
    """Rows ``trial,rule,n,pi1,V,R,FDP,maxFDP,power`` for the trial CSV."""
    fdp, power = batch.fdp, batch.power
    for i in range(len(batch)):
        yield [
            first_trial + i,
            label,
            config.n,
            _fmt(config.pi1),
            int(batch.V[i]),
            int(batch.R[i]),
            _fmt(fdp[i]),
            _fmt(batch.max_fdp[i]),
            "" if math.isnan(power[i]) else _fmt(power[i]),
        ]


def _fmt(x) -> str:
    return format(float(x), ".10g")
