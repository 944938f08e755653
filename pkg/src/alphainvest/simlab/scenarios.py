"""Named desk-scale experiments with the properties each is expected to show."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

from ..core import ConfigError
from ..rules import DependentLord
from .harness import ProcedureSpec, run_batch
from .metrics import AggregateMetrics, TrialBatch, aggregate
from .streams import StreamConfig

DEFAULT_SEED = 20160601


@dataclass
class Setting:
    """One stream model and the procedures run on it."""

    config: StreamConfig
    procedures: list[ProcedureSpec]
    label: str = ""

    def row_label(self, proc: ProcedureSpec) -> str:
        return f"{proc.label}[{self.label}]" if self.label else proc.label


@dataclass
class AggregateRow:
    rule: str
    procedure: ProcedureSpec
    setting: str
    pi1: float
    metrics: AggregateMetrics


@dataclass
class CheckOutcome:
    name: str
    passed: bool
    detail: str


@dataclass
class Check:
    """A named predicate over a scenario's aggregate rows."""

    name: str
    predicate: Callable[["ScenarioResult"], tuple[bool, str]]

    def __call__(self, result: "ScenarioResult") -> CheckOutcome:
        passed, detail = self.predicate(result)
        return CheckOutcome(self.name, bool(passed), detail)


@dataclass
class ScenarioResult:
    scenario: "Scenario"
    rows: list[AggregateRow]
    batches: dict[tuple[str, str], TrialBatch]

    def row(self, rule: str, pi1: float | None = None, setting: str | None = None) -> AggregateRow:
        for r in self.rows:
            if r.procedure.label != rule:
                continue
            if pi1 is not None and not math.isclose(r.pi1, pi1):
                continue
            if setting is not None and r.setting != setting:
                continue
            return r
        raise KeyError((rule, pi1, setting))

    def checks(self) -> list[CheckOutcome]:
        return [check(self) for check in self.scenario.checks]


@dataclass
class Scenario:
    name: str
    description: str
    settings: list[Setting]
    trials: int
    gamma_fdx: float = 0.15
    checks: list[Check] = field(default_factory=list)

    def run(self, trials: int | None = None, seed: int = DEFAULT_SEED, jobs: int = 1, on_setting=None) -> ScenarioResult:
        trials = self.trials if trials is None else trials
        if trials < 2:
            raise ConfigError(f"trials: need at least 2, got {trials}")
        rows, batches = [], {}
        for setting in self.settings:
            results = run_batch(setting.config, setting.procedures, seed, trials, jobs=jobs)
            for proc in setting.procedures:
                batch = results[proc.label]
                batches[(setting.label, proc.label)] = batch
                metrics = aggregate(batch, proc.smoothing(), self.gamma_fdx)
                rows.append(AggregateRow(setting.row_label(proc), proc, setting.label, setting.config.pi1, metrics))
            if on_setting is not None:
                on_setting(setting, results)
        return ScenarioResult(self, rows, batches)


def _fmt(x) -> str:
    return f"{x:.4g}"


def _fdr_controlled(rules, level_of: Callable[[AggregateRow], float] = lambda r: r.procedure.alpha) -> Check:
    def predicate(result):
        bad = []
        for r in result.rows:
            if r.procedure.label in rules:
                m = r.metrics
                if m.fdr > level_of(r) + 3 * m.fdr_se:
                    bad.append(f"{r.rule}@pi1={r.pi1}: FDR {_fmt(m.fdr)} > {_fmt(level_of(r))} + 3*{_fmt(m.fdr_se)}")
        return not bad, "; ".join(bad) or "all within level + 3 se"

    return Check(f"FDR <= alpha + 3 se for {', '.join(rules)}", predicate)


def _sfdr_controlled(rules) -> Check:
    def predicate(result):
        bad = []
        for r in result.rows:
            if r.procedure.label in rules:
                m = r.metrics
                b0 = r.procedure.rule_spec().params.b0
                if m.sfdr > b0 + 3 * m.sfdr_se:
                    bad.append(f"{r.rule}@pi1={r.pi1}: sFDR {_fmt(m.sfdr)} > {_fmt(b0)} + 3*{_fmt(m.sfdr_se)}")
        return not bad, "; ".join(bad) or "all within b0 + 3 se"

    return Check(f"sFDR_(w0/b0) <= b0 + 3 se for {', '.join(rules)}", predicate)


def _fig1(alternative: str, pi1s, n: int, trials: int) -> Scenario:
    mu = math.sqrt(math.log(n))
    procs = [
        ProcedureSpec("lord"),
        ProcedureSpec("ai"),
        ProcedureSpec("ero_ai", options={"mu": mu}),
        ProcedureSpec("bonferroni"),
        ProcedureSpec("storey_bh@0.5"),
        ProcedureSpec("storey_bh@alpha"),
    ]
    settings = [Setting(StreamConfig(n, pi1, alternative), procs) for pi1 in pi1s]
    online = ["lord", "ai", "ero_ai", "bonferroni"]

    def bonferroni_conservative(result):
        bad = [
            f"pi1={r.pi1}: {_fmt(r.metrics.fdr)}"
            for r in result.rows
            if r.procedure.label == "bonferroni" and r.metrics.fdr > 0.5 * r.procedure.alpha
        ]
        return not bad, "; ".join(bad) or "Bonferroni FDR <= alpha/2 everywhere"

    def bonferroni_weaker(result):
        pi1 = min(pi1s, key=lambda p: abs(p - 0.1))
        bon, lord = result.row("bonferroni", pi1).metrics, result.row("lord", pi1).metrics
        return bon.power < lord.power, f"pi1={pi1}: Bonferroni {_fmt(bon.power)} vs LORD {_fmt(lord.power)}"

    return Scenario(
        f"fig1_{alternative}",
        f"FDR and power vs pi1, {alternative} alternative, n={n}, alpha=0.05",
        settings,
        trials,
        checks=[
            _fdr_controlled(online),
            _sfdr_controlled(["lord", "ai", "ero_ai"]),
            Check("Bonferroni FDR <= alpha/2", bonferroni_conservative),
            Check("Bonferroni power < LORD power at pi1 = 0.1", bonferroni_weaker),
        ],
    )


def _fig2(alphas, n: int, trials: int) -> Scenario:
    settings = []
    for a in alphas:
        kw = dict(alpha=a, w0=0.1 * a, b0=0.9 * a)
        procs = [
            ProcedureSpec("lord", **kw),
            ProcedureSpec("ai", **kw),
            ProcedureSpec("bonferroni", alpha=a),
            ProcedureSpec("storey_bh@0.5", alpha=a),
        ]
        settings.append(Setting(StreamConfig(n, 0.2, "exponential"), procs, label=f"alpha={a:g}"))
    return Scenario(
        "fig2_alpha_sweep",
        f"FDR achieved vs target alpha, pi1=0.2, exponential alternative, b0=0.9 alpha, w0=0.1 alpha, n={n}",
        settings,
        trials,
        checks=[_fdr_controlled(["lord", "ai", "bonferroni"])],
    )


def _fig3(pi1s, n: int, trials: int) -> Scenario:
    settings = []
    for pi1 in pi1s:
        base = StreamConfig(n, pi1, "exponential")
        settings.append(Setting(base, [ProcedureSpec("lord"), ProcedureSpec("storey_bh@0.5")], "unordered"))
        for var in (1.0, 0.5):
            cfg = base.with_(placement="ordered_side_info", placement_param=var)
            settings.append(Setting(cfg, [ProcedureSpec("lord")], f"ordered_sigma2={var:g}"))

    def ordering_helps(result):
        pi1 = min(pi1s)
        ordered = result.row("lord", pi1, "ordered_sigma2=0.5").metrics.power
        unordered = result.row("lord", pi1, "unordered").metrics.power
        return ordered - unordered >= 0.10, f"pi1={pi1}: ordered {_fmt(ordered)} vs unordered {_fmt(unordered)}"

    return Scenario(
        "fig3_ordered",
        f"LORD with hypotheses ordered by noisy side information, exponential alternative, n={n}",
        settings,
        trials,
        checks=[_fdr_controlled(["lord"]), Check("ordering (sigma2=1/2) raises LORD power by >= 0.10", ordering_helps)],
    )


TABLE1 = {  # pi1: (FDX, FDR, power) for the stopped LORD rule
    0.005: (0.028, 0.006, 0.666),
    0.01: (0.004, 0.005, 0.699),
    0.02: (0.000, 0.005, 0.679),
}


def _fdx_table1(pi1s, n: int, trials: int) -> Scenario:
    proc = ProcedureSpec("fdx_lord", alpha=0.05, w0=None, b0=None, options={"gamma_fdx": 0.15})
    settings = [Setting(StreamConfig(n, pi1, "point", 3.0, "prefix", sided=1), [proc]) for pi1 in pi1s]

    def fdx_controlled(result):
        bad = [
            f"pi1={r.pi1}: {_fmt(r.metrics.fdx)}"
            for r in result.rows
            if r.metrics.fdx > r.procedure.alpha + 3 * r.metrics.fdx_se
        ]
        return not bad, "; ".join(bad) or "FDX <= alpha + 3 se everywhere"

    def matches_table(result):
        ok, parts = True, []
        for r in result.rows:
            if r.pi1 not in TABLE1:
                continue
            fdx, fdr, power = TABLE1[r.pi1]
            m = r.metrics
            good = abs(m.fdx - fdx) <= 0.02 and abs(m.fdr - fdr) <= 0.005 and abs(m.power - power) <= 0.05
            ok &= good
            parts.append(
                f"pi1={r.pi1}: FDX {_fmt(m.fdx)} ({fdx}), FDR {_fmt(m.fdr)} ({fdr}), power {_fmt(m.power)} ({power})"
            )
        return ok, "; ".join(parts)

    return Scenario(
        "fdx_table1",
        f"Stopped LORD controlling FDX at gamma=0.15, alpha=0.05; first pi1*n of n={n} non-null with theta=3",
        settings,
        trials,
        checks=[Check("FDX_0.15 <= alpha + 3 se", fdx_controlled), Check("FDX, FDR, power match the published table", matches_table)],
    )


def _single_step(thresholds, n: int, n0: int, trials: int) -> Scenario:
    cfg = StreamConfig(n, (n - n0) / n, "point", 2.0, "suffix", n - n0, "equicorrelated_nonnull", 0.9, sided=2)
    procs = [ProcedureSpec(f"single_step@{t:g}", eta=0.0) for t in thresholds]

    def diverge(result):
        m = result.row("single_step@3").metrics
        return m.mfdr <= 0.25 and m.fdr >= 0.45, f"t=3: mFDR {_fmt(m.mfdr)}, FDR {_fmt(m.fdr)}"

    return Scenario(
        "appA_single_step",
        f"Single-step |z| >= t on n={n}, last {n - n0} non-null (theta=2, equicorrelated rho=0.9)",
        [Setting(cfg, procs)],
        trials,
        checks=[Check("t=3: mFDR <= 0.25 while FDR >= 0.45", diverge)],
    )


def _ai_mfdr(pi1s, n: int, trials: int) -> Scenario:
    settings = []
    for pi1 in pi1s:
        cfg = StreamConfig(n, pi1, "point", 4.0, "suffix", None, "equicorrelated_nonnull", 0.9, sided=2)
        settings.append(Setting(cfg, [ProcedureSpec("ai"), ProcedureSpec("dep_lord")]))

    def dep_bound(result):
        bad = []
        for r in result.rows:
            if r.procedure.label != "dep_lord":
                continue
            rule = r.procedure.rule_spec().build()
            assert isinstance(rule, DependentLord)
            bound = rule.fdr_bound(n)
            if r.metrics.fdr > bound + 3 * r.metrics.fdr_se:
                bad.append(f"pi1={r.pi1}: FDR {_fmt(r.metrics.fdr)} > {_fmt(bound)}")
        return not bad, "; ".join(bad) or "dep_lord FDR within its dependence bound"

    return Scenario(
        "appA_ai_mfdr",
        f"Alpha-investing FDR vs mFDR with a clustered equicorrelated non-null block (theta=4, rho=0.9), n={n}",
        settings,
        trials,
        checks=[_fdr_controlled(["ai"]), Check("dep_lord FDR <= sum b0 xi_i (1 + log i) + 3 se", dep_bound)],
    )


def _lattice(m0: int, n: int, trials: int) -> Scenario:
    proc = ProcedureSpec("lord")
    cfg = StreamConfig(n, 0.0, "zero", None, "lattice", m0)

    def bracket(result):
        m = result.row("lord").metrics
        b0, w0 = proc.b0, proc.w0
        return 0.5 * b0 <= m.fdr <= b0 + w0, f"FDR {_fmt(m.fdr)} in [{_fmt(0.5 * b0)}, {_fmt(b0 + w0)}]"

    return Scenario(
        "appC_lower_bound",
        f"LORD on a lattice stream: non-nulls with p=0 at multiples of m0={m0}, n={n}",
        [Setting(cfg, [proc])],
        trials,
        checks=[Check("FDR in [b0/2, b0 + w0]", bracket)],
    )


SCENARIOS = (
    "fig1_gaussian",
    "fig1_exponential",
    "fig1_simple",
    "fig2_alpha_sweep",
    "fig3_ordered",
    "fdx_table1",
    "appA_single_step",
    "appA_ai_mfdr",
    "appC_lower_bound",
)


def scenario(name: str, pi1s=None, n: int | None = None) -> Scenario:
    """Build a named scenario; ``pi1s`` and ``n`` override the grid and stream length."""
    if name.startswith("fig1_") and name in SCENARIOS:
        return _fig1(name[5:], pi1s or (0.01, 0.1, 0.3), n or 3000, 2000)
    if name == "fig2_alpha_sweep":
        return _fig2((0.02, 0.05, 0.1, 0.15, 0.2, 0.25), n or 3000, 2000)
    if name == "fig3_ordered":
        return _fig3(pi1s or (0.05, 0.1, 0.2), n or 3000, 2000)
    if name == "fdx_table1":
        return _fdx_table1(pi1s or tuple(TABLE1), n or 1000, 5000)
    if name == "appA_single_step":
        n = n or 3000
        return _single_step((2.0, 2.5, 3.0, 3.5, 4.0), n, int(0.9 * n), 2000)
    if name == "appA_ai_mfdr":
        return _ai_mfdr(pi1s or (0.01, 0.05, 0.1, 0.2, 0.3), n or 3000, 2000)
    if name == "appC_lower_bound":
        return _lattice(200, n or 20000, 500)
    raise ConfigError(f"scenario: unknown name {name!r} (known: {', '.join(SCENARIOS)})")
