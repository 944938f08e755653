"""Command-line entry point: ``alphainvest {run,validate,bound,gamma}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 validation found violations.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .alternatives import Mixture, parse_alternative
from .config import CONFIG_BEGIN, CONFIG_END, apply_overrides, dump, load_config, resolve
from .core import (
    ConfigError,
    NumericError,
    check_g1,
    check_g2,
    check_ledger_recurrence,
    check_monotone,
    check_monotone_exhaustive,
    replay,
)
from .gamma import (
    PUBLISHED_CONSTANT,
    DefaultGamma,
    power_lower_bound_exact,
    power_lower_bound_surrogate,
    optimal_gamma,
)
from .rules import RULE_IDS, RuleSpec
from .simlab.harness import trial_rows
from .simlab.streams import StreamConfig, generate_batch

log = logging.getLogger("alphainvest")

EXIT_CONFIG, EXIT_NUMERIC, EXIT_VIOLATION = 2, 3, 4

TRIAL_HEADER = ["trial", "rule", "n", "pi1", "V", "R", "FDP", "maxFDP", "power"]
AGGREGATE_HEADER = ["rule", "pi1", "FDR", "FDR_se", "sFDR", "mFDR", "FDX", "power", "power_se", "trials"]


def _g(x) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else format(float(x), ".10g")


def _header(seed: int, config_text: str) -> str:
    lines = [f"alphainvest {__version__}", f"seed: {seed}", CONFIG_BEGIN, *config_text.splitlines(), CONFIG_END]
    return "".join(f"# {line}\n" if line else "#\n" for line in lines)


# --- run -------------------------------------------------------------------


def cmd_run(args) -> int:
    cp, explicit = load_config(args.config)
    overrides = list(args.set or [])
    for key, value in (("scenario", args.scenario), ("trials", args.trials), ("seed", args.seed),
                       ("pi1", args.pi1), ("n", args.n), ("gamma", args.gamma)):
        if value is not None:
            overrides.append(f"run.{key}={value}")
    apply_overrides(cp, overrides)
    if args.print_config:
        sys.stdout.write(dump(cp))
        return 0
    plan = resolve(cp, explicit)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    header = _header(plan.seed, plan.config_text)
    trial_path = out.with_name(out.name + "_trials.csv")
    agg_path = out.with_name(out.name + "_aggregate.csv")

    with open(trial_path, "w", newline="") as fh:
        fh.write(header)
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRIAL_HEADER)

        def on_setting(setting, results):
            for proc in setting.procedures:
                writer.writerows(trial_rows(setting.row_label(proc), setting.config, results[proc.label]))
            log.info("finished setting %s (pi1=%g)", setting.label or "-", setting.config.pi1)

        result = plan.scenario.run(plan.trials, plan.seed, jobs=args.jobs, on_setting=on_setting)

    with open(agg_path, "w", newline="") as fh:
        fh.write(header)
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(AGGREGATE_HEADER)
        for row in result.rows:
            m = row.metrics
            writer.writerow([row.rule, _g(row.pi1), _g(m.fdr), _g(m.fdr_se), _g(m.sfdr), _g(m.mfdr),
                             _g(m.fdx), _g(m.power), _g(m.power_se), m.trials])
    for row in result.rows:
        m = row.metrics
        print(f"{row.rule:28s} pi1={row.pi1:<6g} FDR={m.fdr:.4f}±{m.fdr_se:.4f} "
              f"sFDR={m.sfdr:.4f} mFDR={m.mfdr:.4f} FDX={m.fdx:.4f} power={m.power:.4f}")
    for outcome in result.checks():
        print(f"[{'PASS' if outcome.passed else 'FAIL'}] {outcome.name}: {outcome.detail}")
    print(f"wrote {trial_path} and {agg_path}")
    return 0


# --- validate ----------------------------------------------------------------


def _rule_spec(args) -> RuleSpec:
    options = {}
    for key in ("mu", "kappa", "c1", "gamma_fdx"):
        value = getattr(args, key)
        if value is not None:
            options[key] = value
    if args.literal_payoff:
        options["literal_payoff"] = True
    if args.unsafe_no_cap:
        options["cap"] = False
    if args.rule == "ero_ai" and "mu" not in options:
        options["mu"] = math.sqrt(math.log(args.n))
    w0, b0 = args.w0, args.b0
    if args.rule not in ("bonferroni", "fdx_lord"):
        w0 = 0.005 if w0 is None else w0
        b0 = 0.045 if b0 is None else b0
    mode = args.mode or ("sfdr" if args.rule == "fdx_lord" else "none" if args.rule == "bonferroni" else "fdr")
    return RuleSpec(args.rule, args.alpha, w0, b0, mode, options)


def _fdx_stop_violations(ledger, budget: float) -> int:
    """Count steps with alpha_j > 0 although alpha_j + M(j-1) exceeds the budget,
    or with alpha_j > 0 after an earlier stop."""
    alpha = np.atleast_2d(ledger.alpha)
    rejected = np.atleast_2d(ledger.decisions).astype(bool)
    spent = np.cumsum(np.where(rejected, 0.0, alpha), axis=1)
    before = np.concatenate([np.zeros((len(alpha), 1)), spent[:, :-1]], axis=1)
    over = (alpha > 0) & (alpha + before > budget + 1e-12)
    stopped = np.maximum.accumulate(alpha == 0, axis=1)
    resumed = stopped & (alpha > 0)
    return int(np.count_nonzero(over)) + int(np.count_nonzero(resumed))


def cmd_validate(args) -> int:
    spec = _rule_spec(args)
    factory = spec.factory()
    params = spec.params
    rng_seed = args.seed
    config = StreamConfig(n=args.n, pi1=args.pi1, alternative=args.alternative)
    _, P, _ = generate_batch(config, rng_seed, range(args.streams))
    extremes = np.vstack([np.zeros(args.n), np.ones(args.n), np.full(args.n, 1e-6)])
    P = np.vstack([P, extremes])
    _, ledger = replay(factory, P, strict=False)
    # The FDX stop is an exit from the budget, not a level function: a history
    # with more discoveries can reach the budget sooner.  Monotonicity is
    # checked on the LORD levels that drive the rule before it stops.
    level_factory = RuleSpec("lord", params.alpha, params.w0, params.b0, params.mode,
                             {k: v for k, v in spec.options.items() if k == "gamma"}).factory() \
        if args.rule == "fdx_lord" else factory
    report = {
        "G1 A1a": [v for v in check_g1(ledger) if v.condition == "A1a"],
        "G1 A1b": [v for v in check_g1(ledger) if v.condition == "A1b"],
        "G1 Nonneg": [v for v in check_g1(ledger) if v.condition == "Nonneg"],
        "G2": check_g2(ledger),
        "monotone (sampled)": check_monotone(level_factory, args.n, args.pairs, rng_seed),
        "monotone (exhaustive)": check_monotone_exhaustive(level_factory, args.exhaustive_horizon),
    }
    counts = {name: len(found) for name, found in report.items()}
    informational = set()
    if not spec.build(1).monotone:
        informational = {"monotone (sampled)", "monotone (exhaustive)"}
    recurrence = check_ledger_recurrence(ledger)
    counts["wealth recurrence"] = int(recurrence > 1e-12)
    if args.rule == "fdx_lord":
        gamma_fdx = spec.options.get("gamma_fdx", 0.15)
        g3 = params.b0 == params.alpha and params.w0 < gamma_fdx - params.b0
        counts["G3 (b0 = alpha, w0 < gamma - b0)"] = int(not g3)
        budget = (gamma_fdx - params.alpha) / (2 * (1 - params.alpha))
        counts["G4 stopping rule"] = _fdx_stop_violations(ledger, budget)
    print(f"rule={args.rule} w0={params.w0:g} b0={params.b0:g} alpha={params.alpha:g} "
          f"streams={P.shape[0]} n={args.n}")
    for name, count in counts.items():
        status = "ok" if count == 0 else "info" if name in informational else "VIOLATED"
        note = " (rule does not claim monotonicity)" if name in informational and count else ""
        print(f"[{status}] {name}: {count} violation(s){note}")
        for v in report.get(name, [])[:5]:
            print(f"    step {v.index} stream {v.stream}: {v.condition} lhs={v.lhs:.6g} rhs={v.rhs:.6g}")
    failed = any(count for name, count in counts.items() if name not in informational)
    return EXIT_VIOLATION if failed else 0


# --- bound / gamma -------------------------------------------------------------


def _mixture(args) -> Mixture:
    if not 0 < args.pi1 <= 1:
        raise ConfigError(f"pi1: must lie in (0, 1] for a power bound, got {args.pi1}")
    return Mixture(parse_alternative(args.alternative), args.pi1)


def _positive_int(text: str) -> int:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if value != int(value) or value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer: {text!r}")
    return int(value)


def cmd_bound(args) -> int:
    if not 0 < args.b0 <= 1:
        raise ConfigError(f"b0: must lie in (0, 1], got {args.b0}")
    mixture = _mixture(args)
    horizon = args.horizon
    kkt = optimal_gamma(mixture, args.b0, horizon)
    # LORD and the power bound need a non-increasing sequence; the raw KKT
    # solution rises over its first terms, so report its projection.
    opt = kkt.monotone()
    default = DefaultGamma()
    exact = power_lower_bound_exact(mixture, opt, args.b0, horizon=horizon)
    surrogate = power_lower_bound_surrogate(mixture, opt, args.b0, horizon=horizon)
    m = np.arange(1, horizon + 1)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["m", "gamma_default", "gamma_opt", "beta_opt"])
    for mi, gd, go in zip(m, default(m), opt.values):
        bo = args.b0 * go
        writer.writerow([int(mi), format(gd, ".17g"), format(go, ".17g"), format(bo, ".17g")])
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    d_exact = power_lower_bound_exact(mixture, default, args.b0)
    d_sur = power_lower_bound_surrogate(mixture, default, args.b0)
    log.info("default gamma (infinite horizon): exact %.6g, surrogate %.6g", d_exact.value, d_sur.value)
    summary = sys.stdout if args.out else sys.stderr
    print("exact_bound,surrogate_bound,eta", file=summary)
    print(f"{exact.value:.10g},{surrogate.value:.10g},{kkt.eta:.10g}", file=summary)
    return 0


def cmd_gamma(args) -> int:
    m = np.arange(1, args.terms + 1)
    if args.kind == "optimal":
        if args.alternative is None or args.pi1 is None:
            raise ConfigError("gamma: 'optimal' needs --alternative and --pi1")
        seq = optimal_gamma(_mixture(args), args.b0, max(args.horizon, args.terms))
        if args.monotone:
            seq = seq.monotone()
    else:
        seq = DefaultGamma(PUBLISHED_CONSTANT if args.kind == "published" else None)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["m", "gamma"])
    for mi, g in zip(m, seq(m)):
        writer.writerow([int(mi), format(g, ".17g")])
    return 0


# --- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="alphainvest", description="Online FDR control by generalized alpha-investing.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a Monte Carlo scenario and write trial and aggregate CSVs")
    run.add_argument("--config", help="INI file, or a CSV written by a previous run (its header is reused)")
    run.add_argument("--scenario", help="named scenario; empty string for the inline [stream] model")
    run.add_argument("--trials", type=_positive_int)
    run.add_argument("--seed", type=int)
    run.add_argument("--pi1", help="comma-separated grid of non-null fractions")
    run.add_argument("--n", type=_positive_int, help="stream length")
    run.add_argument("--gamma", help="default, published, optimal or file:<path>")
    run.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override any config entry")
    run.add_argument("--jobs", type=_positive_int, default=1, help="worker processes (results do not depend on it)")
    run.add_argument("--out", default="results", help="output prefix (default: results)")
    run.add_argument("--print-config", action="store_true", help="print the resolved configuration and exit")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="check a rule against the generalized alpha-investing conditions")
    val.add_argument("rule", choices=RULE_IDS)
    val.add_argument("--alpha", type=float, default=0.05)
    val.add_argument("--w0", type=float, default=None)
    val.add_argument("--b0", type=float, default=None)
    val.add_argument("--mode", choices=("fdr", "sfdr", "mfdr", "none"))
    val.add_argument("--mu", type=float)
    val.add_argument("--kappa", type=float)
    val.add_argument("--c1", type=float)
    val.add_argument("--gamma-fdx", dest="gamma_fdx", type=float)
    val.add_argument("--literal-payoff", action="store_true", help="ero_ai: use the unclamped pay-off")
    val.add_argument("--unsafe-no-cap", action="store_true", help=argparse.SUPPRESS)
    val.add_argument("--streams", type=_positive_int, default=1000)
    val.add_argument("--n", type=_positive_int, default=1000)
    val.add_argument("--pi1", type=float, default=0.2)
    val.add_argument("--alternative", default="gaussian")
    val.add_argument("--pairs", type=_positive_int, default=500, help="sampled history pairs for monotonicity")
    val.add_argument("--exhaustive-horizon", type=_positive_int, default=10)
    val.add_argument("--seed", type=int, default=1)
    val.set_defaults(func=cmd_validate)

    bnd = sub.add_parser("bound", help="optimal gamma over a finite horizon and the power lower bounds")
    bnd.add_argument("--alternative", required=True, help="e.g. gaussian:3, simple:2.5, normal_prior:16")
    bnd.add_argument("--pi1", type=float, required=True)
    bnd.add_argument("--b0", type=float, default=0.045)
    bnd.add_argument("--horizon", type=_positive_int, default=1000)
    bnd.add_argument("--out", help="CSV path for the sequence table (default: stdout)")
    bnd.set_defaults(func=cmd_bound)

    gam = sub.add_parser("gamma", help="print a gamma sequence")
    gam.add_argument("kind", choices=("default", "published", "optimal"), nargs="?", default="default")
    gam.add_argument("--terms", type=_positive_int, default=20)
    gam.add_argument("--alternative")
    gam.add_argument("--pi1", type=float)
    gam.add_argument("--b0", type=float, default=0.045)
    gam.add_argument("--horizon", type=_positive_int, default=1000)
    gam.add_argument("--monotone", action="store_true", help="project the optimal sequence to non-increasing")
    gam.set_defaults(func=cmd_gamma)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"alphainvest: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, FloatingPointError) as exc:
        print(f"alphainvest: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
