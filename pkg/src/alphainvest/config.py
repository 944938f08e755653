"""Plain-text experiment configuration.

The format is INI (``configparser``).  ``[run]`` selects a named scenario or,
when ``scenario`` is empty, an inline stream described by ``[stream]`` and
tested by the rules listed in ``[rules] ids``.  ``[rules]`` also holds the
shared parameters alpha, w0, b0, mode and eta; a ``[rule.<id>]`` section
overrides them and sets rule-specific options (mu, kappa, c1, gamma_fdx,
literal_payoff, label).

Without a config file the built-in defaults below apply.  A config file is
taken as complete: a rule whose b0 (or w0) is not given anywhere is an error.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field

from .alternatives import (
    ExponentialAlternative,
    GaussianAlternative,
    Mixture,
    NormalPriorAlternative,
    SimpleAlternative,
)
from .core import ConfigError
from .gamma import PUBLISHED_CONSTANT, DefaultGamma, ExplicitGamma, GammaSequence, optimal_gamma
from .rules import RULE_IDS
from .simlab.harness import ProcedureSpec
from .simlab.scenarios import SCENARIOS, Scenario, Setting, scenario
from .simlab.streams import StreamConfig

CONFIG_BEGIN = "--- config ---"
CONFIG_END = "--- end config ---"

DEFAULTS = {
    "run": {
        "scenario": "fig1_gaussian",
        "trials": "",
        "seed": "20160601",
        "pi1": "",
        "n": "",
        "gamma": "default",
        "gamma_horizon": "100000",
    },
    "stream": {
        "n": "3000",
        "pi1": "0.1",
        "alternative": "gaussian",
        "effect": "",
        "placement": "iid_mixture",
        "placement_param": "",
        "dependence": "independent",
        "rho": "0",
        "sided": "",
    },
    "rules": {
        "ids": "lord, ai, bonferroni, storey_bh@0.5",
        "alpha": "0.05",
        "w0": "0.005",
        "b0": "0.045",
        "mode": "fdr",
        "eta": "",
    },
}

RULE_KEYS = ("alpha", "w0", "b0", "mode", "eta", "label")
OPTION_KEYS = {"mu": float, "kappa": float, "c1": float, "gamma_fdx": float, "literal_payoff": "bool"}


def _parser() -> configparser.ConfigParser:
    return configparser.ConfigParser(interpolation=None, default_section="__defaults__")


def default_config() -> configparser.ConfigParser:
    cp = _parser()
    cp.read_dict(DEFAULTS)
    return cp


def extract_from_csv(text: str) -> str:
    """Recover the INI text embedded in a CSV header written by ``run``."""
    lines, inside = [], False
    for line in text.splitlines():
        if not line.startswith("#"):
            break
        body = line[2:] if line.startswith("# ") else line[1:]
        if body.strip() == CONFIG_BEGIN:
            inside = True
            continue
        if body.strip() == CONFIG_END:
            return "\n".join(lines) + "\n"
        if inside:
            lines.append(body)
    raise ConfigError("config: no embedded configuration found in CSV header")


def load_config(path: str | None) -> tuple[configparser.ConfigParser, bool]:
    """Defaults, or a config file (INI or a CSV written by ``run``) layered on them.

    Returns the parser and whether it came from an explicit file.  Rule
    parameters are not inherited from the defaults for explicit files.
    """
    cp = default_config()
    if path is None:
        return cp, False
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from None
    if text.startswith("#"):
        text = extract_from_csv(text)
    user = _parser()
    try:
        user.read_string(text, source=path)
    except configparser.Error as exc:
        raise ConfigError(f"config: {exc}") from None
    for name in ("w0", "b0"):
        cp["rules"][name] = ""
    for section in user.sections():
        if section not in cp:
            cp.add_section(section)
        for key, value in user[section].items():
            cp[section][key] = value
    _check_keys(cp)
    return cp, True


def _check_keys(cp: configparser.ConfigParser) -> None:
    for section in cp.sections():
        if section in DEFAULTS:
            allowed = set(DEFAULTS[section])
        elif section.startswith("rule."):
            rid = section[5:]
            if rid.partition("@")[0] not in RULE_IDS + ("bh", "by", "storey_bh", "single_step"):
                raise ConfigError(f"config: unknown rule section [{section}]")
            allowed = set(RULE_KEYS) | set(OPTION_KEYS)
        else:
            raise ConfigError(f"config: unknown section [{section}]")
        for key in cp[section]:
            if key not in allowed:
                raise ConfigError(f"config: unknown key {key!r} in [{section}]")


def apply_overrides(cp: configparser.ConfigParser, assignments) -> None:
    """Apply ``section.key=value`` strings."""
    for item in assignments or ():
        lhs, sep, value = item.partition("=")
        section, dot, key = lhs.strip().rpartition(".")
        if not sep or not dot or not section:
            raise ConfigError(f"--set: expected section.key=value, got {item!r}")
        if section not in cp:
            cp.add_section(section)
        cp[section][key] = value.strip()
    _check_keys(cp)


def dump(cp: configparser.ConfigParser) -> str:
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue().rstrip("\n") + "\n"


def _float(section, key, value, allow_empty=False):
    if value is None or value.strip() == "":
        if allow_empty:
            return None
        raise ConfigError(f"{key}: required in [{section}]")
    try:
        x = float(value)
    except ValueError:
        raise ConfigError(f"{key}: not a number in [{section}]: {value!r}") from None
    if not math.isfinite(x):
        raise ConfigError(f"{key}: must be finite in [{section}]")
    return x


def _int(section, key, value, allow_empty=False):
    x = _float(section, key, value, allow_empty)
    if x is None:
        return None
    if x != int(x):
        raise ConfigError(f"{key}: must be an integer in [{section}], got {value!r}")
    return int(x)


def _list(value) -> list[str]:
    return [v.strip() for v in (value or "").split(",") if v.strip()]


@dataclass
class RunPlan:
    """A fully resolved experiment: the scenario to run plus the run controls."""

    scenario: Scenario
    trials: int
    seed: int
    config_text: str
    notes: list[str] = field(default_factory=list)


def stream_mixture(config: StreamConfig) -> Mixture:
    """The p-value mixture implied by a stream model (iid placements)."""
    value = config.effect_value
    if config.alternative == "gaussian":
        alt = NormalPriorAlternative(value)
    elif config.alternative == "exponential":
        alt = ExponentialAlternative(value)
    elif config.alternative in ("simple", "point"):
        alt = SimpleAlternative(value) if config.sides == 1 else GaussianAlternative(value)
    else:
        raise ConfigError("gamma: the optimal sequence needs a non-zero alternative")
    return Mixture(alt, max(config.pi1, 1e-12))


def resolve_gamma(choice: str, config: StreamConfig | None, b0: float, horizon: int) -> GammaSequence:
    choice = choice.strip()
    if choice in ("", "default"):
        return DefaultGamma()
    if choice == "published":
        return DefaultGamma(PUBLISHED_CONSTANT)
    if choice.startswith("file:"):
        return ExplicitGamma.from_file(choice[5:])
    if choice == "optimal":
        if config is None:
            raise ConfigError("gamma: 'optimal' needs a stream model")
        return optimal_gamma(stream_mixture(config), b0, horizon).monotone()
    raise ConfigError(f"gamma: expected default, published, optimal or file:<path>, got {choice!r}")


def _procedures(cp, explicit: bool) -> list[ProcedureSpec]:
    shared = cp["rules"]
    procs = []
    ids = _list(shared.get("ids"))
    if not ids:
        raise ConfigError("ids: no rules listed in [rules]")
    for rid in ids:
        section = f"rule.{rid}"
        own = cp[section] if section in cp else {}
        get = lambda k: own.get(k, shared.get(k))  # noqa: E731
        base = rid.partition("@")[0]
        kwargs = {"alpha": _float(section, "alpha", get("alpha"))}
        for key in ("w0", "b0"):
            value = get(key)
            if value is None or value.strip() == "":
                if base in RULE_IDS and base not in ("bonferroni", "fdx_lord"):
                    raise ConfigError(f"{key}: required for rule {rid!r} (set it in [rules] or [{section}])")
                kwargs[key] = None
            else:
                kwargs[key] = _float(section, key, value)
        kwargs["mode"] = (get("mode") or "fdr").strip()
        kwargs["eta"] = _float(section, "eta", get("eta"), allow_empty=True)
        label = own.get("label") if own else None
        options = {}
        for key, kind in OPTION_KEYS.items():
            if own and key in own:
                if kind == "bool":
                    options[key] = own[key].strip().lower() in ("1", "true", "yes", "on")
                else:
                    options[key] = _float(section, key, own[key])
        procs.append(ProcedureSpec(rid, options=options, label=label or rid, **kwargs))
    return procs


def _stream(cp) -> StreamConfig:
    s = cp["stream"]
    sec = "stream"
    return StreamConfig(
        n=_int(sec, "n", s.get("n")),
        pi1=_float(sec, "pi1", s.get("pi1")),
        alternative=s.get("alternative", "gaussian").strip(),
        effect=_float(sec, "effect", s.get("effect"), allow_empty=True),
        placement=s.get("placement", "iid_mixture").strip(),
        placement_param=_float(sec, "placement_param", s.get("placement_param"), allow_empty=True),
        dependence=s.get("dependence", "independent").strip(),
        rho=_float(sec, "rho", s.get("rho") or "0"),
        sided=_int(sec, "sided", s.get("sided"), allow_empty=True),
    )


def resolve(cp: configparser.ConfigParser, explicit: bool) -> RunPlan:
    """Turn a configuration into a runnable plan, validating every parameter first."""
    run = cp["run"]
    seed = _int("run", "seed", run.get("seed"))
    n = _int("run", "n", run.get("n"), allow_empty=True)
    pi1s = [_float("run", "pi1", v) for v in _list(run.get("pi1"))] or None
    name = (run.get("scenario") or "").strip()
    horizon = _int("run", "gamma_horizon", run.get("gamma_horizon") or "100000")
    if name:
        if name not in SCENARIOS:
            raise ConfigError(f"scenario: unknown name {name!r} (known: {', '.join(SCENARIOS)})")
        scen = scenario(name, pi1s=pi1s, n=n)
    else:
        base = _stream(cp)
        if n is not None:
            base = base.with_(n=n)
        procs = _procedures(cp, explicit)
        grid = pi1s or [base.pi1]
        settings = [Setting(base.with_(pi1=p), procs) for p in grid]
        scen = Scenario("custom", "inline stream from configuration", settings, 2000)
    gamma_choice = (run.get("gamma") or "default").strip()
    if gamma_choice not in ("", "default"):
        for setting in scen.settings:
            for proc in setting.procedures:
                if proc.base in ("lord", "bonferroni", "fdx_lord"):
                    b0 = proc.rule_spec().params.b0
                    proc.options["gamma"] = resolve_gamma(gamma_choice, setting.config, b0, horizon)
    trials = _int("run", "trials", run.get("trials"), allow_empty=True)
    trials = scen.trials if trials is None else trials
    if trials < 2:
        raise ConfigError(f"trials: need at least 2, got {trials}")
    resolved = _parser()
    resolved.read_dict({s: dict(cp[s]) for s in cp.sections()})
    resolved["run"]["trials"] = str(trials)
    return RunPlan(scen, trials, seed, dump(resolved))
