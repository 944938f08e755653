import math

import mpmath
import numpy as np
import pytest

from alphainvest import ConfigError, RuleParams, RuleSpec, advance, check_g1, check_g2, make_rule, replay
from alphainvest.core import run_decisions
from alphainvest.gamma import DefaultGamma, ExplicitGamma
from alphainvest.rules import (
    ALPHA_CEILING,
    AlphaInvesting,
    AlphaSpendingWithRewards,
    DependentLord,
    EroAlphaInvesting,
    FdxLord,
    Lord,
    OnlineBonferroni,
    default_xi,
    ero_residual,
    ero_solve_alpha,
)

G = DefaultGamma()
PARAMS = RuleParams(0.005, 0.045, 0.05)


# --- LORD --------------------------------------------------------------------------


def test_lord_level_after_discovery_uses_gamma_1():
    rule = Lord(PARAMS)
    for p in (1.0, 1.0, 0.0):
        advance(rule, p)
    assert float(rule.next_level()[0]) == pytest.approx(G(1) * rule.wealth[0], rel=1e-15)


def test_lord_spending_between_discoveries_never_exceeds_wealth_at_tau():
    rng = np.random.default_rng(0)
    P = rng.random((100, 800)) ** 6
    _, ledger = replay(lambda size=1: Lord(PARAMS, size=size), P)
    for s in range(100):
        D, phi, W = ledger.decisions[s], ledger.phi[s], ledger.wealth[s]
        tau_wealth, spent = W[0], 0.0
        for j in range(len(D)):
            spent += phi[j]
            assert spent <= tau_wealth + 1e-15
            if D[j]:
                tau_wealth, spent = W[j + 1], 0.0


def test_lord_without_discoveries_spends_below_w0():
    _, ledger = replay(lambda size=1: Lord(PARAMS, size=size), np.ones(1000))
    assert ledger.phi.sum() == pytest.approx(0.005 * math.fsum(G(np.arange(1, 1001))), rel=1e-12)
    assert ledger.phi.sum() < 0.005


def test_lord_accepts_explicit_gamma():
    gamma = ExplicitGamma([0.5, 0.3, 0.2])
    _, ledger = replay(lambda size=1: Lord(PARAMS, gamma, size=size), np.ones(5))
    assert ledger.alpha.tolist() == pytest.approx([0.0025, 0.0015, 0.001, 0.0, 0.0])


# --- alpha-investing --------------------------------------------------------------


def test_ai_first_level():
    rule = AlphaInvesting(PARAMS)
    assert float(rule.next_level()[0]) == pytest.approx(0.0025)


def test_ai_zero_wealth_gives_zero_level():
    rule = AlphaInvesting(PARAMS)
    rule.wealth[:] = 0.0
    assert float(rule.next_level()[0]) == 0.0


def test_ai_cap_binds_for_large_wealth():
    rule = AlphaInvesting(RuleParams(3.0, 0.045, 0.05, mode="none"))
    assert float(rule.next_level()[0]) == pytest.approx(0.75)
    assert float(rule.next_payout()[0]) == pytest.approx(3.0)


def test_ai_payoffs():
    rule = AlphaInvesting(PARAMS)
    a = float(rule.next_level()[0])
    assert float(rule.next_payout()[0]) == pytest.approx(a / (1 - a))
    assert float(rule.next_payoff()[0]) == pytest.approx(0.045 + a / (1 - a))


def test_ai_uncapped_breaks_nonneg():
    P = np.zeros((1, 60))
    _, ledger = replay(lambda size=1: AlphaInvesting(PARAMS, size, cap=False), P, strict=False)
    assert any(v.condition == "Nonneg" for v in check_g1(ledger))


# --- ERO ----------------------------------------------------------------------------


def _ero_oracle(phi, mu):
    """Independent root of phi/rho - phi/a + 1 = 0 in 50-digit arithmetic."""
    mpmath.mp.dps = 50
    phi, mu = mpmath.mpf(phi), mpmath.mpf(mu)

    def h(a):
        rho = mpmath.ncdf(mu + mpmath.sqrt(2) * mpmath.erfinv(2 * a - 1))
        return phi / rho - phi / a + 1

    # h < 0 near 0 and > 0 near phi/(1+phi) * (something above); bracket by scanning
    lo, hi = mpmath.mpf("1e-30"), mpmath.mpf(1) - mpmath.mpf("1e-12")
    return float(mpmath.findroot(h, (lo, hi), solver="anderson"))


@pytest.mark.parametrize("phi", [1e-4, 5e-4, 0.001, 0.01, 0.1])
def test_ero_solver_matches_high_precision_oracle(phi):
    mu = math.sqrt(math.log(3000))
    alpha = float(ero_solve_alpha(phi, mu)[0])
    assert alpha == pytest.approx(_ero_oracle(phi, mu), rel=1e-9)


def test_ero_solver_residual_small():
    phi = np.geomspace(1e-8, 0.5, 200)
    mu = math.sqrt(math.log(3000))
    alpha = ero_solve_alpha(phi, mu)
    assert np.max(np.abs(ero_residual(alpha, phi, mu))) <= 1e-10


def test_ero_solver_fixed_point_cross_check():
    # alpha = phi / (phi / rho(alpha) + 1), iterated from the mu = inf solution
    phi, mu = 0.01, math.sqrt(math.log(3000))
    from scipy.special import ndtr, ndtri

    a = phi / (1 + phi)
    for _ in range(500):
        a = phi / (phi / ndtr(mu + ndtri(a)) + 1)
    assert float(ero_solve_alpha(phi, mu)[0]) == pytest.approx(a, abs=1e-9)


def test_ero_large_mu_limit():
    phi = np.array([0.001, 0.01, 0.3])
    assert ero_solve_alpha(phi, 40.0) == pytest.approx(phi / (1 + phi), rel=1e-12)


def test_ero_zero_payout_gives_zero_level():
    assert ero_solve_alpha(0.0, 2.0)[0] == 0.0


def test_ero_default_payoff_is_clamped_to_a1a():
    rule = EroAlphaInvesting(PARAMS, mu=2.0)
    level, phi, psi = rule.quote()
    assert psi[0] == pytest.approx(phi[0] + 0.045)
    literal = EroAlphaInvesting(PARAMS, mu=2.0, literal_payoff=True)
    a, f, s = literal.quote()
    assert s[0] == pytest.approx(f[0] / a[0] + 0.045 - 1)
    assert s[0] > f[0] + 0.045


def test_ero_payout_fraction():
    rule = EroAlphaInvesting(RuleParams(0.02, 0.03, 0.05), mu=2.0)
    assert float(rule.next_payout()[0]) == pytest.approx(0.002)


# --- alpha spending with rewards ----------------------------------------------------


def test_asr_kappa_one():
    rule = AlphaSpendingWithRewards(RuleParams(0.05, 0.045, 0.05, mode="none"), kappa=1, payout_fraction=0.1)
    a, f, s = (float(x[0]) for x in rule.quote())
    assert (a, f) == pytest.approx((0.005, 0.005))
    assert s == pytest.approx(0.045)


def test_asr_kappa_two():
    rule = AlphaSpendingWithRewards(RuleParams(0.2, 0.045, 0.05, mode="none"), kappa=2, payout_fraction=0.1)
    a, f, s = (float(x[0]) for x in rule.quote())
    assert a == pytest.approx(0.01)
    assert s == pytest.approx(0.065)


def test_asr_zero_wealth():
    rule = AlphaSpendingWithRewards(PARAMS)
    rule.wealth[:] = 0
    assert [float(x[0]) for x in rule.quote()] == [0.0, 0.0, 0.0]


def test_asr_rejects_small_kappa():
    with pytest.raises(ConfigError):
        AlphaSpendingWithRewards(PARAMS, kappa=0.5)


# --- Bonferroni ----------------------------------------------------------------------


def test_bonferroni_levels():
    rule = OnlineBonferroni.with_level(0.05)
    levels = []
    for _ in range(3):
        levels.append(float(rule.next_level()[0]))
        advance(rule, 1.0)
    assert levels == pytest.approx([0.05 * G(1), 0.05 * G(2), 0.05 * G(3)], rel=1e-15)
    assert levels[0] == pytest.approx(0.05 * 0.0548154422665695, rel=1e-12)


def test_bonferroni_partial_sums_below_alpha():
    _, ledger = replay(lambda size=1: OnlineBonferroni.with_level(0.05, size=size), np.zeros(5000))
    assert np.cumsum(ledger.alpha)[-1] < 0.05
    assert check_g1(ledger) == [] and check_g2(ledger) == []


# --- dependent LORD ----------------------------------------------------------------


def test_dep_lord_first_level():
    rule = DependentLord(PARAMS)
    xi = default_xi(0.05, 0.045)
    assert float(rule.next_level()[0]) == pytest.approx(xi(1) * 0.005)


def test_dep_lord_budget_matches_alpha_over_b0():
    xi = default_xi(0.05, 0.045)
    # sum xi_i (1 + log i) = (alpha/b0) sum gamma_i = alpha/b0
    assert (0.05 / 0.045) * G.total() == pytest.approx(0.05 / 0.045, abs=1e-8)
    i = np.arange(1, 10**6 + 1)
    partial = math.fsum(xi(i) * (1 + np.log(i)))
    assert partial <= 0.05 / 0.045 + 1e-6


def test_dep_lord_fdr_bound_grows_to_alpha():
    rule = DependentLord(PARAMS)
    assert rule.fdr_bound(1000) < rule.fdr_bound(10**5) < 0.05


def test_dep_lord_uses_absolute_index_after_discovery():
    rule = DependentLord(PARAMS)
    xi = default_xi(0.05, 0.045)
    advance(rule, 1.0)
    advance(rule, 0.0)
    assert float(rule.next_level()[0]) == pytest.approx(xi(3) * rule.wealth[0])


# --- FDX-stopped LORD ----------------------------------------------------------------


def test_fdx_budget():
    rule = FdxLord.standard(0.05, 0.15)
    assert rule.budget == pytest.approx(0.1 / (2 * 0.95))
    assert rule.budget == pytest.approx(0.0526316, abs=1e-7)
    assert rule.params.w0 == pytest.approx(0.05)
    assert rule.params.b0 == 0.05


def test_fdx_requires_g3():
    with pytest.raises(ConfigError):
        FdxLord(RuleParams(0.1, 0.05, 0.05, mode="sfdr"), gamma_fdx=0.15)
    with pytest.raises(ConfigError):
        FdxLord(RuleParams(0.01, 0.04, 0.05, mode="sfdr"), gamma_fdx=0.15)
    with pytest.raises(ConfigError):
        FdxLord.standard(0.05, 0.04)


def test_fdx_all_rejections_never_spend_budget():
    rule = FdxLord.standard(0.05, 0.15)
    for _ in range(200):
        out = advance(rule, 0.0)
        assert out.decision
    assert rule.spent[0] == 0.0


def test_fdx_stops_exactly_when_budget_would_be_exceeded():
    rng = np.random.default_rng(11)
    P = rng.random((300, 400)) ** 2
    _, ledger = replay(lambda size=1: FdxLord.standard(0.05, 0.15, size=size), P)
    budget = 0.1 / 1.9
    for s in range(300):
        a, R = ledger.alpha[s], ledger.decisions[s]
        spent, stopped = 0.0, False
        for j in range(len(a)):
            if stopped:
                assert a[j] == 0.0
                continue
            if a[j] + spent > budget:
                pytest.fail(f"stream {s} step {j + 1}: level {a[j]} above budget")
            spent += a[j] * (1 - R[j])
            # the next quoted level decides the stop; detect it by a zero level
            if j + 1 < len(a) and a[j + 1] == 0.0:
                stopped = True


def test_fdx_dominated_by_lord_pathwise():
    rng = np.random.default_rng(12)
    P = rng.random((1000, 300)) ** 3
    params = RuleParams(0.05, 0.05, 0.05, mode="sfdr")
    fdx = run_decisions(lambda size=1: FdxLord(params, 0.15, size=size), P)
    lord = run_decisions(lambda size=1: Lord(params, size=size), P)
    assert np.all(fdx <= lord)


# --- configuration ------------------------------------------------------------------


@pytest.mark.parametrize("rule_id", ["lord", "ai", "asr", "dep_lord"])
def test_rulespec_requires_b0(rule_id):
    with pytest.raises(ConfigError, match="b0"):
        RuleSpec(rule_id, b0=None).params


def test_rulespec_defaults_for_bonferroni_and_fdx():
    assert RuleSpec("bonferroni", w0=None, b0=None).params.w0 == 0.05
    p = RuleSpec("fdx_lord", w0=None, b0=None).params
    assert (p.w0, p.b0) == pytest.approx((0.05, 0.05))


def test_rulespec_unknown_rule():
    with pytest.raises(ConfigError):
        RuleSpec("nope")


def test_ero_spec_requires_mu():
    with pytest.raises(ConfigError, match="mu"):
        RuleSpec("ero_ai").build()


@pytest.mark.parametrize("rule_id", ["lord", "ai", "asr", "bonferroni", "dep_lord", "fdx_lord"])
def test_make_rule_builds_each_identifier(rule_id):
    rule = make_rule(rule_id, size=2)
    assert rule.name == rule_id
    assert rule.next_level().shape == (2,)


def test_make_rule_ero():
    assert make_rule("ero_ai", mu=2.0).name == "ero_ai"


def test_alpha_ceiling():
    rule = AlphaInvesting(RuleParams(1e12, 0.045, 0.05, mode="none"))
    assert float(rule.next_level()[0]) <= ALPHA_CEILING
