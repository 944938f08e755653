"""Randomized invariants: every shipped rule satisfies G1 and G2 on arbitrary streams."""

import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from alphainvest import RuleSpec, check_g1, check_g2, replay
from alphainvest.baselines import bh
from alphainvest.core import check_ledger_recurrence

RULES = {
    "lord": dict(w0=0.005, b0=0.045),
    "ai": dict(w0=0.005, b0=0.045),
    "ero_ai": dict(w0=0.005, b0=0.045, options={"mu": 2.6}),
    "asr": dict(w0=0.005, b0=0.045),
    "bonferroni": dict(w0=None, b0=None),
    "dep_lord": dict(w0=0.005, b0=0.045),
    "fdx_lord": dict(w0=None, b0=None, mode="sfdr"),
}


def _spec(rule_id, alpha=0.05):
    kwargs = dict(RULES[rule_id])
    return RuleSpec(rule_id, alpha=alpha, **kwargs)


def _streams(rng, count, n):
    """Mixture of uniform, heavily small and exactly-zero/one p-values."""
    P = rng.random((count, n)) ** rng.choice([1, 4, 20], size=(count, 1))
    P[rng.random((count, n)) < 0.02] = 0.0
    P[rng.random((count, n)) < 0.02] = 1.0
    return P


@pytest.mark.parametrize("rule_id", list(RULES))
def test_g1_g2_on_ten_thousand_streams(rule_id):
    spec = _spec(rule_id)
    P = _streams(np.random.default_rng(zlib.crc32(rule_id.encode())), 10_000, 100)
    _, ledger = replay(spec.factory(), P, strict=False)
    assert check_g1(ledger) == []
    assert check_g2(ledger) == []
    assert check_ledger_recurrence(ledger) <= 1e-15


@settings(max_examples=60, deadline=None)
@given(
    rule_id=st.sampled_from(sorted(RULES)),
    p=arrays(np.float64, st.integers(1, 60), elements=st.floats(0, 1)),
)
def test_g1_g2_on_arbitrary_streams(rule_id, p):
    _, ledger = replay(_spec(rule_id).factory(), p, strict=False)
    assert check_g1(ledger) == []
    assert check_g2(ledger) == []
    assert np.all(ledger.alpha >= 0)
    assert np.all(ledger.wealth >= -1e-12)


@settings(max_examples=60, deadline=None)
@given(
    p=arrays(np.float64, st.integers(2, 40), elements=st.floats(0, 1)),
    k=st.integers(1, 39),
)
def test_online_decisions_ignore_the_future(p, k):
    k = min(k, len(p) - 1)
    factory = _spec("lord").factory()
    full, _ = replay(factory, p)
    head, _ = replay(factory, p[:k])
    assert np.array_equal(full.bits[:k], head.bits)


@settings(max_examples=100, deadline=None)
@given(
    p=arrays(np.float64, st.integers(1, 30), elements=st.floats(0, 1)),
    alpha=st.floats(0.001, 0.5),
    seed=st.integers(0, 2**16),
)
def test_bh_permutation_invariance(p, alpha, seed):
    perm = np.random.default_rng(seed).permutation(len(p))
    assert np.array_equal(bh(p[perm], alpha).rejected, bh(p, alpha).rejected[perm])
