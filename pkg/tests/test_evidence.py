import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from anova_evidence.errors import DomainError, ValidationError
from anova_evidence.evidence import (
    chi,
    combine_studies,
    evidence_pergroup,
    evidence_pooled,
    group_means,
    log_chi,
    posterior_odds,
    rho_hat,
    s_statistic,
    s_threshold,
    sup_log_chi,
    within_group_ss,
)
from anova_evidence.summary import Grouping, StudySummary, parse_study

N = 338 / 12


def make_study(means, groups, N=100.0):
    ids = [f"c{i}" for i in range(len(means))]
    doc = {
        "design": [{"name": "cell", "levels": ids}],
        "cells": [{"id": i, "coords": {"cell": i}, "mean": float(m)} for i, m in zip(ids, means)],
        "total_observations": N,
        "rounding_decimals": "exact",
        "groups": [[ids[k] for k in g] for g in groups],
    }
    return parse_study(doc)


def test_group_means(table1):
    gm = group_means(table1.table, table1.grouping)
    assert gm == pytest.approx([3.425, 2.4, 2.925])


def test_group_means_singleton():
    s = make_study([1.5, 2.0], [[0], [1]])
    assert group_means(s.table, s.grouping) == [1.5, 2.0]


def test_within_group_ss(table1, adapted):
    assert within_group_ss(table1.table, table1.grouping) == pytest.approx(0.075, abs=1e-12)
    assert within_group_ss(adapted.table, adapted.grouping) > 0.075
    s = make_study([1, 1, 2, 2], [[0, 1], [2, 3]])
    assert within_group_ss(s.table, s.grouping) == 0.0


def test_s_statistic():
    assert s_statistic(0.075, 12, N, 1.134) == pytest.approx(0.15522, abs=5e-5)
    assert s_statistic(0.0, 12, N, 1.134) == 0.0
    assert s_statistic(0.04, 4, N, 1.134) == pytest.approx(0.24838, abs=5e-5)


def test_rho_hat_table1():
    r = rho_hat(s_statistic(0.075, 12, N, 1.134), 12)
    assert r == pytest.approx(0.8277, abs=1e-4)
    # referee: direct maximization of chi
    res = minimize_scalar(lambda x: -log_chi(x, 0.075, 12, N, 1.134), bounds=(0.01, 0.99),
                          method="bounded", options={"xatol": 1e-12})
    assert r == pytest.approx(res.x, abs=1e-6)


def test_rho_hat_at_threshold():
    s = s_threshold(4)
    assert s == pytest.approx(1 / 3)
    # the >= comparison sends the exact threshold to the V = 1 branch
    assert rho_hat(s, 4) is None
    # just below, the discriminant is ~0 and rho_hat ~ (1 - s) / 2
    assert rho_hat(s - 1e-13, 4) == pytest.approx(1 / 3, abs=1e-6)


def test_rho_hat_above_threshold():
    assert rho_hat(0.5, 4) is None
    with pytest.raises(DomainError):
        rho_hat(0.1, 1)


def test_chi_values():
    assert chi(0.0, 0.3, 5, 10, 1) == 1.0
    assert chi(0.8277, 0.075, 12, N, 1.134) == pytest.approx(56.9, abs=0.1)
    with pytest.raises(DomainError):
        chi(1.0, 0.1, 3, 10, 1)
    with pytest.raises(DomainError):
        chi(-0.1, 0.1, 3, 10, 1)


def test_chi_slope_at_zero():
    ss, dim, n, s2 = 0.075, 12, N, 1.134
    h = 1e-7
    slope = (log_chi(h, ss, dim, n, s2) - log_chi(0.0, ss, dim, n, s2)) / h
    s = s_statistic(ss, dim, n, s2)
    assert slope == pytest.approx(-0.5 * dim * s, rel=1e-5)


def test_pooled_table1(table1, adapted):
    assert evidence_pooled(table1, 1.134).v == pytest.approx(56.88, abs=0.2)
    assert evidence_pooled(adapted, 1.168).v == pytest.approx(1.92, abs=0.02)


def test_pooled_above_threshold_is_one():
    s = make_study([0, 5, 1, 6], [[0, 1], [2, 3]], N=8)
    rep = evidence_pooled(s, 1.0)
    assert rep.s_values[0] >= s_threshold(4)
    assert rep.v == 1.0 and rep.rho_hats == (0.0,)


def test_pergroup_table1(table1):
    rep = evidence_pergroup(table1, 1.134)
    assert rep.v == pytest.approx(14.49, abs=0.05)
    assert rep.chi_values == pytest.approx([1.593, 1.122, 8.107], abs=1e-3)
    assert rep.rho_hats == pytest.approx([0.7537, 0.6175, 0.9368], abs=2e-4)


def test_pergroup_singleton_rejected():
    s = make_study([1, 2, 3], [[0, 1], [2]])
    with pytest.raises(ValidationError, match="group 1"):
        evidence_pergroup(s, 1.0)


def test_single_group_models_coincide(table1):
    one = StudySummary(table1.table, Grouping((table1.table.ids,)))
    a = evidence_pooled(one, 1.134)
    b = evidence_pergroup(one, 1.134)
    assert a.log_v == b.log_v
    assert a.s_values == b.s_values and a.rho_hats == b.rho_hats


def test_degenerate_scatter():
    s = make_study([2, 2, 2, 3, 3, 3], [[0, 1, 2], [3, 4, 5]])
    rep = evidence_pooled(s, 1.0)
    assert rep.v == math.inf and rep.degenerate == (True,)
    rep = evidence_pergroup(s, 1.0)
    assert rep.v == math.inf and all(rep.degenerate)


def test_combine():
    assert combine_studies([1, 7.5]) == pytest.approx(7.5)
    assert combine_studies([56.88, 1.92]) == pytest.approx(109.2096, abs=1e-4)
    assert combine_studies([math.inf, 3]) == math.inf
    with pytest.raises(DomainError):
        combine_studies([0.9, 2])


def test_posterior_odds():
    po = posterior_odds(1, 56.88)
    assert po.posterior == 56.88 and po.exceeds_one
    po = posterior_odds(0.01, 1.92)
    assert po.posterior == pytest.approx(0.0192) and not po.exceeds_one
    assert posterior_odds(3.0, 1.0).posterior == 3.0
    with pytest.raises(DomainError):
        posterior_odds(0, 2)


def test_stationarity_at_rho_hat():
    rng = np.random.default_rng(4)
    checked = 0
    while checked < 200:
        dim = int(rng.integers(2, 20))
        s = rng.uniform(0.01, s_threshold(dim))
        n, s2 = rng.uniform(2, 200), rng.uniform(0.1, 10)
        ss = s * dim * s2 / n
        r = rho_hat(s, dim)
        if r is None or r > 1 - 1e-3:
            continue
        h = 1e-6
        d = (log_chi(r + h, ss, dim, n, s2) - log_chi(r - h, ss, dim, n, s2)) / (2 * h)
        assert abs(d) < 1e-6 * max(1.0, dim)
        checked += 1


def test_monotone_in_ss():
    for dim in (4, 12):
        grid = np.linspace(1e-4, 0.5, 400)
        lv = [sup_log_chi(ss, dim, N, 1.134)[0] for ss in grid]
        assert np.all(np.diff(lv) <= 1e-12)


means_st = st.lists(st.floats(-100, 100, allow_nan=False), min_size=4, max_size=12)


@settings(max_examples=200, deadline=None)
@given(means_st, st.floats(0.01, 100), st.floats(2.5, 300), st.integers(1, 3))
def test_v_at_least_one(means, sigma2, n, K):
    K = min(K, len(means) // 2)
    groups = [list(range(k, len(means), K)) for k in range(K)]
    s = make_study(means, groups, N=n * len(means))
    assert evidence_pooled(s, sigma2).v >= 1.0
    assert evidence_pergroup(s, sigma2).v >= 1.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.floats(-50, 50), st.floats(0.2, 5))
def test_shift_and_scale_invariance(seed, shift, c):
    rng = np.random.default_rng(seed)
    x = rng.normal(0, 0.2, 8)
    groups = [[0, 1, 2, 3], [4, 5, 6, 7]]
    base = make_study(x, groups, N=200)
    moved = make_study(x + shift, groups, N=200)
    scaled = make_study(c * x, groups, N=200)
    for fn in (evidence_pooled, evidence_pergroup):
        a = fn(base, 0.5)
        for other, s2 in ((moved, 0.5), (scaled, 0.5 * c * c)):
            b = fn(other, s2)
            assert b.s_values == pytest.approx(a.s_values, rel=1e-9)
            assert b.log_v == pytest.approx(a.log_v, rel=1e-8, abs=1e-10)
