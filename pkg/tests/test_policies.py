import copy
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from smartassign.belief import VAR_FLOOR, GaussianBelief
from smartassign.config import scenario_corpus
from smartassign.domain import Cell, MediatorProfile
from smartassign.errors import AccreditationGap
from smartassign.policies import (
    PolicySpec,
    VaMode,
    greedy_star_assign,
    least_load_assign,
    sample_shadow_cases,
    smart_assign,
    thompson_star_assign,
    upper_bound_assign,
)
from smartassign.sampling import ArrivalModel

from conftest import CELL_A, CELL_B, make_case, make_mediator


def with_loads(mediators, loads):
    out = copy.deepcopy(mediators)
    for m in out:
        m.load = loads.get(m.id, 0)
    return out


def point_beliefs(mediators):
    return {m.id: GaussianBelief(m.true_va, VAR_FLOOR) for m in mediators}


def arrivals():
    return scenario_corpus(1).arrival_model


def test_smart_single_accredited_mediator(scenario1):
    d = smart_assign(make_case(cell=CELL_B), scenario1, {}, arrivals(), 0.1, rng=np.random.default_rng(0))
    assert d.mediator_id == "1"
    assert d.fractional == {"1": pytest.approx(1.0, abs=1e-6)}


def test_smart_low_penalty_prefers_best(scenario1):
    d = smart_assign(make_case(), scenario1, {}, arrivals(), 0.01, rng=np.random.default_rng(0))
    assert d.mediator_id == "1"
    assert d.qp_status == "optimal" and set(d.shadow_prices) >= {"1"}


def test_smart_high_penalty_spares_full_mediator(scenario1):
    meds = with_loads(scenario1, {"1": 3})
    picks = Counter(
        smart_assign(make_case(), meds, {}, arrivals(), 0.5, rng=np.random.default_rng(s)).mediator_id
        for s in range(200)
    )
    assert picks["2"] + picks["3"] > 100


def test_smart_mean_mode_with_point_beliefs_matches_known(scenario1):
    am = arrivals()
    beliefs = point_beliefs(scenario1)
    for s in range(30):
        loads = {u: int(np.random.default_rng(1000 + s).integers(0, 5)) for u in "123"}
        meds = with_loads(scenario1, loads)
        a = smart_assign(make_case(), meds, beliefs, am, 0.1, mode=VaMode.KNOWN, rng=np.random.default_rng(s))
        b = smart_assign(make_case(), meds, beliefs, am, 0.1, mode=VaMode.MEAN, rng=np.random.default_rng(s))
        assert a.mediator_id == b.mediator_id


def test_shadow_cases_none_at_zero_rate():
    am = ArrivalModel({CELL_A: 0.0}, {CELL_A: 0.5})
    assert sample_shadow_cases(am, 10, np.random.default_rng(0)) == []


def test_shadow_case_count_and_days():
    am = ArrivalModel({CELL_A: 0.3}, {CELL_A: 0.45})
    rng = np.random.default_rng(0)
    counts, days = [], set()
    for _ in range(10_000):
        shadows = sample_shadow_cases(am, 10, rng)
        counts.append(len(shadows))
        days.update(s.arrival_time for s in shadows)
        assert all(s.is_shadow and s.p == 0.45 for s in shadows)
    assert np.mean(counts) == pytest.approx(3.0, abs=0.1)
    assert days <= set(float(d) for d in range(1, 11))


def test_least_load_picks_minimum(scenario1):
    meds = with_loads(scenario1, {"1": 2, "2": 0, "3": 1})
    assert least_load_assign(make_case(), meds, np.random.default_rng(0)).mediator_id == "2"


def test_least_load_uniform_ties(scenario1):
    rng = np.random.default_rng(0)
    counts = Counter(least_load_assign(make_case(), scenario1, rng).mediator_id for _ in range(10_000))
    assert stats.chisquare([counts[u] for u in "123"]).pvalue > 0.001


def test_least_load_single_accredited():
    meds = [make_mediator("1", [CELL_B], load=0), make_mediator("3", [CELL_A], load=9)]
    assert least_load_assign(make_case(), meds, np.random.default_rng(0)).mediator_id == "3"


def test_greedy_empty_loads(scenario1):
    assert greedy_star_assign(make_case(), scenario1, point_beliefs(scenario1), None).mediator_id == "1"


def test_greedy_skips_full_mediator(scenario1):
    meds = with_loads(scenario1, {"1": 3, "2": 1})
    assert greedy_star_assign(make_case(), meds, point_beliefs(meds), None).mediator_id == "2"


def test_greedy_equal_overload(scenario1):
    meds = with_loads(scenario1, {"1": 4, "2": 4, "3": 4})
    assert greedy_star_assign(make_case(), meds, point_beliefs(meds), None).mediator_id == "1"


def test_thompson_point_masses_equal_greedy(scenario1):
    rng = np.random.default_rng(0)
    for loads in ({}, {"1": 3}, {"1": 3, "2": 3}, {"1": 5, "2": 4, "3": 4}):
        meds = with_loads(scenario1, loads)
        b = point_beliefs(meds)
        assert thompson_star_assign(make_case(), meds, b, rng).mediator_id == \
            greedy_star_assign(make_case(), meds, b, rng).mediator_id


def test_thompson_separated_beliefs():
    meds = [make_mediator("a"), make_mediator("b")]
    b = {"a": GaussianBelief(0.1, 1e-6), "b": GaussianBelief(0.0, 1e-6)}
    rng = np.random.default_rng(0)
    wins = sum(thompson_star_assign(make_case(), meds, b, rng).mediator_id == "a" for _ in range(10_000))
    assert wins > 9990


def test_thompson_wide_versus_narrow():
    meds = [make_mediator("wide"), make_mediator("narrow")]
    b = {"wide": GaussianBelief(0.0, 0.04), "narrow": GaussianBelief(0.05, 1e-6)}
    rng = np.random.default_rng(0)
    rate = np.mean([thompson_star_assign(make_case(), meds, b, rng).mediator_id == "wide" for _ in range(10_000)])
    assert rate == pytest.approx(stats.norm.sf(0.25), abs=0.02)


def test_upper_bound(scenario1):
    assert upper_bound_assign(make_case(cell=CELL_A), with_loads(scenario1, {"1": 9})).mediator_id == "1"
    assert upper_bound_assign(make_case(cell=CELL_B), scenario1).mediator_id == "1"


def test_upper_bound_ties_by_lowest_id():
    meds = [make_mediator("10", va=0.0), make_mediator("2", va=0.0), make_mediator("7", va=-0.1)]
    assert upper_bound_assign(make_case(), meds).mediator_id == "2"


def test_accreditation_gap_everywhere(scenario1):
    case = make_case(cell=Cell("9", "Z"))
    rng = np.random.default_rng(0)
    for call in (
        lambda: least_load_assign(case, scenario1, rng),
        lambda: greedy_star_assign(case, scenario1, {}, rng),
        lambda: thompson_star_assign(case, scenario1, {}, rng),
        lambda: upper_bound_assign(case, scenario1),
        lambda: smart_assign(case, scenario1, {}, arrivals(), 0.1, rng=rng),
    ):
        with pytest.raises(AccreditationGap):
            call()


def test_spec_validation_and_labels():
    assert PolicySpec("smart", "sampled", 0.05).label == "smart/sampled/0.05"
    assert PolicySpec("smart", "known", 0.1, "linear-approximation").label == "smart/known/0.1/lp"
    assert PolicySpec("least_load", penalty=0.3).penalty is None
    assert PolicySpec("thompson_star", "sampled").learns
    assert not PolicySpec("least_load", "mean").learns
    with pytest.raises(ValueError):
        PolicySpec("smart", "known")
    with pytest.raises(ValueError):
        PolicySpec("random")


@st.composite
def rosters(draw):
    cells = [Cell("1", s) for s in "ABC"]
    n = draw(st.integers(1, 5))
    meds = []
    for k in range(n):
        own = draw(st.sets(st.sampled_from(cells), min_size=1))
        meds.append(MediatorProfile(str(k), own, draw(st.integers(0, 3)), draw(st.integers(0, 6)),
                                    draw(st.floats(-0.3, 0.3))))
    return meds, draw(st.sampled_from(cells)), draw(st.integers(0, 2**32 - 1))


@settings(max_examples=60, deadline=None)
@given(rosters(), st.sampled_from(["least_load", "greedy_star", "thompson_star", "upper_bound", "smart"]))
def test_accreditation_safety_and_tiers(roster_case, name):
    meds, cell, seed = roster_case
    case = make_case(cell=cell)
    eligible = [m for m in meds if cell in m.accredited_cells]
    spec = PolicySpec(name, "known" if name != "thompson_star" else "sampled", 0.1 if name == "smart" else None)
    am = ArrivalModel({c: 0.2 for c in {Cell("1", s) for s in "ABC"}}, {c: 0.5 for c in {Cell("1", s) for s in "ABC"}})
    beliefs = {m.id: GaussianBelief(m.true_va, 0.01) for m in meds}
    if not eligible:
        with pytest.raises(AccreditationGap):
            spec.decide(case, meds, beliefs, am, np.random.default_rng(seed))
        return
    chosen = spec.decide(case, meds, beliefs, am, np.random.default_rng(seed)).mediator_id
    assert chosen in {m.id for m in eligible}
    if name in ("greedy_star", "thompson_star"):
        tier = lambda m: max(m.load - m.capacity, -1) + 1  # noqa: E731
        by_id = {m.id: m for m in meds}
        assert tier(by_id[chosen]) == min(tier(m) for m in eligible)
