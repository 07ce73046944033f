import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smartassign.config import scenario_corpus
from smartassign.policies import PolicySpec
from smartassign.report import (
    Z_95,
    aggregate,
    allocation_bars,
    read_raw_dir,
    shadow_price_report,
    summarize,
    write_report,
)
from smartassign.simulator import CaseLogEntry, SimConfig, run_simulation


def fake_run(agreement, *, name="greedy_star", mode="known", penalty=None, seed=0, ocdm=0.0, gini=0.0,
             sums=None, n_solves=0, mids=("1", "2", "3")):
    meta = {"name": name, "va_mode": mode, "penalty": penalty, "penalty_kind": "quadratic"}
    return SimpleNamespace(agreement_rate=agreement, ocdm=ocdm, gini=gini, meta=meta, seed=seed,
                           mediator_ids=mids, shadow_price_sums=sums, n_solves=n_solves)


def sim(spec, seed=0, run_length=150):
    corpus = scenario_corpus(1)
    return run_simulation(SimConfig(corpus.mediators, corpus.arrival_model, corpus.duration_model, spec,
                                    run_length=run_length, seed=seed))


def test_single_seed_has_no_interval():
    row, = aggregate([fake_run(0.5)])
    assert row.n_seeds == 1
    assert row.agreement_rate.mean == 0.5 and row.agreement_rate.ci is None


def test_two_seed_mean():
    row, = aggregate([fake_run(0.4, seed=0), fake_run(0.6, seed=1)])
    assert row.agreement_rate.mean == pytest.approx(0.5)
    assert row.agreement_rate.half_width == pytest.approx(Z_95 * math.sqrt(0.02) / math.sqrt(2))


def test_thirty_seed_half_width():
    vals = np.random.default_rng(0).uniform(0.4, 0.7, 30)
    s = summarize(vals)
    assert s.half_width == pytest.approx(1.96 * np.std(vals, ddof=1) / math.sqrt(30), rel=1e-4)


def test_summarize_rejects_empty():
    with pytest.raises(ValueError):
        summarize([])


def test_rows_grouped_by_configuration():
    runs = [fake_run(0.5, name="smart", mode="known", penalty=lam, seed=s) for lam in (0.1, 0.01) for s in range(3)]
    runs.append(fake_run(0.4, name="least_load"))
    rows = aggregate(runs)
    assert [(r.policy, r.penalty) for r in rows] == [("least_load", None), ("smart", 0.01), ("smart", 0.1)]
    assert [r.n_seeds for r in rows] == [1, 3, 3]


@settings(max_examples=50)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=40), st.randoms(use_true_random=False))
def test_aggregate_ignores_seed_order(vals, rnd):
    runs = [fake_run(v, seed=k) for k, v in enumerate(vals)]
    shuffled = runs[:]
    rnd.shuffle(shuffled)
    a, = aggregate(runs)
    b, = aggregate(shuffled)
    assert a.agreement_rate == b.agreement_rate


def test_shadow_prices_zero_when_no_binding():
    runs = [fake_run(0.5, name="smart", penalty=0.1, sums=np.zeros(3), n_solves=40, seed=s) for s in range(2)]
    assert shadow_price_report(runs) == {(m, 0.1): 0.0 for m in "123"}


def test_shadow_prices_average_over_all_solves():
    runs = [
        fake_run(0.5, name="smart", penalty=0.5, sums=np.array([4.0, 2.0, 0.0]), n_solves=4, seed=0),
        fake_run(0.5, name="smart", penalty=0.5, sums=np.array([2.0, 0.0, 0.0]), n_solves=2, seed=1),
    ]
    prices = shadow_price_report(runs)
    assert prices[("1", 0.5)] == pytest.approx(1.0)
    assert prices[("2", 0.5)] == pytest.approx(2 / 6)


def _entry(cid, mid, load_after, cap=3, cell=("1", "A")):
    return CaseLogEntry(cid, cell[0], cell[1], 0.5, 0, mid, load_after, cap)


def test_allocation_bars_without_overload():
    log = [_entry(str(k), "1", 1 + k % 3) for k in range(6)]
    assert allocation_bars(log) == {"1": {("1@A", "within"): 6}}


def test_allocation_bars_partition_assignments():
    r = sim(PolicySpec("least_load"), run_length=300)
    bars = allocation_bars(r.case_log)
    for mid, counts in bars.items():
        assert sum(counts.values()) == sum(e.mediator_id == mid for e in r.case_log)
    assert sum(sum(c.values()) for c in bars.values()) == r.n_assigned


def test_allocation_bars_flag_overload():
    bars = allocation_bars([_entry("a", "1", 4), _entry("b", "1", 3), CaseLogEntry("c", "1", "A", 0.5, 0, None)])
    assert bars == {"1": {("1@A", "overloaded"): 1, ("1@A", "within"): 1}}


def test_report_outputs_and_raw_logs_recompute(tmp_path):
    runs = [sim(PolicySpec("smart", "known", 0.1), seed=s) for s in range(2)]
    runs += [sim(PolicySpec("greedy_star"), seed=s) for s in range(2)]
    tables = write_report(runs, tmp_path)
    for name in ("comparison.csv", "shadow_prices.csv", "allocations.csv"):
        assert (tmp_path / "tables" / name).exists()
    for name in ("comparison.svg", "shadow_prices.svg", "allocations.svg"):
        assert (tmp_path / "figures" / name).exists()
    assert len(tables["comparison"]) == 2
    raw = read_raw_dir(tmp_path / "raw")
    assert len(raw) == 4
    for rr in raw:
        for metric in ("agreement_rate", "ocdm", "gini"):
            assert getattr(rr, metric) == pytest.approx(rr.stored[metric], abs=1e-12)
    recomputed = {r.key: r for r in aggregate(raw)}
    for row in tables["comparison"]:
        assert recomputed[row.key].agreement_rate.mean == pytest.approx(row.agreement_rate.mean, abs=1e-12)


def test_report_files_are_deterministic(tmp_path):
    runs = [sim(PolicySpec("smart", "known", 0.5), seed=1)]
    write_report(runs, tmp_path / "a")
    write_report(runs, tmp_path / "b")
    for rel in ("tables/comparison.csv", "tables/shadow_prices.csv", "figures/comparison.svg"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
