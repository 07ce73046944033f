"""Day-stepped case assignment simulation and its summary metrics."""

from __future__ import annotations

import copy
import logging
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .belief import (
    DEFAULT_SIGMA_MU_SQ,
    VAR_FLOOR,
    GaussianBelief,
    posterior_update,
    recalibrate,
)
from .domain import CaseRecord, MediatorProfile, Roster, ceil_day
from .errors import AccreditationGap
from .policies import PolicySpec, VaMode
from .sampling import ArrivalModel, DurationModel, sample_duration, sample_outcome

log = logging.getLogger(__name__)

DAYS_PER_YEAR = 365
STREAMS = ("arrivals", "outcomes", "policy", "warm_start")


def compute_ocdm(daily_load_matrix, capacities, m: int | None = None, run_length: int | None = None) -> float:
    """Over-capacity days per mediator-year.

    ``daily_load_matrix`` is mediators x days; ``capacities`` has one entry
    per row.
    """
    loads = np.asarray(daily_load_matrix, dtype=float)
    if loads.ndim != 2:
        raise ValueError("daily load matrix must be 2-D (mediators x days)")
    caps = np.asarray(capacities, dtype=float).reshape(-1, 1)
    if caps.shape[0] != loads.shape[0]:
        raise ValueError("one capacity per mediator row is required")
    m = loads.shape[0] if m is None else m
    run_length = loads.shape[1] if run_length is None else run_length
    if m <= 0 or run_length <= 0:
        return 0.0
    over = np.maximum(loads - caps, 0.0).sum()
    return float(DAYS_PER_YEAR / (m * run_length) * over)


def compute_gini(caseloads) -> float:
    """Gini coefficient, mean absolute pairwise difference over twice the mean."""
    x = np.sort(np.asarray(caseloads, dtype=float))
    n = x.size
    if n == 0:
        raise ValueError("at least one mediator is required")
    if np.any(x < 0):
        raise ValueError("caseloads must be nonnegative")
    total = x.sum()
    if total == 0:
        return 0.0
    # sum_{i,k} |x_i - x_k| = 2 * sum_i (2i - n - 1) x_(i) with 1-based ranks on sorted x
    ranks = np.arange(1, n + 1)
    pair_sum = 2.0 * np.dot(2 * ranks - n - 1, x)
    return float(pair_sum / (2 * n * total))


@dataclass
class CaseLogEntry:
    id: str
    case_type: str
    station: str
    p: float
    arrival_day: int
    mediator_id: str | None
    load_after: int | None = None
    capacity: int | None = None
    outcome: bool | None = None
    duration: float | None = None
    conclusion_day: int | None = None

    @property
    def assigned(self) -> bool:
        return self.mediator_id is not None

    def concluded_by(self, day: int) -> bool:
        return self.conclusion_day is not None and self.conclusion_day <= day


@dataclass
class SimConfig:
    mediators: Sequence[MediatorProfile]
    arrival_model: ArrivalModel
    duration_model: DurationModel
    policy: PolicySpec
    run_length: int = 365
    horizon: int = 10
    recalibration_period: int = 7
    seed: int = 0
    belief_init: str = "blank"
    history: Sequence[CaseRecord] = ()
    sigma_mu_sq: float = DEFAULT_SIGMA_MU_SQ
    record_shadow_traces: bool = False

    def __post_init__(self):
        if self.run_length < 1:
            raise ValueError("run length must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.recalibration_period < 0:
            raise ValueError("recalibration period must be >= 0")
        if self.belief_init not in ("blank", "warm"):
            raise ValueError("belief_init must be 'blank' or 'warm'")
        ids = [m.id for m in self.mediators]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate mediator ids")
        needs_truth = self.policy.va_mode is VaMode.KNOWN or self.policy.name == "upper_bound"
        if needs_truth or self.belief_init == "warm":
            missing = [m.id for m in self.mediators if m.true_va is None]
            if missing:
                raise ValueError(f"true VAs required but missing for {missing[:5]}")


@dataclass
class SimResult:
    policy: str
    seed: int
    run_length: int
    mediator_ids: tuple
    capacities: np.ndarray
    agreement_rate: float
    ocdm: float
    gini: float
    n_arrivals: int
    n_assigned: int
    n_concluded: int
    n_resolved: int
    n_unassignable: int
    daily_load_matrix: np.ndarray
    case_log: list
    caseloads: np.ndarray
    shadow_price_sums: np.ndarray | None = None
    n_solves: int = 0
    shadow_traces: list | None = None
    meta: dict = field(default_factory=dict)

    @property
    def zero_cases(self) -> bool:
        return self.n_concluded == 0

    @property
    def mean_shadow_prices(self) -> dict:
        if self.shadow_price_sums is None or self.n_solves == 0:
            return {}
        return dict(zip(self.mediator_ids, (self.shadow_price_sums / self.n_solves).tolist()))


def spawn_streams(seed: int) -> dict:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(s) for name, s in zip(STREAMS, children)}


def _point_beliefs(mediators) -> dict:
    return {m.id: GaussianBelief(m.true_va, VAR_FLOOR) for m in mediators}


def replay_history(
    historical_cases: Sequence[CaseRecord],
    true_vas: Mapping,
    rng: np.random.Generator,
    sigma_mu_sq: float = DEFAULT_SIGMA_MU_SQ,
) -> tuple:
    """Resample historical outcomes under ``true_vas`` and learn from them in order.

    Returns ``(beliefs, resampled_cases)``. Cases are replayed by conclusion
    time (arrival time when absent). Mediators without history keep the prior.
    """
    beliefs = {mid: GaussianBelief.prior(sigma_mu_sq) for mid in true_vas}
    usable = [c for c in historical_cases if c.assigned_mediator is not None]
    usable.sort(key=lambda c: (c.conclusion_time if c.conclusion_time is not None else c.arrival_time, c.id))
    resampled = []
    for c in usable:
        mid = c.assigned_mediator
        if mid not in true_vas:
            continue
        y = sample_outcome(c.p, true_vas[mid], rng)
        b = beliefs.get(mid) or GaussianBelief.prior(sigma_mu_sq)
        beliefs[mid] = posterior_update(b, c.p, y)
        conclusion = c.conclusion_time if c.conclusion_time is not None else c.arrival_time
        resampled.append(replace(c, outcome=y, conclusion_time=conclusion))
    beliefs = {k: GaussianBelief(b.mean, b.var) for k, b in beliefs.items()}
    return beliefs, resampled


def warm_start_beliefs(historical_cases, true_vas, rng, sigma_mu_sq: float = DEFAULT_SIGMA_MU_SQ) -> dict:
    return replay_history(historical_cases, true_vas, rng, sigma_mu_sq)[0]


def loads_from_case_log(case_log, mediator_ids, run_length: int) -> np.ndarray:
    """Rebuild the end-of-day load matrix from assignment and conclusion days."""
    pos = {mid: i for i, mid in enumerate(mediator_ids)}
    diff = np.zeros((len(mediator_ids), run_length + 2), dtype=np.int64)
    for e in case_log:
        if e.mediator_id is None:
            continue
        start = e.arrival_day
        stop = run_length + 1 if e.conclusion_day is None else min(e.conclusion_day, run_length + 1)
        if stop <= start:
            continue
        i = pos[e.mediator_id]
        diff[i, start] += 1
        diff[i, stop] -= 1
    return np.cumsum(diff, axis=1)[:, 1 : run_length + 1]


def run_simulation(config: SimConfig) -> SimResult:
    """Simulate ``config.run_length`` days of arrivals, assignments and conclusions.

    Each day: arrivals are drawn per cell (cells in sorted order) and assigned
    one at a time; then cases concluding that day release capacity and reveal
    outcomes to the learner; then beliefs are recalibrated on every
    ``recalibration_period``-th day; finally loads are snapshotted.

    Outcomes and durations come from a dedicated stream, one uniform and one
    normal draw per assigned case, so different policies facing the same
    seed see the same arrival sequence and comparable outcome noise.
    """
    streams = spawn_streams(config.seed)
    arr_rng, out_rng, pol_rng = streams["arrivals"], streams["outcomes"], streams["policy"]
    mediators = [copy.copy(m) for m in config.mediators]
    for m in mediators:
        m.load = 0
    roster = Roster(mediators)
    ids = tuple(m.id for m in mediators)
    pos = {mid: i for i, mid in enumerate(ids)}
    caps = np.array([m.capacity for m in mediators], dtype=np.int64)
    true_va = {m.id: m.true_va for m in mediators}
    spec = config.policy
    am = config.arrival_model

    history = []
    if config.belief_init == "warm":
        beliefs, history = replay_history(
            config.history, true_va, streams["warm_start"], config.sigma_mu_sq
        )
    else:
        history = [c for c in config.history if c.outcome is not None and c.assigned_mediator is not None]
        beliefs = {mid: GaussianBelief.prior(config.sigma_mu_sq) for mid in ids}
    if spec.va_mode is VaMode.KNOWN:
        beliefs = _point_beliefs(mediators)
    learning = spec.learns

    T = config.run_length
    loads = np.zeros((len(ids), T), dtype=np.int32)
    caseloads = np.zeros(len(ids), dtype=np.int64)
    case_log = []
    pending = defaultdict(list)
    price_sums = np.zeros(len(ids)) if spec.name == "smart" else None
    n_solves = 0
    traces = [] if config.record_shadow_traces and spec.name == "smart" else None
    n_unassignable = 0
    n_resolved = n_concluded = 0
    serial = 0

    for day in range(1, T + 1):
        counts = arr_rng.poisson(am.rate_array)
        for cpos in np.flatnonzero(counts):
            cell = am.cells[cpos]
            for _ in range(int(counts[cpos])):
                p = am.draw_p(cpos, arr_rng)
                mode = am.draw_mode(arr_rng)
                case = CaseRecord(str(serial), cell, p, arrival_time=float(day), referral_mode=mode, period="sim")
                serial += 1
                try:
                    decision = spec.decide(case, roster, beliefs, am, pol_rng, config.horizon)
                except AccreditationGap:
                    n_unassignable += 1
                    case_log.append(CaseLogEntry(case.id, cell.case_type, cell.station, p, day, None))
                    continue
                mid = decision.mediator_id
                med = roster.by_id[mid]
                med.load += 1
                caseloads[pos[mid]] += 1
                if price_sums is not None and decision.shadow_prices is not None:
                    n_solves += 1
                    for u, v in decision.shadow_prices.items():
                        price_sums[pos[u]] += v
                    if traces is not None:
                        traces.append((day, decision.shadow_prices))
                y = sample_outcome(p, true_va[mid] if true_va[mid] is not None else 0.0, out_rng)
                dur = sample_duration(config.duration_model, cell.case_type, y, out_rng)
                end = ceil_day(day + dur)
                entry = CaseLogEntry(
                    case.id, cell.case_type, cell.station, p, day, mid,
                    load_after=med.load, capacity=med.capacity, outcome=y, duration=dur, conclusion_day=end,
                )
                case_log.append(entry)
                case.assigned_mediator = mid
                pending[end].append((case, y, day + dur))

        for case, y, t_end in pending.pop(day, ()):
            mid = case.assigned_mediator
            roster.by_id[mid].load -= 1
            case.outcome = y
            case.conclusion_time = t_end
            history.append(case)
            n_concluded += 1
            n_resolved += int(y)
            if learning:
                beliefs[mid] = posterior_update(beliefs[mid], case.p, y)

        if learning and config.recalibration_period and day % config.recalibration_period == 0:
            beliefs = recalibrate(beliefs, history, default_sigma_mu_sq=config.sigma_mu_sq)

        loads[:, day - 1] = [m.load for m in mediators]

    return SimResult(
        policy=spec.label,
        seed=config.seed,
        run_length=T,
        mediator_ids=ids,
        capacities=caps,
        agreement_rate=n_resolved / n_concluded if n_concluded else 0.0,
        ocdm=compute_ocdm(loads, caps, len(ids), T),
        gini=compute_gini(caseloads),
        n_arrivals=serial,
        n_assigned=int(caseloads.sum()),
        n_concluded=n_concluded,
        n_resolved=n_resolved,
        n_unassignable=n_unassignable,
        daily_load_matrix=loads,
        case_log=case_log,
        caseloads=caseloads,
        shadow_price_sums=price_sums,
        n_solves=n_solves,
        shadow_traces=traces,
        meta={
            "name": spec.name,
            "va_mode": spec.va_mode.value,
            "penalty": spec.penalty,
            "penalty_kind": spec.penalty_kind.value,
        },
    )


def run_many(configs: Sequence[SimConfig], workers: int = 1) -> list:
    """Run independent configurations, in parallel when ``workers > 1``; order is preserved."""
    if workers <= 1 or len(configs) <= 1:
        return [run_simulation(c) for c in configs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_simulation, configs))
