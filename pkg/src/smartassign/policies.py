"""Assignment policies: SMaRT and the benchmark baselines.

Every policy takes the arriving case and the current mediator roster (with
live loads) and returns a PolicyDecision naming an accredited mediator.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .assignment import PenaltyKind, build_qp, extract_shadow_prices, solve
from .belief import GaussianBelief, sample_va
from .domain import CaseRecord, as_roster, build_state_graph, id_sort_key, shadow_id
from .errors import AccreditationGap, MaxIterations
from .sampling import ArrivalModel

QP_TIE_TOL = 1e-6


class VaMode(str, enum.Enum):
    KNOWN = "known"
    MEAN = "mean"
    SAMPLED = "sampled"


@dataclass
class PolicyDecision:
    mediator_id: str
    fractional: dict | None = None
    shadow_prices: dict | None = None
    qp_status: str | None = None


def _accredited(case, roster) -> tuple:
    ids = roster.accredited(case.cell)
    if not ids:
        raise AccreditationGap(f"no mediator is accredited for {case.cell} (case {case.id})")
    return ids


def _break_ties(candidates, roster, rng) -> str:
    if len(candidates) == 1:
        return candidates[0]
    low = min(roster.by_id[u].load for u in candidates)
    candidates = [u for u in candidates if roster.by_id[u].load == low]
    if len(candidates) == 1:
        return candidates[0]
    return candidates[int(rng.integers(len(candidates)))]


def _overload_tier(m) -> int:
    # under capacity -> 0, at capacity -> 1, one over -> 2, ...
    return max(m.load - m.capacity, -1) + 1


def _belief_mean(beliefs, u) -> float:
    b = beliefs.get(u)
    return b.mean if b is not None else 0.0


def least_load_assign(case: CaseRecord, mediators, rng: np.random.Generator) -> PolicyDecision:
    roster = as_roster(mediators)
    ids = _accredited(case, roster)
    low = min(roster.by_id[u].load for u in ids)
    tied = [u for u in ids if roster.by_id[u].load == low]
    choice = tied[0] if len(tied) == 1 else tied[int(rng.integers(len(tied)))]
    return PolicyDecision(choice)


def _tiered_argmax(ids, roster, scores, rng) -> str:
    tiers = {u: _overload_tier(roster.by_id[u]) for u in ids}
    best_tier = min(tiers.values())
    pool = [u for u in ids if tiers[u] == best_tier]
    top = max(scores[u] for u in pool)
    return _break_ties([u for u in pool if scores[u] == top], roster, rng)


def greedy_star_assign(case: CaseRecord, mediators, beliefs, rng: np.random.Generator) -> PolicyDecision:
    """Highest mean VA belief among the least-overloaded accredited mediators."""
    roster = as_roster(mediators)
    ids = _accredited(case, roster)
    scores = {u: _belief_mean(beliefs, u) for u in ids}
    return PolicyDecision(_tiered_argmax(ids, roster, scores, rng))


def thompson_star_assign(case: CaseRecord, mediators, beliefs, rng: np.random.Generator) -> PolicyDecision:
    """As greedy_star_assign, but ranking by one fresh belief sample per mediator."""
    roster = as_roster(mediators)
    ids = _accredited(case, roster)
    scores = {u: sample_va(beliefs.get(u) or GaussianBelief(), rng) for u in ids}
    return PolicyDecision(_tiered_argmax(ids, roster, scores, rng))


def upper_bound_assign(case: CaseRecord, mediators) -> PolicyDecision:
    """Best true VA among accredited mediators, ignoring load."""
    roster = as_roster(mediators)
    ids = _accredited(case, roster)
    for u in ids:
        if roster.by_id[u].true_va is None:
            raise ValueError(f"mediator {u} has no true VA")
    best = min(ids, key=lambda u: (-roster.by_id[u].true_va, id_sort_key(u)))
    return PolicyDecision(best)


def sample_shadow_cases(arrival_model: ArrivalModel, horizon: int, rng: np.random.Generator) -> list:
    """Hypothetical future arrivals over (0, horizon], arrival days rounded up."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    counts = rng.poisson(arrival_model.rate_array * horizon)
    total = int(counts.sum())
    if total == 0:
        return []
    times = np.ceil(horizon - rng.uniform(0.0, horizon, size=total)).astype(int)
    times = np.clip(times, 1, horizon)
    out = []
    k = 0
    for pos in np.flatnonzero(counts):
        cell = arrival_model.cells[pos]
        p = float(arrival_model.p_array[pos])
        for _ in range(int(counts[pos])):
            out.append(
                CaseRecord(shadow_id(k), cell, p, arrival_time=float(times[k]), is_shadow=True)
            )
            k += 1
    return out


def resolve_vas(mediator_ids, roster, beliefs, mode: VaMode, rng) -> dict:
    mode = VaMode(mode)
    if mode is VaMode.KNOWN:
        vas = {}
        for u in mediator_ids:
            va = roster.by_id[u].true_va
            if va is None:
                raise ValueError(f"known-VA mode needs a true VA for mediator {u}")
            vas[u] = va
        return vas
    if mode is VaMode.MEAN:
        return {u: _belief_mean(beliefs, u) for u in mediator_ids}
    return {u: sample_va(beliefs.get(u) or GaussianBelief(), rng) for u in mediator_ids}


def smart_assign(
    case: CaseRecord,
    mediators,
    beliefs,
    arrival_model: ArrivalModel,
    penalty: float,
    horizon: int = 10,
    mode: VaMode = VaMode.KNOWN,
    rng: np.random.Generator | None = None,
    *,
    penalty_kind=PenaltyKind.QUADRATIC,
    tol: float = 1e-6,
) -> PolicyDecision:
    """Solve the soft-capacity program for this arrival plus sampled shadow cases.

    The case goes to the accredited mediator with the largest fractional
    assignment; near-ties go to the lower load, then to the rng.
    """
    if rng is None:
        rng = np.random.default_rng()
    roster = as_roster(mediators)
    ids = _accredited(case, roster)
    shadows = sample_shadow_cases(arrival_model, horizon, rng)
    graph = build_state_graph([case], shadows, roster.mediators, index=roster.index)
    vas = resolve_vas(graph.mediator_nodes, roster, beliefs, mode, rng)
    ps = {case.id: case.p}
    arrivals = {case.id: 0.0}
    for s in shadows:
        ps[s.id] = s.p
        arrivals[s.id] = s.arrival_time
    loads = {u: roster.by_id[u].load for u in graph.mediator_nodes}
    caps = {u: roster.by_id[u].capacity for u in graph.mediator_nodes}
    instance = build_qp(graph, vas, ps, loads, caps, penalty, horizon, arrivals, penalty_kind)
    try:
        solution = solve(instance, tol=tol)
    except MaxIterations as exc:
        solution = exc.solution
    n_real_edges = len(ids)  # the real case is the first case node, its edges come first
    frac = dict(zip(ids, solution.x_array[:n_real_edges].tolist()))
    top = max(frac.values())
    winner = _break_ties([u for u in ids if frac[u] >= top - QP_TIE_TOL], roster, rng)
    prices = extract_shadow_prices(solution, instance) if solution.status == "optimal" else None
    return PolicyDecision(winner, frac, prices, solution.status)


POLICY_NAMES = ("least_load", "greedy_star", "thompson_star", "upper_bound", "smart")


@dataclass(frozen=True)
class PolicySpec:
    """Policy selection as it appears in run configs.

    ``va_mode`` is the VA source: ``known`` uses true VAs; ``mean`` and
    ``sampled`` use learned beliefs. For SMaRT it also selects between
    belief means and belief samples.
    """

    name: str
    va_mode: VaMode = VaMode.KNOWN
    penalty: float | None = None
    penalty_kind: PenaltyKind = PenaltyKind.QUADRATIC

    def __post_init__(self):
        if self.name not in POLICY_NAMES:
            raise ValueError(f"unknown policy {self.name!r}; expected one of {POLICY_NAMES}")
        object.__setattr__(self, "va_mode", VaMode(self.va_mode))
        object.__setattr__(self, "penalty_kind", PenaltyKind(self.penalty_kind))
        if self.name == "smart":
            if self.penalty is None or not self.penalty >= 0 or math.isinf(self.penalty):
                raise ValueError("smart needs a finite penalty >= 0")
        elif self.penalty is not None:
            object.__setattr__(self, "penalty", None)

    @property
    def learns(self) -> bool:
        return self.va_mode is not VaMode.KNOWN and self.name in ("greedy_star", "thompson_star", "smart")

    @property
    def label(self) -> str:
        parts = [self.name, self.va_mode.value]
        if self.penalty is not None:
            parts.append(f"{self.penalty:g}")
        if self.name == "smart" and self.penalty_kind is PenaltyKind.LINEAR:
            parts.append("lp")
        return "/".join(parts)

    def decide(self, case, roster, beliefs, arrival_model, rng, horizon=10) -> PolicyDecision:
        if self.name == "least_load":
            return least_load_assign(case, roster, rng)
        if self.name == "upper_bound":
            return upper_bound_assign(case, roster)
        if self.name == "greedy_star":
            return greedy_star_assign(case, roster, beliefs, rng)
        if self.name == "thompson_star":
            return thompson_star_assign(case, roster, beliefs, rng)
        return smart_assign(
            case, roster, beliefs, arrival_model, self.penalty, horizon, self.va_mode, rng,
            penalty_kind=self.penalty_kind,
        )
