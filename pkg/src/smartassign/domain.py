"""Core entities: cells, mediators, cases and the bipartite accreditation graph."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import AccreditationGap

SHADOW_PREFIX = "~shadow:"


def is_shadow_id(case_id: str) -> bool:
    return case_id.startswith(SHADOW_PREFIX)


def shadow_id(n: int) -> str:
    return f"{SHADOW_PREFIX}{n}"


def id_sort_key(value: str):
    """Numeric ids sort numerically, everything else lexically after them."""
    try:
        return (0, int(value), "")
    except (TypeError, ValueError):
        return (1, 0, str(value))


@dataclass(frozen=True, order=True)
class Cell:
    """A (case type, court station) pair."""

    case_type: str
    station: str

    def __str__(self) -> str:
        return f"{self.case_type}@{self.station}"


@dataclass
class MediatorProfile:
    id: str
    accredited_cells: frozenset
    capacity: int = 3
    load: int = 0
    true_va: float | None = None

    def __post_init__(self):
        self.accredited_cells = frozenset(self.accredited_cells)
        if not self.accredited_cells:
            raise ValueError(f"mediator {self.id!r} has no accredited cells")
        if self.capacity < 0:
            raise ValueError(f"mediator {self.id!r}: capacity must be >= 0")
        if self.load < 0:
            raise ValueError(f"mediator {self.id!r}: load must be >= 0")
        if self.true_va is not None and not -1.0 <= self.true_va <= 1.0:
            raise ValueError(f"mediator {self.id!r}: true_va outside [-1, 1]")


@dataclass
class CaseRecord:
    id: str
    cell: Cell
    p: float
    arrival_time: float = 0.0
    referral_mode: str = "court"
    period: str = "0"
    assigned_mediator: str | None = None
    outcome: bool | None = None
    conclusion_time: float | None = None
    is_shadow: bool = False

    def __post_init__(self):
        self.check()

    def check(self) -> None:
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"case {self.id!r}: p={self.p} outside [0, 1]")
        if self.arrival_time < 0:
            raise ValueError(f"case {self.id!r}: negative arrival time")
        if self.conclusion_time is not None and self.conclusion_time < self.arrival_time:
            raise ValueError(f"case {self.id!r}: concludes before it arrives")
        if self.outcome is not None and (
            self.assigned_mediator is None or self.conclusion_time is None
        ):
            raise ValueError(f"case {self.id!r}: outcome without assignment/conclusion")
        if self.is_shadow and self.assigned_mediator is not None:
            raise ValueError(f"case {self.id!r}: shadow cases are never assigned")


@dataclass(frozen=True)
class StateGraph:
    """Bipartite accreditation graph over mediators and (real + shadow) cases.

    ``weights`` maps each edge to mu_u + p_v when the VAs were supplied at
    build time, and is empty otherwise.
    """

    mediator_nodes: tuple
    case_nodes: tuple
    edges: tuple
    weights: Mapping = field(default_factory=dict)

    def edges_of_case(self, case_id: str) -> list:
        return [e for e in self.edges if e[1] == case_id]

    def edges_of_mediator(self, mediator_id: str) -> list:
        return [e for e in self.edges if e[0] == mediator_id]

    @property
    def is_empty(self) -> bool:
        return not self.case_nodes and not self.mediator_nodes


def accreditation_index(mediators: Iterable[MediatorProfile]) -> dict:
    """Map each cell to the ids of mediators accredited for it, in roster order."""
    index = defaultdict(list)
    for m in mediators:
        for cell in m.accredited_cells:
            index[cell].append(m.id)
    return {cell: tuple(ids) for cell, ids in index.items()}


def accredited_mediators(case: CaseRecord, mediators: Iterable[MediatorProfile]) -> set:
    return {m.id for m in mediators if case.cell in m.accredited_cells}


def build_state_graph(
    real_cases: Sequence[CaseRecord],
    shadow_cases: Sequence[CaseRecord],
    mediators: Sequence[MediatorProfile],
    vas: Mapping | None = None,
    *,
    index: Mapping | None = None,
) -> StateGraph:
    """Add every case as a node and connect it to its accredited mediators.

    Raises AccreditationGap when a real case has no accredited mediator;
    shadow cases without edges are kept as isolated nodes.
    """
    if index is None:
        index = accreditation_index(mediators)
    case_nodes = []
    med_nodes = []
    seen = set()
    edges = []
    weights = {}
    for case in list(real_cases) + list(shadow_cases):
        case_nodes.append(case.id)
        accredited = index.get(case.cell, ())
        if not accredited and not case.is_shadow:
            raise AccreditationGap(f"no mediator is accredited for {case.cell} (case {case.id})")
        for u in accredited:
            if u not in seen:
                seen.add(u)
                med_nodes.append(u)
            edges.append((u, case.id))
            if vas is not None:
                weights[(u, case.id)] = float(vas[u]) + case.p
    return StateGraph(tuple(med_nodes), tuple(case_nodes), tuple(edges), weights)


def ceil_day(t: float) -> int:
    """Integer day on which an event at real time ``t`` is processed (t in (d-1, d] -> d)."""
    return max(1, int(math.ceil(t - 1e-12)))


class Roster:
    """Mediators plus the lookups policies need on every decision."""

    def __init__(self, mediators: Iterable[MediatorProfile]):
        self.mediators = list(mediators)
        self.by_id = {m.id: m for m in self.mediators}
        if len(self.by_id) != len(self.mediators):
            raise ValueError("duplicate mediator ids")
        self.index = accreditation_index(self.mediators)

    def accredited(self, cell: Cell) -> tuple:
        return self.index.get(cell, ())

    def __iter__(self):
        return iter(self.mediators)

    def __len__(self):
        return len(self.mediators)


def as_roster(mediators) -> Roster:
    return mediators if isinstance(mediators, Roster) else Roster(mediators)
