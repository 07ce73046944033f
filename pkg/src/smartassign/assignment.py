"""Soft-capacity assignment program over the accreditation graph.

Variables are the fractional assignments ``x_e`` (one per edge) and the
per-mediator overload slacks ``xi_u``. The program maximises

    sum_e x_e (mu_u + p_v) - penalty * sum_u xi_u**2

(or ``penalty * sum_u xi_u * L(u)`` for the linear approximation) subject to

    C1  sum_{e in E(v)} x_e = 1                       real cases
    C2  sum_{e in E(v)} x_e <= 1                      shadow cases
    C3  L(u) + sum_{e in E(u)} x_e [t_a(v) <= t] <= C(u) + xi_u    all u, t in 1..T
    C4  0 <= x_e <= 1
    C5  0 <= xi_u <= L(u) + 1
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping

import clarabel
import numpy as np
import scipy.sparse as sp

from .domain import StateGraph, is_shadow_id
from .errors import Infeasible, InvalidHorizon, MaxIterations, NoAccreditedMediator, TooLarge

DEFAULT_TOL = 1e-6
MAX_ITER = 500
BRUTE_FORCE_MAX_EDGES = 12
FORMAT_VERSION = 1


class PenaltyKind(str, enum.Enum):
    QUADRATIC = "quadratic"
    LINEAR = "linear-approximation"


@dataclass(eq=False)
class QpInstance:
    graph: StateGraph
    horizon: int
    penalty: float
    loads: Mapping
    capacities: Mapping
    arrival_times: Mapping
    vas: Mapping
    ps: Mapping
    penalty_kind: PenaltyKind = PenaltyKind.QUADRATIC
    real_case_ids: frozenset = field(init=False)
    shadow_case_ids: frozenset = field(init=False)

    def __post_init__(self):
        self.penalty_kind = PenaltyKind(self.penalty_kind)
        g = self.graph
        self.real_case_ids = frozenset(v for v in g.case_nodes if not is_shadow_id(v))
        self.shadow_case_ids = frozenset(v for v in g.case_nodes if is_shadow_id(v))
        med_pos = {u: i for i, u in enumerate(g.mediator_nodes)}
        case_pos = {v: i for i, v in enumerate(g.case_nodes)}
        self.edge_med = np.array([med_pos[u] for u, _ in g.edges], dtype=np.int64)
        self.edge_case = np.array([case_pos[v] for _, v in g.edges], dtype=np.int64)
        self.rewards = np.array(
            [float(self.vas[u]) + float(self.ps[v]) for u, v in g.edges], dtype=float
        )
        self.L = np.array([float(self.loads[u]) for u in g.mediator_nodes], dtype=float)
        self.C = np.array([float(self.capacities[u]) for u in g.mediator_nodes], dtype=float)
        self.case_arrival = np.array([float(self.arrival_times[v]) for v in g.case_nodes], dtype=float)
        self.case_is_real = np.array([not is_shadow_id(v) for v in g.case_nodes], dtype=bool)
        # first timestep at which each edge's case counts against capacity
        first_t = np.maximum(1, np.ceil(self.case_arrival - 1e-12)).astype(np.int64)
        self.edge_first_t = first_t[self.edge_case] if len(self.edge_case) else np.zeros(0, np.int64)

    # sizes -----------------------------------------------------------------
    @property
    def n_edges(self) -> int:
        return len(self.graph.edges)

    @property
    def n_mediators(self) -> int:
        return len(self.graph.mediator_nodes)

    @property
    def n_c1_rows(self) -> int:
        return int(self.case_is_real.sum())

    @property
    def n_c2_rows(self) -> int:
        return int((~self.case_is_real).sum())

    @property
    def n_c3_rows(self) -> int:
        return self.n_mediators * self.horizon

    # matrices ----------------------------------------------------------------
    def case_incidence(self) -> sp.csr_matrix:
        n_e = self.n_edges
        return sp.csr_matrix(
            (np.ones(n_e), (self.edge_case, np.arange(n_e))),
            shape=(len(self.graph.case_nodes), n_e),
        )

    def mediator_incidence(self) -> sp.csr_matrix:
        n_e = self.n_edges
        return sp.csr_matrix(
            (np.ones(n_e), (self.edge_med, np.arange(n_e))), shape=(self.n_mediators, n_e)
        )

    def c3_matrix(self) -> sp.csr_matrix:
        """Full C3 coefficient block, row ``u * T + (t - 1)`` for mediator u, timestep t."""
        T = self.horizon
        span = T + 1 - self.edge_first_t
        cols = np.repeat(np.arange(self.n_edges), span)
        # t runs from edge_first_t[e] to T for each edge
        offsets = np.arange(cols.size) - np.repeat(np.cumsum(span) - span, span)
        rows = self.edge_med[cols] * T + self.edge_first_t[cols] - 1 + offsets
        return sp.csr_matrix(
            (np.ones(cols.size), (rows, cols)), shape=(self.n_c3_rows, self.n_edges)
        )

    def c3_rows(self) -> list:
        return [(u, t) for u in self.graph.mediator_nodes for t in range(1, self.horizon + 1)]

    def slack_cost(self) -> np.ndarray:
        """Per-mediator coefficient of the overload penalty."""
        if self.penalty_kind is PenaltyKind.QUADRATIC:
            return np.full(self.n_mediators, self.penalty)
        return self.penalty * self.L

    # evaluation --------------------------------------------------------------
    def objective(self, x, xi) -> float:
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        if self.penalty_kind is PenaltyKind.QUADRATIC:
            pen = self.penalty * float(xi @ xi)
        else:
            pen = self.penalty * float(self.L @ xi)
        return float(self.rewards @ x) - pen

    def violations(self, x, xi) -> dict:
        """Largest violation of each constraint family at ``(x, xi)``."""
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        per_case = self.case_incidence() @ x
        c3 = self.L.repeat(self.horizon) + self.c3_matrix() @ x - (self.C + xi).repeat(self.horizon)
        real, shadow = per_case[self.case_is_real], per_case[~self.case_is_real]
        return {
            "C1": float(np.max(np.abs(real - 1.0), initial=0.0)),
            "C2": float(np.max(shadow - 1.0, initial=0.0)),
            "C3": float(np.max(c3, initial=0.0)),
            "C4": float(max(np.max(-x, initial=0.0), np.max(x - 1.0, initial=0.0))),
            "C5": float(max(np.max(-xi, initial=0.0), np.max(xi - self.L - 1.0, initial=0.0))),
        }

    def max_violation(self, x, xi) -> float:
        return max(self.violations(x, xi).values())


def build_qp(
    graph: StateGraph,
    vas: Mapping,
    ps: Mapping,
    loads: Mapping,
    capacities: Mapping,
    penalty: float,
    horizon: int,
    arrival_times: Mapping,
    penalty_kind=PenaltyKind.QUADRATIC,
) -> QpInstance:
    if horizon < 1:
        raise InvalidHorizon(f"horizon must be >= 1, got {horizon}")
    if penalty < 0 or not math.isfinite(penalty):
        raise ValueError("penalty must be a finite value >= 0")
    for v in graph.case_nodes:
        t = arrival_times[v]
        if not 0 <= t <= horizon:
            raise ValueError(f"arrival time {t} of case {v} outside [0, {horizon}]")
    return QpInstance(
        graph=graph,
        horizon=int(horizon),
        penalty=float(penalty),
        loads=loads,
        capacities=capacities,
        arrival_times=arrival_times,
        vas=vas,
        ps=ps,
        penalty_kind=penalty_kind,
    )


@dataclass
class QpSolution:
    x_array: np.ndarray
    xi_array: np.ndarray
    objective: float
    status: str
    duals_c1: np.ndarray
    duals_c2: np.ndarray
    duals_c3_array: np.ndarray  # shape (n_mediators, T)
    duals_x_upper: np.ndarray
    duals_x_lower: np.ndarray
    duals_xi_upper: np.ndarray
    duals_xi_lower: np.ndarray
    edges: tuple = ()
    mediators: tuple = ()
    kkt_residual: float = float("nan")
    iterations: int = 0

    @property
    def x(self) -> dict:
        return dict(zip(self.edges, self.x_array.tolist()))

    @property
    def xi(self) -> dict:
        return dict(zip(self.mediators, self.xi_array.tolist()))

    @property
    def duals_c3(self) -> dict:
        T = self.duals_c3_array.shape[1] if self.duals_c3_array.ndim == 2 else 0
        return {
            (u, t + 1): float(self.duals_c3_array[i, t])
            for i, u in enumerate(self.mediators)
            for t in range(T)
        }


@dataclass(frozen=True)
class KktReport:
    stationarity: float
    primal: float
    dual: float
    complementarity: float

    @property
    def max(self) -> float:
        return max(self.stationarity, self.primal, self.dual, self.complementarity)


def verify_kkt(instance: QpInstance, solution: QpSolution) -> KktReport:
    """Max-norm residuals of the KKT system of the minimisation form of the program."""
    x, xi = solution.x_array, solution.xi_array
    T = instance.horizon
    A_case = instance.case_incidence()
    A1 = A_case[instance.case_is_real]
    A2 = A_case[~instance.case_is_real]
    A3 = instance.c3_matrix()
    y1, y2 = solution.duals_c1, solution.duals_c2
    y3 = solution.duals_c3_array.reshape(-1)
    yxu, yxl = solution.duals_x_upper, solution.duals_x_lower
    yku, ykl = solution.duals_xi_upper, solution.duals_xi_lower

    if instance.penalty_kind is PenaltyKind.QUADRATIC:
        grad_xi = 2.0 * instance.penalty * xi
    else:
        grad_xi = instance.penalty * instance.L
    y3_by_med = y3.reshape(instance.n_mediators, T).sum(axis=1) if instance.n_mediators else np.zeros(0)
    stat_x = -instance.rewards + A1.T @ y1 + A2.T @ y2 + A3.T @ y3 + yxu - yxl
    stat_xi = grad_xi - y3_by_med + yku - ykl
    stationarity = float(np.max(np.abs(np.concatenate([stat_x, stat_xi])), initial=0.0))

    primal = instance.max_violation(x, xi)

    dual = float(
        np.max(-np.concatenate([y2, y3, yxu, yxl, yku, ykl]), initial=0.0)
    )
    dual = max(dual, 0.0)

    slack2 = 1.0 - A2 @ x
    slack3 = (instance.C + xi).repeat(T) - instance.L.repeat(T) - A3 @ x
    products = np.concatenate(
        [
            y2 * slack2,
            y3 * slack3,
            yxu * (1.0 - x),
            yxl * x,
            yku * (instance.L + 1.0 - xi),
            ykl * xi,
        ]
    )
    complementarity = float(np.max(np.abs(products), initial=0.0))
    return KktReport(stationarity, primal, dual, complementarity)


def _clarabel_settings(max_iter: int):
    s = clarabel.DefaultSettings()
    s.verbose = False
    s.max_iter = max_iter
    s.tol_gap_abs = 1e-9
    s.tol_gap_rel = 1e-9
    s.tol_feas = 1e-9
    s.tol_ktratio = 1e-8
    s.max_threads = 1
    return s


def solve(instance: QpInstance, tol: float = DEFAULT_TOL, max_iter: int = MAX_ITER) -> QpSolution:
    """Solve the program with an interior-point method.

    Two families of rows are implied by the others and are not passed to the
    solver: C3 rows for t < T (assignments are nonnegative and every case
    arrives within the horizon, so the t = T row dominates) and the upper
    bounds x_e <= 1 (each case's edges sum to at most one). Implied rows
    receive zero multipliers.
    """
    g = instance.graph
    n_e, n_u, T = instance.n_edges, instance.n_mediators, instance.horizon
    real_pos = np.flatnonzero(instance.case_is_real)
    degree = np.bincount(instance.edge_case, minlength=len(g.case_nodes))
    for i in real_pos:
        if degree[i] == 0:
            raise Infeasible(f"real case {g.case_nodes[i]} has no accredited mediator")

    shadow_pos = np.flatnonzero(~instance.case_is_real)
    A_case = instance.case_incidence().tocsc()
    A_med = instance.mediator_incidence()
    I_e = sp.identity(n_e, format="csc")
    I_u = sp.identity(n_u, format="csc")
    Z_case_u = sp.csc_matrix((len(g.case_nodes), n_u))

    A1 = sp.hstack([A_case[real_pos], Z_case_u[real_pos]])
    A2 = sp.hstack([A_case[shadow_pos], Z_case_u[shadow_pos]])
    A3 = sp.hstack([A_med, -I_u])
    A = sp.vstack(
        [
            A1,
            A2,
            A3,
            sp.hstack([-I_e, sp.csc_matrix((n_e, n_u))]),
            sp.hstack([sp.csc_matrix((n_u, n_e)), I_u]),
            sp.hstack([sp.csc_matrix((n_u, n_e)), -I_u]),
        ],
        format="csc",
    )
    b = np.concatenate(
        [
            np.ones(len(real_pos)),
            np.ones(len(shadow_pos)),
            instance.C - instance.L,
            np.zeros(n_e),
            instance.L + 1.0,
            np.zeros(n_u),
        ]
    )
    n_var = n_e + n_u
    if instance.penalty_kind is PenaltyKind.QUADRATIC:
        diag = np.concatenate([np.zeros(n_e), np.full(n_u, 2.0 * instance.penalty)])
        q = np.concatenate([-instance.rewards, np.zeros(n_u)])
    else:
        diag = np.zeros(n_var)
        q = np.concatenate([-instance.rewards, instance.slack_cost()])
    P = sp.triu(sp.diags(diag, format="csc"), format="csc")
    cones = [clarabel.ZeroConeT(len(real_pos)), clarabel.NonnegativeConeT(A.shape[0] - len(real_pos))]
    result = clarabel.DefaultSolver(P, q, A, b, cones, _clarabel_settings(max_iter)).solve()
    status_text = str(result.status)
    if "Infeasible" in status_text and "Almost" not in status_text:
        raise Infeasible(f"solver reports {status_text}")

    z = np.asarray(result.x, dtype=float)
    y = np.asarray(result.z, dtype=float)
    x, xi = z[:n_e], z[n_e:]
    offsets = np.cumsum([0, len(real_pos), len(shadow_pos), n_u, n_e, n_u, n_u])
    blocks = [y[offsets[k] : offsets[k + 1]] for k in range(6)]
    duals_c3 = np.zeros((n_u, T))
    if T:
        duals_c3[:, T - 1] = blocks[2]
    solution = QpSolution(
        x_array=x,
        xi_array=xi,
        objective=instance.objective(x, xi),
        status="optimal",
        duals_c1=blocks[0],
        duals_c2=blocks[1],
        duals_c3_array=duals_c3,
        duals_x_upper=np.zeros(n_e),
        duals_x_lower=blocks[3],
        duals_xi_upper=blocks[4],
        duals_xi_lower=blocks[5],
        edges=g.edges,
        mediators=g.mediator_nodes,
        iterations=int(result.iterations),
    )
    solution.kkt_residual = verify_kkt(instance, solution).max
    if status_text != "Solved" or solution.kkt_residual > tol:
        solution.status = "max-iterations"
        raise MaxIterations(
            f"solver status {status_text}, KKT residual {solution.kkt_residual:.3g} (tol {tol:g})",
            solution,
        )
    return solution


def extract_shadow_prices(solution: QpSolution, instance: QpInstance) -> dict:
    """Per-mediator shadow price: C3 multipliers summed over timesteps."""
    if solution.status != "optimal":
        raise ValueError("shadow prices need an optimal solution")
    sums = solution.duals_c3_array.sum(axis=1)
    return dict(zip(instance.graph.mediator_nodes, sums.tolist()))


def feasible_point(instance: QpInstance) -> tuple:
    """Explicit feasible point for a single real case.

    Put the real case wholly on its first edge, leave every shadow case
    unassigned, and give the chosen mediator just enough slack to absorb it.
    Mediators already over capacity get the slack their current load needs,
    otherwise C3 fails for them even with nothing assigned.
    """
    real = [i for i, v in enumerate(instance.graph.case_nodes) if instance.case_is_real[i]]
    if len(real) != 1:
        raise ValueError(f"expected exactly one real case, found {len(real)}")
    edges = np.flatnonzero(instance.edge_case == real[0])
    if not len(edges):
        raise NoAccreditedMediator(f"real case {instance.graph.case_nodes[real[0]]} has no edge")
    if np.any(instance.C < 0):
        raise ValueError("capacities must be >= 0")
    x = np.zeros(instance.n_edges)
    xi = np.maximum(0.0, instance.L - instance.C).astype(float)
    e = edges[0]
    u = instance.edge_med[e]
    x[e] = 1.0
    xi[u] = max(0.0, instance.L[u] + 1.0 - instance.C[u])
    return x, xi


def brute_force_integral_optimum(instance: QpInstance) -> tuple:
    """Best objective over all 0/1 assignments, with the minimal feasible slack.

    Returns ``(objective, x)``; ``(-inf, None)`` if no integral point is feasible.
    """
    n_e = instance.n_edges
    if n_e > BRUTE_FORCE_MAX_EDGES:
        raise TooLarge(f"{n_e} edges exceeds the enumeration bound of {BRUTE_FORCE_MAX_EDGES}")
    options = []
    for i in range(len(instance.graph.case_nodes)):
        own = np.flatnonzero(instance.edge_case == i).tolist()
        options.append(own if instance.case_is_real[i] else own + [None])
    best_obj, best_x = -math.inf, None
    for choice in itertools.product(*options):
        x = np.zeros(n_e)
        for e in choice:
            if e is not None:
                x[e] = 1.0
        totals = np.bincount(instance.edge_med, weights=x, minlength=instance.n_mediators)
        xi = np.maximum(0.0, instance.L + totals - instance.C)
        if np.any(xi > instance.L + 1.0 + 1e-12):
            continue
        obj = instance.objective(x, xi)
        if obj > best_obj:
            best_obj, best_x = obj, x
    return best_obj, best_x


# text format -----------------------------------------------------------------

def dump_instance(instance: QpInstance) -> str:
    """Line-oriented, round-trippable description of an instance."""
    lines = [
        f"# smartassign-qp {FORMAT_VERSION}",
        f"horizon {instance.horizon}",
        f"penalty {instance.penalty!r} {instance.penalty_kind.value}",
    ]
    for u in instance.graph.mediator_nodes:
        lines.append(
            f"mediator {u} {instance.loads[u]} {instance.capacities[u]} {float(instance.vas[u])!r}"
        )
    for v in instance.graph.case_nodes:
        kind = "shadow" if is_shadow_id(v) else "real"
        lines.append(f"case {v} {kind} {float(instance.ps[v])!r} {float(instance.arrival_times[v])!r}")
    for u, v in instance.graph.edges:
        lines.append(f"edge {u} {v}")
    return "\n".join(lines) + "\n"


def parse_instance(text: str) -> QpInstance:
    horizon, penalty, kind = None, None, PenaltyKind.QUADRATIC
    meds, cases, edges = [], [], []
    loads, caps, vas, ps, arrivals = {}, {}, {}, {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        try:
            if tok[0] == "horizon":
                horizon = int(tok[1])
            elif tok[0] == "penalty":
                penalty = float(tok[1])
                if len(tok) > 2:
                    kind = PenaltyKind(tok[2])
            elif tok[0] == "mediator":
                u = tok[1]
                meds.append(u)
                loads[u], caps[u], vas[u] = int(tok[2]), int(tok[3]), float(tok[4])
            elif tok[0] == "case":
                v, k = tok[1], tok[2]
                if (k == "shadow") != is_shadow_id(v):
                    raise ValueError(f"case {v}: kind {k!r} disagrees with its id")
                cases.append(v)
                ps[v], arrivals[v] = float(tok[3]), float(tok[4])
            elif tok[0] == "edge":
                edges.append((tok[1], tok[2]))
            else:
                raise ValueError(f"unknown record {tok[0]!r}")
        except (IndexError, ValueError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from exc
    if horizon is None or penalty is None:
        raise ValueError("instance needs 'horizon' and 'penalty' lines")
    weights = {(u, v): vas[u] + ps[v] for u, v in edges}
    graph = StateGraph(tuple(meds), tuple(cases), tuple(edges), weights)
    return build_qp(graph, vas, ps, loads, caps, penalty, horizon, arrivals, kind)


def format_expanded(instance: QpInstance) -> str:
    """Human-readable variables, objective terms and constraint rows (debug only)."""
    g = instance.graph
    xname = [f"x[{u},{v}]" for u, v in g.edges]
    out = ["# variables"]
    for name, r in zip(xname, instance.rewards):
        out.append(f"var {name} in [0,1] linear {r:+.6g}")
    cost = instance.slack_cost()
    for i, u in enumerate(g.mediator_nodes):
        quad = 2 * instance.penalty if instance.penalty_kind is PenaltyKind.QUADRATIC else 0.0
        lin = 0.0 if instance.penalty_kind is PenaltyKind.QUADRATIC else -cost[i]
        out.append(f"var xi[{u}] in [0,{instance.L[i] + 1:g}] linear {lin:+.6g} quad {-quad:+.6g}")
    out.append("# rows")
    for i, v in enumerate(g.case_nodes):
        terms = " + ".join(xname[e] for e in np.flatnonzero(instance.edge_case == i)) or "0"
        sense = "= 1" if instance.case_is_real[i] else "<= 1"
        out.append(f"row {'C1' if instance.case_is_real[i] else 'C2'}[{v}] {terms} {sense}")
    for i, u in enumerate(g.mediator_nodes):
        own = np.flatnonzero(instance.edge_med == i)
        for t in range(1, instance.horizon + 1):
            active = [xname[e] for e in own if instance.edge_first_t[e] <= t]
            terms = " + ".join(active) or "0"
            out.append(f"row C3[{u},{t}] {terms} - xi[{u}] <= {instance.C[i] - instance.L[i]:g}")
    return "\n".join(out) + "\n"
