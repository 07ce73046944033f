"""Capacity-aware online assignment of court-annexed mediation cases."""

from .assignment import (
    PenaltyKind,
    QpInstance,
    QpSolution,
    brute_force_integral_optimum,
    build_qp,
    extract_shadow_prices,
    feasible_point,
    solve,
    verify_kkt,
)
from .belief import GaussianBelief, posterior_update, quadrature_posterior_moments, recalibrate
from .domain import CaseRecord, Cell, MediatorProfile, StateGraph, build_state_graph
from .policies import (
    PolicyDecision,
    PolicySpec,
    VaMode,
    greedy_star_assign,
    least_load_assign,
    smart_assign,
    thompson_star_assign,
    upper_bound_assign,
)
from .simulator import SimConfig, SimResult, compute_gini, compute_ocdm, run_simulation
from .va_estimation import estimate_va

__version__ = "0.1.0"
