"""Explicit mediator value-added estimation with empirical-Bayes shrinkage.

Pipeline: fixed-effects linear probability regression (mediator effects
absorbed) -> residuals net of controls -> variance components from a
chronological split -> shrunken per-mediator estimates.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .domain import CaseRecord, id_sort_key
from .errors import DegenerateDesign, InsufficientData

CONTROL_DIMENSIONS = ("case_type", "station", "period", "referral_mode")
COMPONENT_FLOOR = 1e-8
POSTERIOR_VAR_FLOOR = 1e-10


def _level(case: CaseRecord, dim: str) -> str:
    if dim == "case_type":
        return case.cell.case_type
    if dim == "station":
        return case.cell.station
    return getattr(case, dim)


def _column(rows: Sequence[CaseRecord], dim: str) -> list:
    if dim == "case_type":
        return [c.cell.case_type for c in rows]
    if dim == "station":
        return [c.cell.station for c in rows]
    if dim == "period":
        return [c.period for c in rows]
    return [c.referral_mode for c in rows]


@dataclass(frozen=True)
class RegressionFit:
    """Control coefficients of the fixed-effects regression.

    ``coefficients`` is keyed by ``"intercept"`` and ``(dimension, level)``
    for every non-reference level. Reference levels, and levels never seen
    at fit time, predict with coefficient 0.
    """

    coefficients: Mapping
    levels: Mapping
    reference_levels: Mapping
    n_obs: int = 0
    rank: int = 0

    @property
    def intercept(self) -> float:
        return self.coefficients["intercept"]

    def predict_one(self, case: CaseRecord) -> float:
        value = self.coefficients["intercept"]
        for dim in CONTROL_DIMENSIONS:
            value += self.coefficients.get((dim, _level(case, dim)), 0.0)
        return value

    def predict(self, cases: Sequence[CaseRecord]) -> np.ndarray:
        out = np.full(len(cases), self.coefficients["intercept"], dtype=float)
        for dim in CONTROL_DIMENSIONS:
            coef = {lvl: self.coefficients.get((dim, lvl), 0.0) for lvl in self.levels.get(dim, ())}
            out += np.fromiter((coef.get(v, 0.0) for v in _column(cases, dim)), dtype=float, count=len(cases))
        return out


@dataclass(frozen=True)
class VarianceComponents:
    sigma_eps_sq: float
    sigma_mu_sq: float
    sigma_theta_sq: float

    def __post_init__(self):
        for name in ("sigma_eps_sq", "sigma_mu_sq", "sigma_theta_sq"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True)
class VaEstimate:
    mediator_id: str
    mu_hat: float
    posterior_var: float
    n_cases: int
    shrink_factor: float
    raw_mean_residual: float


@dataclass
class VaReport:
    fit: RegressionFit
    components: VarianceComponents
    estimates: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)


def _usable(history: Sequence[CaseRecord]) -> list:
    return [c for c in history if c.outcome is not None and c.assigned_mediator is not None]


def fit_fixed_effects(history: Sequence[CaseRecord]) -> RegressionFit:
    """Least-squares fit of outcomes on dummy-coded controls plus mediator effects.

    Mediator indicators are absorbed by demeaning within mediator, which
    yields the same control coefficients as the full dummy regression. The
    minimum-norm solution is taken when controls are collinear. The
    intercept is then chosen so residuals average to zero over ``history``.
    """
    rows = _usable(history)
    if not rows:
        raise ValueError("history must contain at least one concluded, assigned case")

    n = len(rows)
    levels = {}
    reference = {}
    columns = []
    X_parts = []
    for dim in CONTROL_DIMENSIONS:
        values = _column(rows, dim)
        observed = sorted(set(values), key=id_sort_key)
        levels[dim] = tuple(observed)
        reference[dim] = observed[0]
        columns.extend((dim, lvl) for lvl in observed[1:])
        code = {lvl: k for k, lvl in enumerate(observed)}
        idx = np.fromiter((code[v] for v in values), dtype=np.int64, count=n)
        block = np.zeros((n, len(observed)))
        block[np.arange(n), idx] = 1.0
        X_parts.append(block[:, 1:])
    X = np.hstack(X_parts) if columns else np.zeros((n, 0))
    y = np.fromiter((1.0 if c.outcome else 0.0 for c in rows), dtype=float, count=n)

    med_ids = {}
    groups = np.fromiter(
        (med_ids.setdefault(c.assigned_mediator, len(med_ids)) for c in rows), dtype=np.int64, count=n
    )
    counts = np.bincount(groups).astype(float)
    y_w = y - (np.bincount(groups, weights=y) / counts)[groups]
    if columns:
        sums = np.zeros((len(counts), len(columns)))
        np.add.at(sums, groups, X)
        X_w = X - (sums / counts[:, None])[groups]
        beta, _, rank, _ = np.linalg.lstsq(X_w, y_w, rcond=None)
    else:
        beta, rank = np.zeros(0), 0

    intercept = float(np.mean(y - X @ beta)) if columns else float(np.mean(y))
    if rank == 0 and np.all(y == y[0]):
        warnings.warn(
            "all outcomes identical and only an intercept is identifiable",
            DegenerateDesign,
            stacklevel=2,
        )
    coefficients = {"intercept": intercept}
    for key, b in zip(columns, beta):
        coefficients[key] = float(b)
    return RegressionFit(coefficients, levels, reference, n_obs=n, rank=int(rank))


def residualize(history: Sequence[CaseRecord], fit: RegressionFit) -> dict:
    """Residuals Y - X beta grouped by mediator, in order of conclusion."""
    rows = _usable(history)
    rows.sort(key=lambda c: (c.assigned_mediator, c.conclusion_time, c.arrival_time, id_sort_key(c.id)))
    pred = fit.predict(rows)
    out = {}
    for c, f in zip(rows, pred.tolist()):
        out.setdefault(c.assigned_mediator, []).append((1.0 if c.outcome else 0.0) - f)
    return out


def _split(residuals: Sequence[float]):
    n = len(residuals)
    k = math.ceil(n / 2)
    return np.asarray(residuals[:k], dtype=float), np.asarray(residuals[k:], dtype=float)


def estimate_variance_components(residuals_by_mediator: Mapping) -> VarianceComponents:
    qualifying = [np.asarray(r, dtype=float) for r in residuals_by_mediator.values() if len(r) >= 2]
    if len(qualifying) < 2:
        raise InsufficientData(
            f"need >= 2 mediators with >= 2 cases, found {len(qualifying)}"
        )
    first_means = np.empty(len(qualifying))
    second_means = np.empty(len(qualifying))
    within_ss = 0.0
    within_dof = 0
    for j, r in enumerate(qualifying):
        g1, g2 = _split(list(r))
        first_means[j] = g1.mean()
        second_means[j] = g2.mean()
        for g in (g1, g2):
            within_ss += float(np.sum((g - g.mean()) ** 2))
            within_dof += len(g) - 1

    sigma_mu_sq = float(np.cov(first_means, second_means, ddof=1)[0, 1])
    sigma_eps_sq = within_ss / within_dof if within_dof > 0 else 0.0
    total_var = float(np.var(np.concatenate(qualifying), ddof=1))
    sigma_theta_sq = total_var - sigma_mu_sq - sigma_eps_sq
    return VarianceComponents(
        sigma_eps_sq=max(sigma_eps_sq, COMPONENT_FLOOR),
        sigma_mu_sq=max(sigma_mu_sq, COMPONENT_FLOOR),
        sigma_theta_sq=max(sigma_theta_sq, COMPONENT_FLOOR),
    )


def shrink_va(residuals_by_mediator: Mapping, components: VarianceComponents) -> dict:
    """Shrunken VA estimates for every mediator with at least two cases."""
    s_mu = components.sigma_mu_sq
    out = {}
    for mid, res in residuals_by_mediator.items():
        n = len(res)
        if n < 2:
            continue
        h = 0.5 * (components.sigma_theta_sq + components.sigma_eps_sq / (0.5 * n))
        lam = s_mu / (s_mu + h) if s_mu + h > 0 else 1.0
        raw = float(np.mean(res))
        post_var = s_mu * h / (s_mu + h) if s_mu + h > 0 else 0.0
        out[mid] = VaEstimate(
            mediator_id=mid,
            mu_hat=lam * raw,
            posterior_var=max(post_var, POSTERIOR_VAR_FLOOR),
            n_cases=n,
            shrink_factor=lam,
            raw_mean_residual=raw,
        )
    return out


def estimate_va(history: Sequence[CaseRecord]) -> VaReport:
    """Run the whole pipeline; raises InsufficientData like the component step."""
    fit = fit_fixed_effects(history)
    residuals = residualize(history, fit)
    components = estimate_variance_components(residuals)
    return VaReport(fit, components, shrink_va(residuals, components), residuals)
