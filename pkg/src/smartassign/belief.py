"""Gaussian beliefs over mediator value-added.

Beliefs are updated after each observed outcome by moment matching the
Bernoulli-likelihood posterior, and periodically reset to the explicit
shrinkage estimates to stop the approximation error from accumulating.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import integrate

from .errors import DegenerateDesign, InsufficientData, InvalidProbability, QuadratureFailure
from .va_estimation import VarianceComponents, estimate_va, shrink_va

log = logging.getLogger(__name__)

DEFAULT_SIGMA_MU = 0.11
DEFAULT_SIGMA_MU_SQ = DEFAULT_SIGMA_MU**2
VAR_FLOOR = 1e-10
FALLBACK_MARGIN = 0.05
_TAIL = 12.0


@dataclass(frozen=True)
class GaussianBelief:
    mean: float = 0.0
    var: float = DEFAULT_SIGMA_MU_SQ
    updates_since_recalibration: int = 0

    def __post_init__(self):
        if not self.var > 0:
            raise ValueError("belief variance must be positive")

    @classmethod
    def prior(cls, sigma_mu_sq: float = DEFAULT_SIGMA_MU_SQ) -> "GaussianBelief":
        return cls(0.0, max(sigma_mu_sq, VAR_FLOOR))

    @property
    def std(self) -> float:
        return math.sqrt(self.var)


def _check_p(p: float) -> None:
    if not 0.0 <= p <= 1.0 or math.isnan(p):
        raise InvalidProbability(f"p={p} outside [0, 1]")


def quadrature_posterior_moments(
    belief: GaussianBelief, p: float, outcome: bool, *, support: str = "bounded"
) -> tuple:
    """Mean and variance of the exact one-step posterior by adaptive quadrature.

    The posterior density is proportional to
    ``(p + mu)**Y * (1 - p - mu)**(1 - Y) * N(mu; mean, var)``.
    With ``support="bounded"`` it is integrated over ``[-p, 1 - p]``, where
    the likelihood is a valid probability. ``support="real"`` integrates the
    same expression over the whole line (the untruncated Gaussian-identity
    setting). Relative tolerance is 1e-10.
    """
    _check_p(p)
    m, s = belief.mean, belief.std
    if outcome:
        lik = lambda mu: p + mu  # noqa: E731
    else:
        lik = lambda mu: 1.0 - p - mu  # noqa: E731
    lo, hi = m - _TAIL * s, m + _TAIL * s
    if support == "bounded":
        lo, hi = max(lo, -p), min(hi, 1.0 - p)
    elif support != "real":
        raise ValueError(f"unknown support {support!r}")
    if not hi > lo:
        raise QuadratureFailure("posterior support has no prior mass")

    norm_const = 1.0 / (math.sqrt(2.0 * math.pi) * s)

    def density(mu):
        return lik(mu) * norm_const * math.exp(-0.5 * ((mu - m) / s) ** 2)

    points = [m] if lo < m < hi else None
    opts = dict(epsabs=0.0, epsrel=1e-10, limit=200, points=points)
    z0 = integrate.quad(density, lo, hi, **opts)[0]
    if not abs(z0) >= 1e-300:
        raise QuadratureFailure(f"normalizing constant {z0!r} below 1e-300")
    mean = integrate.quad(lambda mu: (mu - m) * density(mu), lo, hi, **opts)[0] / z0 + m
    var = integrate.quad(lambda mu: (mu - mean) ** 2 * density(mu), lo, hi, **opts)[0] / z0
    return mean, var


def posterior_update(belief: GaussianBelief, p: float, outcome: bool) -> GaussianBelief:
    """Moment-matched Gaussian posterior after one Bernoulli(p + mu) outcome.

    Closed form: with ``d = m + p`` (success) or ``d = 1 - p - m`` (failure),
    ``mean' = m +/- s2 / d`` and ``var' = s2 * (1 - s2 / d**2)``. When ``d``
    is within 0.05 of zero or the matched variance collapses, the bounded
    quadrature posterior is used instead.
    """
    _check_p(p)
    m, s2 = belief.mean, belief.var
    d = m + p if outcome else 1.0 - p - m
    if abs(d) > FALLBACK_MARGIN:
        new_var = s2 * (1.0 - s2 / (d * d))
        if new_var > VAR_FLOOR:
            new_mean = m + s2 / d if outcome else m - s2 / d
            return GaussianBelief(new_mean, new_var, belief.updates_since_recalibration + 1)
    try:
        new_mean, new_var = quadrature_posterior_moments(belief, p, outcome)
    except QuadratureFailure:
        # prior mass lies entirely outside [-p, 1-p]; snap to the nearest valid VA
        new_mean, new_var = min(max(m, -p), 1.0 - p), s2
    return GaussianBelief(new_mean, max(new_var, VAR_FLOOR), belief.updates_since_recalibration + 1)


def sample_va(belief: GaussianBelief, rng: np.random.Generator) -> float:
    return float(rng.normal(belief.mean, belief.std))


def recalibrate(
    beliefs: Mapping,
    history: Sequence,
    *,
    default_sigma_mu_sq: float = DEFAULT_SIGMA_MU_SQ,
) -> dict:
    """Reset beliefs to explicit shrinkage VA estimates computed from ``history``.

    Mediators without an estimate get the prior N(0, sigma_mu^2) with the
    freshly estimated component. If the components cannot be estimated the
    beliefs are returned unchanged.
    """
    if not any(c.outcome is not None and c.assigned_mediator is not None for c in history):
        return {mid: GaussianBelief.prior(default_sigma_mu_sq) for mid in beliefs}
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", DegenerateDesign)
            report = estimate_va(history)
        for w in caught:
            log.debug("recalibration: %s", w.message)
    except InsufficientData as exc:
        log.info("recalibration skipped: %s", exc)
        return dict(beliefs)
    prior = GaussianBelief.prior(report.components.sigma_mu_sq)
    out = {}
    for mid in beliefs:
        est = report.estimates.get(mid)
        out[mid] = GaussianBelief(est.mu_hat, est.posterior_var) if est is not None else prior
    for mid, est in report.estimates.items():
        out.setdefault(mid, GaussianBelief(est.mu_hat, est.posterior_var))
    return out


DRIFT_COMPONENTS = VarianceComponents(
    sigma_eps_sq=0.24, sigma_mu_sq=DEFAULT_SIGMA_MU_SQ, sigma_theta_sq=0.0
)


def replay_belief_trajectory(
    p_sequence: Sequence[float],
    outcome_sequence: Sequence[bool],
    recalibration_period: int = 7,
    components: VarianceComponents = DRIFT_COMPONENTS,
) -> list:
    """Track one mediator's VA under explicit, posterior-only and recalibrated updating.

    Returns one ``(explicit, posterior_only, recalibrated)`` tuple per update.
    The explicit estimate shrinks the residuals ``Y - p`` seen so far with the
    fixed ``components``; it is 0 until two outcomes are available.
    """
    if len(p_sequence) != len(outcome_sequence):
        raise ValueError("p and outcome sequences differ in length")
    prior = GaussianBelief.prior(components.sigma_mu_sq)
    plain = prior
    recal = prior
    residuals = []
    out = []
    for k, (p, y) in enumerate(zip(p_sequence, outcome_sequence), start=1):
        residuals.append((1.0 if y else 0.0) - p)
        est = shrink_va({"m": residuals}, components).get("m")
        explicit = est.mu_hat if est is not None else 0.0
        plain = posterior_update(plain, p, y)
        recal = posterior_update(recal, p, y)
        if recalibration_period > 0 and k % recalibration_period == 0 and est is not None:
            recal = GaussianBelief(est.mu_hat, est.posterior_var)
        out.append((explicit, plain.mean, recal.mean))
    return out

