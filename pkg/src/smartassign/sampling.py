"""Stochastic models for case arrivals, outcomes and mediation durations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import MissingDurationParams


@dataclass
class ArrivalModel:
    """Per-cell Poisson arrival rates (cases/day) and base resolution probabilities.

    When ``p_concentration`` is set, each arriving case draws its p from a
    Beta distribution with mean ``base_p[cell]`` and that concentration;
    otherwise every case in a cell has p equal to the cell's base_p.
    """

    rates: Mapping
    base_p: Mapping
    p_concentration: float | None = None
    referral_modes: Mapping = field(default_factory=lambda: {"court": 1.0})

    def __post_init__(self):
        for cell, r in self.rates.items():
            if not (math.isfinite(r) and r >= 0):
                raise ValueError(f"rate for {cell} must be finite and >= 0")
            if cell not in self.base_p:
                raise ValueError(f"no base p for {cell}")
        for cell, p in self.base_p.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"base p for {cell} outside [0, 1]")
        self.cells = tuple(sorted(self.rates))
        self.rate_array = np.array([self.rates[c] for c in self.cells], dtype=float)
        self.p_array = np.array([self.base_p[c] for c in self.cells], dtype=float)
        total = sum(self.referral_modes.values())
        self.mode_names = tuple(self.referral_modes)
        self.mode_probs = np.array([self.referral_modes[m] / total for m in self.mode_names])

    @property
    def total_rate(self) -> float:
        return float(self.rate_array.sum())

    def draw_p(self, cell_pos: int, rng: np.random.Generator) -> float:
        mean = self.p_array[cell_pos]
        if self.p_concentration is None or mean in (0.0, 1.0):
            return float(mean)
        k = self.p_concentration
        return float(rng.beta(mean * k, (1.0 - mean) * k))

    def draw_mode(self, rng: np.random.Generator) -> str:
        if len(self.mode_names) == 1:
            return self.mode_names[0]
        return self.mode_names[int(rng.choice(len(self.mode_names), p=self.mode_probs))]


@dataclass
class DurationModel:
    """Log-normal duration parameters keyed by ``(case_type, outcome)``."""

    params: Mapping

    def __post_init__(self):
        for key, (loc, scale) in self.params.items():
            if not scale > 0:
                raise ValueError(f"log-normal scale for {key} must be > 0")

    @classmethod
    def uniform(cls, case_types, median: float, scale: float) -> "DurationModel":
        loc = math.log(median)
        return cls({(t, y): (loc, scale) for t in case_types for y in (False, True)})


def sample_outcome(p: float, mu: float, rng: np.random.Generator) -> bool:
    """Bernoulli draw with success probability clip(p + mu, 0, 1)."""
    prob = min(1.0, max(0.0, p + mu))
    return bool(rng.random() < prob)


def sample_duration(model: DurationModel, case_type: str, outcome: bool, rng: np.random.Generator) -> float:
    try:
        loc, scale = model.params[(case_type, bool(outcome))]
    except KeyError:
        raise MissingDurationParams(f"no duration parameters for ({case_type!r}, {bool(outcome)})") from None
    return float(rng.lognormal(loc, scale))

