"""File-backed run configuration and the two stylized scenario presets."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .assignment import PenaltyKind
from .corpus import Corpus, load_corpus
from .domain import Cell, MediatorProfile
from .errors import SchemaError
from .policies import POLICY_NAMES, PolicySpec, VaMode
from .sampling import ArrivalModel, DurationModel
from .simulator import SimConfig

CONFIG_VERSION = 1

# Scenario presets: two cells sharing one case type, three mediators.
SCENARIO_CELL_A = Cell("1", "A")
SCENARIO_CELL_B = Cell("1", "B")
SCENARIO_VAS = {"1": 0.1, "2": 0.05, "3": -0.1}
SCENARIO_ACCREDITATION = {
    1: {"1": ("A", "B"), "2": ("A",), "3": ("A",)},
    2: {"1": ("A", "B"), "2": ("A",), "3": ("B",)},
}
SCENARIO_BASE_P = 0.5
SCENARIO_RATE_A = 0.07
SCENARIO_RATE_B = 0.05
SCENARIO_DURATION_MEDIAN = 60.0
SCENARIO_DURATION_SCALE = 0.5
SCENARIO_RUN_LENGTH = 1825
PENALTY_GRID = (0.01, 0.05, 0.1, 0.5)


@dataclass
class PolicyEntry:
    name: str
    va_mode: str = "known"
    penalty_kind: str = "quadratic"

    def specs(self, penalties) -> list:
        if self.name == "smart":
            return [PolicySpec("smart", self.va_mode, lam, self.penalty_kind) for lam in penalties]
        return [PolicySpec(self.name, self.va_mode)]


@dataclass
class RunConfig:
    """Everything needed to run a policies x penalties x seeds matrix."""

    scenario: int | None = None
    corpus: str | None = None
    policies: list = field(default_factory=list)
    penalties: list = field(default_factory=lambda: list(PENALTY_GRID))
    seeds: list = field(default_factory=lambda: list(range(30)))
    run_length: int = 365
    horizon: int = 10
    recalibration_period: int = 7
    belief_init: str = "blank"
    sigma_mu_sq: float = 0.11**2
    record_shadow_traces: bool = False
    output_dir: str | None = None
    workers: int = 1
    version: int = CONFIG_VERSION

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.version != CONFIG_VERSION:
            raise SchemaError(f"unsupported config version {self.version!r}")
        if (self.scenario is None) == (self.corpus is None):
            raise SchemaError("exactly one of 'scenario' and 'corpus' must be set")
        if self.scenario is not None and self.scenario not in (1, 2):
            raise SchemaError("scenario must be 1 or 2")
        self.policies = [p if isinstance(p, PolicyEntry) else _policy_entry(p) for p in self.policies]
        if not self.policies:
            raise SchemaError("at least one policy is required")
        for p in self.policies:
            if p.name not in POLICY_NAMES:
                raise SchemaError(f"unknown policy {p.name!r}")
            try:
                VaMode(p.va_mode)
                PenaltyKind(p.penalty_kind)
            except ValueError as exc:
                raise SchemaError(str(exc)) from None
        for lam in self.penalties:
            if not isinstance(lam, (int, float)) or not math.isfinite(lam) or lam < 0:
                raise SchemaError(f"penalty {lam!r} must be a finite number >= 0")
        if not self.seeds or not all(isinstance(s, int) and s >= 0 for s in self.seeds):
            raise SchemaError("seeds must be a nonempty list of nonnegative integers")
        for name in ("run_length", "horizon", "workers"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                raise SchemaError(f"{name} must be an integer >= 1")
        if not isinstance(self.recalibration_period, int) or self.recalibration_period < 0:
            raise SchemaError("recalibration_period must be an integer >= 0")
        if self.belief_init not in ("blank", "warm"):
            raise SchemaError("belief_init must be 'blank' or 'warm'")
        if not self.sigma_mu_sq > 0:
            raise SchemaError("sigma_mu_sq must be > 0")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["policies"] = [asdict(p) for p in self.policies]
        out["penalties"] = [float(x) for x in self.penalties]
        return out

    @classmethod
    def from_dict(cls, data) -> "RunConfig":
        if not isinstance(data, dict):
            raise SchemaError("config must be a mapping")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise SchemaError(f"unknown config keys {unknown}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise SchemaError(str(exc)) from None

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise SchemaError(f"config is not valid YAML: {exc}") from None
        return cls.from_dict(data)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.loads(Path(path).read_text())

    def policy_specs(self) -> list:
        out = []
        for entry in self.policies:
            out.extend(entry.specs(self.penalties))
        return out

    def resolve_corpus(self, base_dir=None) -> Corpus:
        if self.scenario is not None:
            return scenario_corpus(self.scenario)
        path = Path(self.corpus)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        corpus = load_corpus(path)
        if corpus.arrival_model is None or corpus.duration_model is None:
            raise SchemaError(f"corpus {path} needs rates.csv and durations.csv to simulate")
        return corpus

    def sim_configs(self, corpus: Corpus) -> list:
        """One SimConfig per (policy, penalty, seed), in that nesting order."""
        out = []
        for spec in self.policy_specs():
            for seed in self.seeds:
                out.append(SimConfig(
                    mediators=corpus.mediators,
                    arrival_model=corpus.arrival_model,
                    duration_model=corpus.duration_model,
                    policy=spec,
                    run_length=self.run_length,
                    horizon=self.horizon,
                    recalibration_period=self.recalibration_period,
                    seed=seed,
                    belief_init=self.belief_init,
                    history=corpus.cases,
                    sigma_mu_sq=self.sigma_mu_sq,
                    record_shadow_traces=self.record_shadow_traces,
                ))
        return out


def _policy_entry(raw) -> PolicyEntry:
    if isinstance(raw, str):
        return PolicyEntry(raw)
    if isinstance(raw, dict):
        try:
            return PolicyEntry(**raw)
        except TypeError as exc:
            raise SchemaError(f"bad policy entry {raw!r}: {exc}") from None
    raise SchemaError(f"bad policy entry {raw!r}")


def scenario_corpus(which: int) -> Corpus:
    if which not in SCENARIO_ACCREDITATION:
        raise ValueError("scenario must be 1 or 2")
    mediators = [
        MediatorProfile(mid, {Cell("1", s) for s in stations}, 3, 0, SCENARIO_VAS[mid])
        for mid, stations in SCENARIO_ACCREDITATION[which].items()
    ]
    arrival_model = ArrivalModel(
        {SCENARIO_CELL_A: SCENARIO_RATE_A, SCENARIO_CELL_B: SCENARIO_RATE_B},
        {SCENARIO_CELL_A: SCENARIO_BASE_P, SCENARIO_CELL_B: SCENARIO_BASE_P},
    )
    durations = DurationModel.uniform(["1"], SCENARIO_DURATION_MEDIAN, SCENARIO_DURATION_SCALE)
    return Corpus(mediators, [], arrival_model, durations)


def scenario_preset(which: int) -> tuple:
    """``(RunConfig, Corpus)`` for stylized scenario 1 or 2 with known VAs."""
    corpus = scenario_corpus(which)
    config = RunConfig(
        scenario=which,
        policies=[
            PolicyEntry("upper_bound"),
            PolicyEntry("least_load"),
            PolicyEntry("greedy_star"),
            PolicyEntry("thompson_star"),
            PolicyEntry("smart"),
        ],
        run_length=SCENARIO_RUN_LENGTH,
    )
    return config, corpus
