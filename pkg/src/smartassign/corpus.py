"""Corpus files: loading, validation, writing and synthetic generation.

A corpus directory holds four delimiter-separated tables and a manifest::

    manifest.yaml    format_version, file names
    mediators.csv    id, capacity, true_va, stations, case_types
    cases.csv        id, case_type, station, referral_mode, period, arrival_day,
                     mediator_id, outcome, conclusion_day, p
    rates.csv        case_type, station, poisson_rate, base_p
    durations.csv    case_type, outcome, lognorm_location, lognorm_scale

``stations`` and ``case_types`` are ``;``-separated lists; a mediator is
accredited for every (case_type, station) combination of the two.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .domain import Cell, MediatorProfile, CaseRecord
from .errors import IntegrityError, SchemaError
from .sampling import ArrivalModel, DurationModel, sample_outcome

FORMAT_VERSION = 1

MEDIATOR_COLUMNS = ("id", "capacity", "true_va", "stations", "case_types")
CASE_COLUMNS = (
    "id", "case_type", "station", "referral_mode", "period", "arrival_day",
    "mediator_id", "outcome", "conclusion_day",
)
CASE_OPTIONAL = ("p",)
RATE_COLUMNS = ("case_type", "station", "poisson_rate", "base_p")
DURATION_COLUMNS = ("case_type", "outcome", "lognorm_location", "lognorm_scale")

FILES = {
    "mediators": "mediators.csv",
    "cases": "cases.csv",
    "rates": "rates.csv",
    "durations": "durations.csv",
}


@dataclass
class Corpus:
    mediators: list
    cases: list = field(default_factory=list)
    arrival_model: ArrivalModel | None = None
    duration_model: DurationModel | None = None

    @property
    def accreditations(self) -> dict:
        return {m.id: m.accredited_cells for m in self.mediators}

    @property
    def true_vas(self) -> dict:
        return {m.id: m.true_va for m in self.mediators}

    @property
    def cells(self) -> set:
        out = set()
        for m in self.mediators:
            out |= m.accredited_cells
        return out


def _split_list(text: str) -> list:
    return [t.strip() for t in text.split(";") if t.strip()]


def _read_table(path: Path, required, optional=()) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        extra = [c for c in header if c not in required and c not in optional]
        if missing or extra:
            raise SchemaError(f"{path.name}: missing columns {missing}, unexpected columns {extra}")
        return list(reader)


def _number(text, kind, where):
    try:
        return kind(text)
    except (TypeError, ValueError):
        raise SchemaError(f"{where}: cannot parse {text!r} as {kind.__name__}") from None


def _optional(text, kind, where):
    return None if text is None or text.strip() == "" else _number(text, kind, where)


def _read_manifest(root: Path) -> dict:
    path = root / "manifest.yaml"
    if not path.exists():
        return dict(FILES)
    with open(path) as fh:
        manifest = yaml.safe_load(fh) or {}
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise SchemaError(f"unsupported corpus format_version {version!r} (expected {FORMAT_VERSION})")
    files = dict(FILES)
    files.update(manifest.get("files") or {})
    return files


def _parse_mediators(rows, name) -> list:
    mediators = []
    for k, row in enumerate(rows, start=2):
        where = f"{name} row {k}"
        stations = _split_list(row["stations"])
        types = _split_list(row["case_types"])
        if not stations or not types:
            raise SchemaError(f"{where}: mediator {row['id']!r} lists no stations or case types")
        va = _optional(row["true_va"], float, where)
        cells = {Cell(t, s) for t in types for s in stations}
        try:
            mediators.append(MediatorProfile(row["id"], cells, _number(row["capacity"], int, where), 0, va))
        except ValueError as exc:
            raise ValueError(f"{where}: {exc}") from None
    ids = [m.id for m in mediators]
    if len(set(ids)) != len(ids):
        raise IntegrityError(f"{name}: duplicate mediator ids")
    return mediators


def _parse_rates(rows, name):
    rates, base_p = {}, {}
    for k, row in enumerate(rows, start=2):
        where = f"{name} row {k}"
        cell = Cell(row["case_type"], row["station"])
        rate = _number(row["poisson_rate"], float, where)
        p = _number(row["base_p"], float, where)
        if not (math.isfinite(rate) and rate >= 0):
            raise ValueError(f"{where}: poisson_rate must be finite and >= 0")
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"{where}: base_p {p} outside [0, 1]")
        rates[cell] = rate
        base_p[cell] = p
    return ArrivalModel(rates, base_p) if rates else None


def _parse_durations(rows, name):
    params = {}
    for k, row in enumerate(rows, start=2):
        where = f"{name} row {k}"
        outcome = _number(row["outcome"], int, where)
        if outcome not in (0, 1):
            raise ValueError(f"{where}: outcome must be 0 or 1")
        scale = _number(row["lognorm_scale"], float, where)
        if not scale > 0:
            raise ValueError(f"{where}: lognorm_scale must be > 0")
        params[(row["case_type"], bool(outcome))] = (_number(row["lognorm_location"], float, where), scale)
    return DurationModel(params) if params else None


def _parse_cases(rows, name, mediators, arrival_model) -> list:
    known = {m.id for m in mediators}
    cells = set()
    for m in mediators:
        cells |= m.accredited_cells
    if arrival_model is not None:
        cells |= set(arrival_model.rates)
    base_p = arrival_model.base_p if arrival_model is not None else {}
    cases = []
    seen = set()
    for k, row in enumerate(rows, start=2):
        where = f"{name} row {k}"
        cid = row["id"]
        if cid in seen:
            raise IntegrityError(f"{where}: duplicate case id {cid!r}")
        seen.add(cid)
        cell = Cell(row["case_type"], row["station"])
        if cell not in cells:
            raise IntegrityError(f"{where}: case {cid!r} refers to unknown cell {cell}")
        mid = row["mediator_id"].strip() or None
        if mid is not None and mid not in known:
            raise IntegrityError(f"{where}: case {cid!r} refers to unknown mediator {mid!r}")
        arrival = _number(row["arrival_day"], float, where)
        conclusion = _optional(row["conclusion_day"], float, where)
        outcome = _optional(row["outcome"], int, where)
        if outcome not in (None, 0, 1):
            raise ValueError(f"{where}: outcome must be 0, 1 or empty")
        if arrival < 0:
            raise ValueError(f"{where}: negative arrival_day")
        if conclusion is not None and conclusion < arrival:
            raise ValueError(f"{where}: negative duration (conclusion before arrival)")
        p = _optional(row.get("p"), float, where)
        if p is None:
            if cell not in base_p:
                raise SchemaError(f"{where}: no p column and no base_p for {cell}")
            p = base_p[cell]
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"{where}: p {p} outside [0, 1]")
        try:
            cases.append(CaseRecord(
                cid, cell, p, arrival, row["referral_mode"] or "court", row["period"] or "0",
                mid, None if outcome is None else bool(outcome), conclusion,
            ))
        except ValueError as exc:
            raise ValueError(f"{where}: {exc}") from None
    return cases


def load_corpus(path) -> Corpus:
    """Read and validate a corpus directory.

    Raises SchemaError on column mismatches, IntegrityError on dangling
    mediator or cell references (naming the offending row) and ValueError
    on out-of-range values.
    """
    root = Path(path)
    files = _read_manifest(root)
    med_path = root / files["mediators"]
    if not med_path.exists():
        raise SchemaError(f"{med_path} does not exist")
    mediators = _parse_mediators(_read_table(med_path, MEDIATOR_COLUMNS), med_path.name)
    arrival_model = duration_model = None
    rates_path = root / files["rates"]
    if rates_path.exists():
        arrival_model = _parse_rates(_read_table(rates_path, RATE_COLUMNS), rates_path.name)
    dur_path = root / files["durations"]
    if dur_path.exists():
        duration_model = _parse_durations(_read_table(dur_path, DURATION_COLUMNS), dur_path.name)
    cases = []
    case_path = root / files["cases"]
    if case_path.exists():
        rows = _read_table(case_path, CASE_COLUMNS, CASE_OPTIONAL)
        cases = _parse_cases(rows, case_path.name, mediators, arrival_model)
    return Corpus(mediators, cases, arrival_model, duration_model)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_table(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_corpus(corpus: Corpus, path) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "manifest.yaml", "w") as fh:
        yaml.safe_dump({"format_version": FORMAT_VERSION, "files": dict(FILES)}, fh, sort_keys=True)
    med_rows = []
    for m in corpus.mediators:
        stations = sorted({c.station for c in m.accredited_cells})
        types = sorted({c.case_type for c in m.accredited_cells})
        if len(stations) * len(types) != len(m.accredited_cells):
            raise ValueError(f"mediator {m.id}: accreditation is not a stations x types product")
        med_rows.append((m.id, m.capacity, m.true_va, ";".join(stations), ";".join(types)))
    _write_table(root / FILES["mediators"], MEDIATOR_COLUMNS, med_rows)
    _write_table(
        root / FILES["cases"],
        CASE_COLUMNS + CASE_OPTIONAL,
        [
            (c.id, c.cell.case_type, c.cell.station, c.referral_mode, c.period, c.arrival_time,
             c.assigned_mediator, c.outcome, c.conclusion_time, c.p)
            for c in corpus.cases
        ],
    )
    if corpus.arrival_model is not None:
        am = corpus.arrival_model
        _write_table(
            root / FILES["rates"], RATE_COLUMNS,
            [(c.case_type, c.station, float(am.rates[c]), float(am.base_p[c])) for c in am.cells],
        )
    if corpus.duration_model is not None:
        params = corpus.duration_model.params
        _write_table(
            root / FILES["durations"], DURATION_COLUMNS,
            [(t, int(y), float(loc), float(scale)) for (t, y), (loc, scale) in sorted(params.items())],
        )
    return root


@dataclass(frozen=True)
class SyntheticScale:
    n_mediators: int = 2100
    n_stations: int = 87
    n_types: int = 13
    n_cases: int = 30633
    accreditation_density: float = 0.3
    sigma_mu: float = 0.11
    history_days: int = 6 * 365
    stations_per_mediator: int = 2
    # log-normal spread of per-mediator case volume in the history
    activity_sigma: float = 1.0
    # when set, every mediator gets exactly this many cases and n_cases is ignored
    cases_per_mediator: int | None = None

    def __post_init__(self):
        for name in ("n_mediators", "n_stations", "n_types", "history_days", "stations_per_mediator"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_cases < 0:
            raise ValueError("n_cases must be >= 0")
        if not 0 < self.accreditation_density <= 1:
            raise ValueError("accreditation_density must be in (0, 1]")
        if self.activity_sigma < 0:
            raise ValueError("activity_sigma must be >= 0")
        if self.sigma_mu < 0:
            raise ValueError("sigma_mu must be >= 0")
        if self.cases_per_mediator is not None and self.cases_per_mediator < 0:
            raise ValueError("cases_per_mediator must be >= 0")


def _station_name(k: int) -> str:
    return f"S{k + 1:02d}"


def _type_name(k: int) -> str:
    return f"T{k + 1:02d}"


def generate_synthetic_corpus(
    scale: SyntheticScale = SyntheticScale(),
    seed: int = 0,
    *,
    true_vas=None,
    accreditation=None,
) -> Corpus:
    """Random corpus shaped like a national court-annexed mediation registry.

    Every cell is covered by at least one mediator. True VAs are drawn from
    N(0, sigma_mu^2) and clipped to [-0.5, 0.5]; historical outcomes follow
    the Bernoulli(clip(p + VA)) rule with log-normal durations.

    ``true_vas`` (one per mediator) and ``accreditation`` (per mediator, a
    pair of station-index and type-index collections) replace the random
    draws when given.
    """
    rng = np.random.default_rng(seed)
    stations = [_station_name(k) for k in range(scale.n_stations)]
    types = [_type_name(k) for k in range(scale.n_types)]
    n = scale.n_mediators

    med_stations = []
    med_types = []
    per = min(scale.stations_per_mediator, scale.n_stations)
    for _ in range(n):
        k = 1 + int(rng.integers(per))
        med_stations.append(set(rng.choice(scale.n_stations, size=k, replace=False).tolist()))
        chosen = set(np.flatnonzero(rng.random(scale.n_types) < scale.accreditation_density).tolist())
        if not chosen:
            chosen = {int(rng.integers(scale.n_types))}
        med_types.append(chosen)
    if accreditation is not None:
        if len(accreditation) != n:
            raise ValueError("accreditation needs one entry per mediator")
        med_stations = [set(st) for st, _ in accreditation]
        med_types = [set(tt) for _, tt in accreditation]
    # patch coverage gaps: give an uncovered station to someone, then an uncovered type
    for s in range(scale.n_stations):
        if not any(s in st for st in med_stations):
            med_stations[int(rng.integers(n))].add(s)
    for s in range(scale.n_stations):
        holders = [j for j in range(n) if s in med_stations[j]]
        for t in range(scale.n_types):
            if not any(t in med_types[j] for j in holders):
                med_types[holders[int(rng.integers(len(holders)))]].add(t)

    vas = np.clip(rng.normal(0.0, scale.sigma_mu, size=n), -0.5, 0.5)
    if true_vas is not None:
        if len(true_vas) != n:
            raise ValueError("true_vas needs one entry per mediator")
        vas = np.asarray(true_vas, dtype=float)
    mediators = []
    for j in range(n):
        cells = {Cell(types[t], stations[s]) for t in med_types[j] for s in med_stations[j]}
        mediators.append(MediatorProfile(str(j + 1), cells, 3, 0, round(float(vas[j]), 6)))

    all_cells = sorted({c for m in mediators for c in m.accredited_cells})
    weights = rng.gamma(0.8, 1.0, size=len(all_cells))
    weights /= weights.sum()
    n_cases = scale.n_cases if scale.cases_per_mediator is None else n * scale.cases_per_mediator
    daily = max(n_cases, 1) / scale.history_days
    rates = {c: round(float(w * daily), 9) for c, w in zip(all_cells, weights)}
    # additive case-type and station effects, the structure the VA regression controls for
    type_eff = dict(zip(types, rng.normal(0.0, 0.08, size=len(types))))
    station_eff = dict(zip(stations, rng.normal(0.0, 0.05, size=len(stations))))
    base_p = {
        c: round(float(np.clip(0.45 + type_eff[c.case_type] + station_eff[c.station], 0.05, 0.95)), 6)
        for c in all_cells
    }
    arrival_model = ArrivalModel(rates, base_p)

    dur_params = {}
    for t in types:
        med = rng.uniform(35.0, 90.0)
        for y in (False, True):
            dur_params[(t, y)] = (round(math.log(med * (0.85 if y else 1.1)), 6), round(float(rng.uniform(0.4, 0.8)), 6))
    duration_model = DurationModel(dur_params)

    index = {}
    for m in mediators:
        for c in m.accredited_cells:
            index.setdefault(c, []).append(m.id)
    by_id = {m.id: m for m in mediators}

    if scale.cases_per_mediator is None:
        cell_pos = rng.choice(len(all_cells), size=n_cases, p=weights)
        activity = {m.id: float(a) for m, a in zip(mediators, rng.lognormal(0.0, scale.activity_sigma, size=n))}
        pairs = []
        for cp in cell_pos:
            cell = all_cells[cp]
            ids = index[cell]
            w = np.array([activity[i] for i in ids])
            pairs.append((cell, ids[int(rng.choice(len(ids), p=w / w.sum()))]))
    else:
        pairs = []
        for m in mediators:
            own = sorted(m.accredited_cells)
            for _ in range(scale.cases_per_mediator):
                pairs.append((own[int(rng.integers(len(own)))], m.id))
        order = rng.permutation(len(pairs))
        pairs = [pairs[k] for k in order]

    arrivals = np.sort(rng.integers(0, scale.history_days, size=len(pairs)))
    cases = []
    for k, ((cell, mid), day) in enumerate(zip(pairs, arrivals)):
        p = base_p[cell]
        y = sample_outcome(p, by_id[mid].true_va, rng)
        loc, sc = dur_params[(cell.case_type, y)]
        end = int(day) + max(1, int(math.ceil(rng.lognormal(loc, sc))))
        mode = "court" if rng.random() < 0.9 else "voluntary"
        cases.append(CaseRecord(
            f"h{k + 1}", cell, p, float(day), mode, str(int(day) // 365), mid, y, float(end),
        ))
    return Corpus(mediators, cases, arrival_model, duration_model)


def warm_start_corpus(
    n_stations: int = 8,
    n_experienced: int = 2,
    n_new: int = 4,
    seed: int = 0,
    *,
    rate: float = 0.12,
    experienced_cases: tuple = (100, 201),
    new_cases: tuple = (0, 3),
    sigma_mu: float = 0.11,
    history_days: int = 6 * 365,
) -> Corpus:
    """Small registry with sharply uneven experience, for warm-start comparisons.

    Each station has one case type and its own mediators: ``n_experienced``
    veterans with ``experienced_cases`` (half-open range) past cases and
    ``n_new`` newcomers with ``new_cases``. All true VAs come from the same
    N(0, sigma_mu^2), so experience says nothing about quality.
    """
    rng = np.random.default_rng(seed)
    mediators, cases = [], []
    for s in range(n_stations):
        cell = Cell("T01", _station_name(s))
        for j in range(n_experienced + n_new):
            mid = str(len(mediators) + 1)
            va = round(float(np.clip(rng.normal(0.0, sigma_mu), -0.3, 0.3)), 4)
            mediators.append(MediatorProfile(mid, {cell}, 3, 0, va))
            lo, hi = experienced_cases if j < n_experienced else new_cases
            for _ in range(int(rng.integers(lo, hi))):
                day = float(rng.integers(0, history_days))
                cases.append(CaseRecord(
                    f"h{len(cases) + 1}", cell, 0.5, day, "court", str(int(day) // 365), mid,
                ))
    cells = sorted({c for m in mediators for c in m.accredited_cells})
    arrival_model = ArrivalModel({c: rate for c in cells}, {c: 0.5 for c in cells})
    return Corpus(mediators, cases, arrival_model, DurationModel.uniform(["T01"], 60.0, 0.5))
