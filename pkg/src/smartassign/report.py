"""Aggregation of simulation runs into comparison tables, figures and raw logs.

Output directory layout::

    tables/comparison.csv       one row per (policy, va_mode, penalty, penalty_kind)
    tables/shadow_prices.csv    mediator, penalty, mean_price, n_solves
    tables/allocations.csv      mediator, penalty, cell, status, count (summed over seeds)
    figures/*.svg               bar charts of the tables above
    raw/<run>.jsonl             one run record, one record per case, one price record
"""

from __future__ import annotations

import csv
import json
import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .domain import id_sort_key
from .simulator import CaseLogEntry, compute_gini, compute_ocdm, loads_from_case_log

Z_95 = 1.959963984540054
METRICS = ("agreement_rate", "ocdm", "gini")
POLICY_ORDER = ("upper_bound", "least_load", "greedy_star", "thompson_star", "smart")


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    half_width: float | None = None

    @property
    def ci(self):
        if self.half_width is None:
            return None
        return (self.mean - self.half_width, self.mean + self.half_width)


@dataclass
class ComparisonRow:
    policy: str
    va_mode: str
    penalty: float | None
    penalty_kind: str
    n_seeds: int
    agreement_rate: MetricSummary
    ocdm: MetricSummary
    gini: MetricSummary

    @property
    def key(self) -> tuple:
        return (self.policy, self.va_mode, self.penalty, self.penalty_kind)


def summarize(values) -> MetricSummary:
    """Mean with a 95% normal-approximation half-width (None below two values).

    Uses exactly rounded sums so the result does not depend on value order.
    """
    vals = [float(v) for v in values]
    n = len(vals)
    if n == 0:
        raise ValueError("no values to summarize")
    mean = math.fsum(vals) / n
    if n < 2:
        return MetricSummary(mean)
    var = math.fsum((v - mean) ** 2 for v in vals) / (n - 1)
    return MetricSummary(mean, Z_95 * math.sqrt(var) / math.sqrt(n))


def run_key(result) -> tuple:
    meta = result.meta
    return (meta["name"], meta["va_mode"], meta.get("penalty"), meta.get("penalty_kind", "quadratic"))


def _row_order(key) -> tuple:
    name, mode, lam, kind = key
    rank = POLICY_ORDER.index(name) if name in POLICY_ORDER else len(POLICY_ORDER)
    return (rank, str(name), str(mode), -1.0 if lam is None else float(lam), str(kind))


def aggregate(results) -> list:
    """Group runs by configuration and summarize each metric across seeds."""
    groups = defaultdict(list)
    for r in results:
        groups[run_key(r)].append(r)
    rows = []
    for key, runs in sorted(groups.items(), key=lambda kv: _row_order(kv[0])):
        rows.append(ComparisonRow(
            *key,
            n_seeds=len(runs),
            **{m: summarize(getattr(r, m) for r in runs) for m in METRICS},
        ))
    return rows


def shadow_price_report(results) -> dict:
    """Mean price per ``(mediator, penalty)`` over every solve in every seed.

    A mediator absent from a solve's graph contributes a price of zero.
    """
    sums = defaultdict(float)
    solves = defaultdict(int)
    mediators = defaultdict(set)
    for r in results:
        if r.shadow_price_sums is None:
            continue
        lam = r.meta.get("penalty")
        solves[lam] += r.n_solves
        for mid, s in zip(r.mediator_ids, r.shadow_price_sums):
            sums[(mid, lam)] += float(s)
            mediators[lam].add(mid)
    out = {}
    for lam, mids in mediators.items():
        for mid in mids:
            out[(mid, lam)] = sums[(mid, lam)] / solves[lam] if solves[lam] else 0.0
    return out


def allocation_bars(case_log) -> dict:
    """Per-mediator assignment counts keyed by ``(cell, "within" | "overloaded")``.

    An assignment is overloaded when the mediator's load right after it
    exceeds capacity.
    """
    out = defaultdict(Counter)
    for e in case_log:
        if e.mediator_id is None:
            continue
        status = "overloaded" if e.load_after > e.capacity else "within"
        out[e.mediator_id][(f"{e.case_type}@{e.station}", status)] += 1
    return {k: dict(v) for k, v in out.items()}


# raw logs -------------------------------------------------------------------

def _run_name(result) -> str:
    label = re.sub(r"[^A-Za-z0-9_.-]+", "_", result.policy)
    return f"{label}__seed{result.seed}"


def write_raw(result, raw_dir) -> Path:
    raw_dir = Path(raw_dir)
    raw_dir.mkdir(parents=True, exist_ok=True)
    path = raw_dir / f"{_run_name(result)}.jsonl"
    with open(path, "w") as fh:
        head = {
            "record": "run",
            "policy": result.policy,
            "seed": result.seed,
            "run_length": result.run_length,
            "mediator_ids": list(result.mediator_ids),
            "capacities": [int(c) for c in result.capacities],
            "meta": result.meta,
            "agreement_rate": result.agreement_rate,
            "ocdm": result.ocdm,
            "gini": result.gini,
            "n_unassignable": result.n_unassignable,
        }
        fh.write(json.dumps(head, sort_keys=True) + "\n")
        for e in result.case_log:
            rec = {"record": "case", **e.__dict__}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        if result.shadow_price_sums is not None:
            rec = {
                "record": "shadow_prices",
                "sums": [float(s) for s in result.shadow_price_sums],
                "n_solves": result.n_solves,
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return path


@dataclass
class RawRun:
    """A run rebuilt from its raw log; metrics are recomputed from the case records."""

    policy: str
    seed: int
    run_length: int
    mediator_ids: tuple
    capacities: np.ndarray
    meta: dict
    case_log: list
    shadow_price_sums: np.ndarray | None = None
    n_solves: int = 0
    stored: dict = field(default_factory=dict)

    @property
    def agreement_rate(self) -> float:
        done = [e for e in self.case_log if e.concluded_by(self.run_length)]
        return sum(bool(e.outcome) for e in done) / len(done) if done else 0.0

    @property
    def ocdm(self) -> float:
        loads = loads_from_case_log(self.case_log, self.mediator_ids, self.run_length)
        return compute_ocdm(loads, self.capacities, len(self.mediator_ids), self.run_length)

    @property
    def gini(self) -> float:
        counts = Counter(e.mediator_id for e in self.case_log if e.mediator_id is not None)
        return compute_gini([counts.get(m, 0) for m in self.mediator_ids])


def read_raw(path) -> RawRun:
    head = None
    cases = []
    sums, n_solves = None, 0
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            kind = rec.pop("record")
            if kind == "run":
                head = rec
            elif kind == "case":
                cases.append(CaseLogEntry(**rec))
            elif kind == "shadow_prices":
                sums = np.array(rec["sums"], dtype=float)
                n_solves = rec["n_solves"]
    if head is None:
        raise ValueError(f"{path}: no run record")
    return RawRun(
        head["policy"], head["seed"], head["run_length"], tuple(head["mediator_ids"]),
        np.array(head["capacities"]), head["meta"], cases, sums, n_solves,
        {m: head[m] for m in METRICS},
    )


def read_raw_dir(raw_dir) -> list:
    return [read_raw(p) for p in sorted(Path(raw_dir).glob("*.jsonl"))]


# tables ---------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def comparison_records(rows) -> list:
    out = []
    for r in rows:
        rec = {
            "policy": r.policy, "va_mode": r.va_mode, "penalty": r.penalty,
            "penalty_kind": r.penalty_kind, "n_seeds": r.n_seeds,
        }
        for m in METRICS:
            s = getattr(r, m)
            rec[f"{m}_mean"] = s.mean
            rec[f"{m}_ci95"] = s.half_width
        out.append(rec)
    return out


def _write_csv(path: Path, records, columns) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for rec in records:
            w.writerow([_fmt(rec[c]) for c in columns])


COMPARISON_COLUMNS = (
    "policy", "va_mode", "penalty", "penalty_kind", "n_seeds",
    "agreement_rate_mean", "agreement_rate_ci95", "ocdm_mean", "ocdm_ci95", "gini_mean", "gini_ci95",
)


def write_tables(results, out_dir) -> dict:
    out_dir = Path(out_dir)
    tables = out_dir / "tables"
    rows = aggregate(results)
    _write_csv(tables / "comparison.csv", comparison_records(rows), COMPARISON_COLUMNS)
    prices = shadow_price_report(results)
    solves = defaultdict(int)
    for r in results:
        if r.shadow_price_sums is not None:
            solves[r.meta.get("penalty")] += r.n_solves
    price_recs = [
        {"mediator": m, "penalty": lam, "mean_price": v, "n_solves": solves[lam]}
        for (m, lam), v in sorted(prices.items(), key=lambda kv: (kv[0][1], id_sort_key(kv[0][0])))
    ]
    _write_csv(tables / "shadow_prices.csv", price_recs, ("mediator", "penalty", "mean_price", "n_solves"))
    alloc = defaultdict(int)
    for r in results:
        if r.meta.get("name") != "smart":
            continue
        for mid, counts in allocation_bars(r.case_log).items():
            for (cell, status), n in counts.items():
                alloc[(mid, r.meta.get("penalty"), cell, status)] += n
    alloc_recs = [
        {"mediator": k[0], "penalty": k[1], "cell": k[2], "status": k[3], "count": n}
        for k, n in sorted(alloc.items(), key=lambda kv: (kv[0][1], id_sort_key(kv[0][0]), kv[0][2], kv[0][3]))
    ]
    _write_csv(tables / "allocations.csv", alloc_recs, ("mediator", "penalty", "cell", "status", "count"))
    return {"comparison": rows, "shadow_prices": prices, "allocations": dict(alloc)}


# figures --------------------------------------------------------------------

def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "smartassign"
    return plt


def _save(fig, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    import matplotlib.pyplot as plt

    plt.close(fig)


def _row_label(r: ComparisonRow) -> str:
    label = f"{r.policy} ({r.va_mode})"
    if r.penalty is not None:
        label += f" λ={r.penalty:g}"
    return label


def plot_comparison(rows, path) -> None:
    plt = _pyplot()
    fig, axes = plt.subplots(1, 3, figsize=(13, 0.45 * len(rows) + 1.5), sharey=True)
    labels = [_row_label(r) for r in rows]
    y = np.arange(len(rows))
    for ax, metric in zip(axes, METRICS):
        means = [getattr(r, metric).mean for r in rows]
        errs = [getattr(r, metric).half_width or 0.0 for r in rows]
        ax.barh(y, means, xerr=errs, color="tab:blue")
        ax.set_title(metric)
    axes[0].set_yticks(y, labels)
    axes[0].invert_yaxis()
    fig.tight_layout()
    _save(fig, Path(path))


def plot_shadow_prices(prices, path) -> None:
    plt = _pyplot()
    lams = sorted({lam for _, lam in prices if lam is not None})
    mids = sorted({m for m, _ in prices}, key=id_sort_key)
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(mids)), 3.5))
    width = 0.8 / max(len(lams), 1)
    x = np.arange(len(mids))
    for k, lam in enumerate(lams):
        ax.bar(x + k * width, [prices.get((m, lam), 0.0) for m in mids], width, label=f"λ={lam:g}")
    ax.set_xticks(x + width * (len(lams) - 1) / 2, mids)
    ax.set_xlabel("mediator")
    ax.set_ylabel("mean shadow price")
    if lams:
        ax.legend()
    fig.tight_layout()
    _save(fig, Path(path))


def plot_allocations(alloc, path) -> None:
    """Stacked bars per (penalty, mediator): within-capacity vs overloaded assignments."""
    plt = _pyplot()
    lams = sorted({k[1] for k in alloc if k[1] is not None})
    mids = sorted({k[0] for k in alloc}, key=id_sort_key)
    fig, axes = plt.subplots(1, max(len(lams), 1), figsize=(3.2 * max(len(lams), 1), 3.2), sharey=True, squeeze=False)
    for ax, lam in zip(axes[0], lams or [None]):
        within = [sum(n for k, n in alloc.items() if k[0] == m and k[1] == lam and k[3] == "within") for m in mids]
        over = [sum(n for k, n in alloc.items() if k[0] == m and k[1] == lam and k[3] == "overloaded") for m in mids]
        ax.bar(mids, within, color="tab:blue", label="within capacity")
        ax.bar(mids, over, bottom=within, color="tab:red", label="overloaded")
        ax.set_title("λ=" + ("-" if lam is None else f"{lam:g}"))
    axes[0][0].legend(fontsize="small")
    fig.tight_layout()
    _save(fig, Path(path))


def plot_histogram(values, path, xlabel="estimated VA") -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.hist(np.asarray(values, dtype=float), bins=40, color="tab:blue")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("mediators")
    fig.tight_layout()
    _save(fig, Path(path))


def plot_drift(trajectory, path) -> None:
    plt = _pyplot()
    arr = np.asarray(trajectory, dtype=float)
    k = np.arange(1, len(arr) + 1)
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for col, label in enumerate(("explicit", "posterior only", "recalibrated")):
        ax.plot(k, arr[:, col], label=label)
    ax.set_xlabel("observed outcomes")
    ax.set_ylabel("VA estimate")
    ax.legend()
    fig.tight_layout()
    _save(fig, Path(path))


def write_report(results, out_dir, *, raw=True, figures=True) -> dict:
    """Tables, figures and (optionally) raw logs for a batch of runs."""
    out_dir = Path(out_dir)
    if raw:
        for r in results:
            write_raw(r, out_dir / "raw")
    tables = write_tables(results, out_dir)
    if figures:
        fig_dir = out_dir / "figures"
        if tables["comparison"]:
            plot_comparison(tables["comparison"], fig_dir / "comparison.svg")
        if tables["shadow_prices"]:
            plot_shadow_prices(tables["shadow_prices"], fig_dir / "shadow_prices.svg")
        if tables["allocations"]:
            plot_allocations(tables["allocations"], fig_dir / "allocations.svg")
    return tables
