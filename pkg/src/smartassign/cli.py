"""Command-line entry point: ``smartassign <command>``.

Exit codes: 0 success, 2 schema or config error, 3 solver failure,
4 integrity error.
"""

from __future__ import annotations

import csv
import functools
import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import report as rpt
from .assignment import extract_shadow_prices, parse_instance, solve as solve_qp, verify_kkt
from .belief import replay_belief_trajectory
from .config import RunConfig, scenario_preset
from .corpus import SyntheticScale, generate_synthetic_corpus, load_corpus, write_corpus
from .errors import (
    Infeasible,
    IntegrityError,
    InsufficientData,
    MaxIterations,
    QuadratureFailure,
    SchemaError,
)
from .simulator import run_many
from .va_estimation import estimate_va

OUTPUT_ENV = "SMARTASSIGN_OUTPUT_DIR"
EXIT_SCHEMA, EXIT_SOLVER, EXIT_INTEGRITY = 2, 3, 4


def default_output_dir() -> str:
    return os.environ.get(OUTPUT_ENV, "smartassign-output")


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def exit_codes(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except IntegrityError as exc:
            _fail(EXIT_INTEGRITY, str(exc))
        except (Infeasible, MaxIterations, QuadratureFailure) as exc:
            _fail(EXIT_SOLVER, f"{type(exc).__name__}: {exc}")
        except (SchemaError, InsufficientData, ValueError) as exc:
            _fail(EXIT_SCHEMA, f"{type(exc).__name__}: {exc}")

    return wrapper


output_option = click.option(
    "--output-dir", "-o", type=click.Path(file_okay=False), default=None,
    help=f"Output directory (default: ${OUTPUT_ENV} or ./smartassign-output).",
)


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Capacity-aware mediator assignment: estimation, solving and simulation."""


@main.command()
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--scenario", type=click.IntRange(1, 2), default=None, help="Write a stylized scenario preset instead.")
@click.option("--mediators", "n_mediators", type=click.IntRange(min=1), default=SyntheticScale.n_mediators)
@click.option("--stations", "n_stations", type=click.IntRange(min=1), default=SyntheticScale.n_stations)
@click.option("--types", "n_types", type=click.IntRange(min=1), default=SyntheticScale.n_types)
@click.option("--cases", "n_cases", type=click.IntRange(min=0), default=SyntheticScale.n_cases)
@click.option("--cases-per-mediator", type=click.IntRange(min=0), default=None)
@click.option("--density", type=float, default=SyntheticScale.accreditation_density)
@click.option("--sigma-mu", type=float, default=SyntheticScale.sigma_mu)
@click.option("--history-days", type=click.IntRange(min=1), default=SyntheticScale.history_days)
@click.option("--seed", type=click.IntRange(min=0), default=0)
@exit_codes
def generate(out_dir, scenario, n_mediators, n_stations, n_types, n_cases, cases_per_mediator,
             density, sigma_mu, history_days, seed):
    """Write a synthetic corpus (or a scenario preset with its run config) to OUT_DIR."""
    out = Path(out_dir)
    if scenario is not None:
        config, corpus = scenario_preset(scenario)
        write_corpus(corpus, out)
        config.scenario = None
        config.corpus = "."
        config.save(out / "run.yaml")
        click.echo(f"scenario {scenario} written to {out}")
        return
    scale = SyntheticScale(
        n_mediators=n_mediators, n_stations=n_stations, n_types=n_types, n_cases=n_cases,
        accreditation_density=density, sigma_mu=sigma_mu, history_days=history_days,
        cases_per_mediator=cases_per_mediator,
    )
    corpus = generate_synthetic_corpus(scale, seed)
    write_corpus(corpus, out)
    click.echo(f"{len(corpus.mediators)} mediators, {len(corpus.cells)} cells, {len(corpus.cases)} cases -> {out}")


@main.command("estimate-va")
@click.argument("corpus_dir", type=click.Path(exists=True, file_okay=False))
@output_option
@click.option("--no-figures", is_flag=True)
@exit_codes
def estimate_va_cmd(corpus_dir, output_dir, no_figures):
    """Estimate mediator value-added from the case history in CORPUS_DIR."""
    corpus = load_corpus(corpus_dir)
    result = estimate_va(corpus.cases)
    out = Path(output_dir or default_output_dir())
    (out / "tables").mkdir(parents=True, exist_ok=True)
    truth = corpus.true_vas
    with open(out / "tables" / "va_estimates.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mediator_id", "mu_hat", "posterior_var", "n_cases", "shrink_factor", "raw_mean_residual", "true_va"])
        for mid, e in result.estimates.items():
            tv = truth.get(mid)
            w.writerow([mid, f"{e.mu_hat:.10g}", f"{e.posterior_var:.10g}", e.n_cases,
                        f"{e.shrink_factor:.10g}", f"{e.raw_mean_residual:.10g}", "" if tv is None else tv])
    mu = np.array([e.mu_hat for e in result.estimates.values()])
    counts, edges = np.histogram(mu, bins=40) if mu.size else (np.array([]), np.array([]))
    with open(out / "tables" / "va_histogram.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_low", "bin_high", "count"])
        for k, c in enumerate(counts):
            w.writerow([f"{edges[k]:.6g}", f"{edges[k + 1]:.6g}", int(c)])
    comp = result.components
    summary = {
        "sigma_eps_sq": comp.sigma_eps_sq,
        "sigma_mu_sq": comp.sigma_mu_sq,
        "sigma_theta_sq": comp.sigma_theta_sq,
        "n_estimates": len(result.estimates),
        "n_cases": result.fit.n_obs,
    }
    (out / "tables" / "va_components.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if not no_figures and mu.size:
        rpt.plot_histogram(mu, out / "figures" / "va_histogram.svg")
    click.echo(
        f"{len(result.estimates)} mediators estimated; sigma_mu={comp.sigma_mu_sq ** 0.5:.4f} "
        f"sigma_eps={comp.sigma_eps_sq ** 0.5:.4f} -> {out}"
    )


@main.command()
@click.argument("instance", type=click.File("r"))
@click.option("--tol", type=float, default=1e-6, show_default=True)
@click.option("--json", "as_json", is_flag=True, help="Emit a JSON document instead of text.")
@exit_codes
def solve(instance, tol, as_json):
    """Solve one serialized assignment program and print the solution and duals."""
    try:
        inst = parse_instance(instance.read())
    except (KeyError, IndexError) as exc:
        raise SchemaError(f"malformed instance: {exc}") from None
    sol = solve_qp(inst, tol=tol)
    kkt = verify_kkt(inst, sol)
    doc = {
        "status": sol.status,
        "objective": sol.objective,
        "kkt_residual": kkt.max,
        "x": {f"{u} {v}": val for (u, v), val in sol.x.items()},
        "xi": sol.xi,
        "duals_c1": dict(zip(inst.real_case_ids, sol.duals_c1.tolist())),
        "duals_c2": dict(zip(inst.shadow_case_ids, sol.duals_c2.tolist())),
        "duals_c3": {f"{u} {t}": val for (u, t), val in sol.duals_c3.items()},
        "shadow_prices": extract_shadow_prices(sol, inst),
    }
    if as_json:
        click.echo(json.dumps(doc, indent=2, sort_keys=True))
        return
    click.echo(f"status {doc['status']}  objective {doc['objective']:.9g}  kkt {doc['kkt_residual']:.3g}")
    for key, val in doc["x"].items():
        click.echo(f"x {key} {val:.9g}")
    for key, val in doc["xi"].items():
        click.echo(f"xi {key} {val:.9g}")
    for key, val in doc["shadow_prices"].items():
        click.echo(f"price {key} {val:.9g}")


@main.command()
@click.argument("config_file", type=click.Path(exists=True, dir_okay=False))
@output_option
@click.option("--workers", type=click.IntRange(min=1), default=None, help="Parallel runs (default from config).")
@click.option("--no-raw", is_flag=True, help="Skip per-case raw logs.")
@click.option("--no-figures", is_flag=True)
@exit_codes
def simulate(config_file, output_dir, workers, no_raw, no_figures):
    """Run the policies x penalties x seeds matrix described by CONFIG_FILE."""
    config = RunConfig.load(config_file)
    corpus = config.resolve_corpus(base_dir=Path(config_file).parent)
    out = Path(output_dir or config.output_dir or default_output_dir())
    results = run_many(config.sim_configs(corpus), workers or config.workers)
    tables = rpt.write_report(results, out, raw=not no_raw, figures=not no_figures)
    _echo_table(tables["comparison"])
    click.echo(f"-> {out}")


def _echo_table(rows) -> None:
    click.echo(f"{'policy':<16}{'mode':<9}{'lambda':>8}{'seeds':>7}{'agreement':>12}{'OCDM':>11}{'Gini':>9}")
    for r in rows:
        lam = "" if r.penalty is None else f"{r.penalty:g}"
        click.echo(
            f"{r.policy:<16}{r.va_mode:<9}{lam:>8}{r.n_seeds:>7}"
            f"{r.agreement_rate.mean:>12.4f}{r.ocdm.mean:>11.2f}{r.gini.mean:>9.4f}"
        )


@main.command()
@click.option("--steps", type=click.IntRange(min=1), default=50, show_default=True)
@click.option("--period", type=click.IntRange(min=0), default=7, show_default=True)
@click.option("--p", "p", type=click.FloatRange(0.0, 1.0), default=0.5, show_default=True)
@click.option("--outcomes", type=click.Choice(["success", "failure", "alternating"]), default="success",
              show_default=True)
@output_option
@click.option("--no-figures", is_flag=True)
@exit_codes
def drift(steps, period, p, outcomes, output_dir, no_figures):
    """Replay a fixed outcome sequence and compare the three VA trajectories."""
    if outcomes == "success":
        ys = [True] * steps
    elif outcomes == "failure":
        ys = [False] * steps
    else:
        ys = [k % 2 == 0 for k in range(steps)]
    traj = replay_belief_trajectory([p] * steps, ys, period)
    out = Path(output_dir or default_output_dir())
    (out / "tables").mkdir(parents=True, exist_ok=True)
    with open(out / "tables" / "drift.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "outcome", "explicit", "posterior_only", "recalibrated"])
        for k, (y, row) in enumerate(zip(ys, traj), start=1):
            w.writerow([k, int(y), *(f"{v:.10g}" for v in row)])
    if not no_figures:
        rpt.plot_drift(traj, out / "figures" / "drift.svg")
    e, plain, recal = traj[-1]
    click.echo(f"final explicit {e:.5f}  posterior-only {plain:.5f}  recalibrated {recal:.5f}")


@main.command()
@click.argument("out_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--no-figures", is_flag=True)
@exit_codes
def report(out_dir, no_figures):
    """Rebuild tables and figures in OUT_DIR from its raw/*.jsonl logs."""
    runs = rpt.read_raw_dir(Path(out_dir) / "raw")
    if not runs:
        raise SchemaError(f"no raw logs under {Path(out_dir) / 'raw'}")
    tables = rpt.write_report(runs, out_dir, raw=False, figures=not no_figures)
    _echo_table(tables["comparison"])


if __name__ == "__main__":
    main()
