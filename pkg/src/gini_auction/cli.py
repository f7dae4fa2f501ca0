"""Batch command line: run the mechanism on a dataset, simulate the
budget game, compute the full-information optimum, sweep population
sizes, and launch the live auction service.

Exit codes: 0 success, 3 dataset/parse problems, 4 infeasible mechanism.
"""

from __future__ import annotations

import csv
import json
import math
import statistics
import sys
from pathlib import Path
from typing import Optional

import click
import numpy as np

from .core import (
    BudgetProfile,
    MechanismInfeasible,
    MechanismParams,
    lorenz_points,
    run_mechanism,
)
from .data import (
    DatasetFormatError,
    IcoDataset,
    generate_observers,
    load_dataset,
    make_synthetic_dataset,
    resolve_dataset_path,
    save_dataset,
)
from .equilibrium import Agent, first_best, iterate_equilibrium
from .service import WinnerCountPolicy, create_app

EXIT_PARSE = 3
EXIT_INFEASIBLE = 4

DEFAULT_KSET = "0.5,0.6,0.7,0.8,0.9,1.0"


def parse_kset(spec: str) -> WinnerCountPolicy:
    """Comma list of winner counts; values at or below 1 are fractions of n."""
    parts = [p.strip() for p in spec.split(",") if p.strip()]
    if not parts:
        raise click.BadParameter("empty winner count set")
    try:
        values = [float(p) for p in parts]
    except ValueError as exc:
        raise click.BadParameter(f"bad winner count set {spec!r}: {exc}")
    if all(v <= 1.0 for v in values):
        return WinnerCountPolicy(fractions=tuple(values))
    if any(v != int(v) for v in values):
        raise click.BadParameter(
            "mix of fractions and integer counts is not supported"
        )
    return WinnerCountPolicy(counts=tuple(int(v) for v in values))


def _load(input_path: str) -> IcoDataset:
    try:
        return load_dataset(resolve_dataset_path(input_path))
    except (DatasetFormatError, FileNotFoundError, json.JSONDecodeError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_PARSE)


def _params(policy: WinnerCountPolicy, g: float, n: int) -> MechanismParams:
    ks = policy.resolve(n)
    if not ks:
        click.echo("error: no allowed winner count fits the population", err=True)
        sys.exit(EXIT_INFEASIBLE)
    return MechanismParams(gini_cap=g, winner_counts=ks)


def _write_lorenz(path: Path, shares: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["population_fraction", "share_fraction"])
        writer.writerows(lorenz_points(shares))


@click.group()
def main() -> None:
    """Inequality-capped price discovery auction toolkit."""


@main.command()
@click.option("--input", "input_path", required=True, help="dataset CSV/JSON")
@click.option("--g", default=0.6, show_default=True, help="Gini cap")
@click.option("--kset", default=DEFAULT_KSET, show_default=True,
              help="winner counts (integers) or population fractions")
@click.option("--out-dir", type=click.Path(file_okay=False), default=None,
              help="write allocation CSV, Lorenz CSV, and summary JSON here")
def mechanism(input_path: str, g: float, kset: str, out_dir: Optional[str]):
    """Run the mechanism on a dataset's reported budgets."""
    dataset = _load(input_path)
    policy = parse_kset(kset)
    params = _params(policy, g, dataset.n)
    profile = BudgetProfile.of(
        {r.agent_id: r.budget_eth for r in dataset.records}
    )
    try:
        sol = run_mechanism(profile, params)
    except MechanismInfeasible as exc:
        click.echo(f"infeasible: {exc}", err=True)
        sys.exit(EXIT_INFEASIBLE)
    alloc = sol.allocation
    winners = int(np.count_nonzero(alloc.shares))
    click.echo(f"price {sol.price:.6g}")
    click.echo(f"winner_count {sol.winner_count}")
    click.echo(f"gini {alloc.gini:.6g}")
    click.echo(f"positive_shares {winners} of {dataset.n}")
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "allocation.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["agent_id", "share", "spending"])
            for aid, share, spend in zip(
                alloc.agent_ids, alloc.shares, alloc.spendings
            ):
                writer.writerow([aid, f"{share:.12g}", f"{spend:.12g}"])
        _write_lorenz(out / "lorenz.csv", alloc.shares)
        (out / "summary.json").write_text(json.dumps({
            "dataset": dataset.name,
            "price": sol.price,
            "winner_count": sol.winner_count,
            "gini": alloc.gini,
            "prices_by_count": {str(k): v for k, v in sol.prices_by_count.items()},
        }, indent=2))


def _dataset_agents(dataset: IcoDataset, observers: int, seed: int) -> list[Agent]:
    agents = dataset.to_agents()
    if observers:
        agents += generate_observers(dataset, observers, seed)
    return agents


@main.command()
@click.option("--input", "input_path", required=True)
@click.option("--g", default=0.6, show_default=True)
@click.option("--kset", default=DEFAULT_KSET, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--observers", default=0, show_default=True,
              help="add this many synthetic observer agents")
@click.option("--out-dir", type=click.Path(file_okay=False), default=None)
def equilibrium(input_path: str, g: float, kset: str, seed: int,
                observers: int, out_dir: Optional[str]):
    """Simulate the budget game to an approximate equilibrium."""
    dataset = _load(input_path)
    agents = _dataset_agents(dataset, observers, seed)
    params = _params(parse_kset(kset), g, len(agents))
    try:
        report = iterate_equilibrium(agents, params)
    except MechanismInfeasible as exc:
        click.echo(f"infeasible: {exc}", err=True)
        sys.exit(EXIT_INFEASIBLE)
    err = report.max_error
    err_over_budget = report.max_error_over_budget(agents)
    click.echo(f"decomposition {report.decomposition()}")
    click.echo(f"gini_rev {report.revenue:.6g}")
    click.echo(f"opt_rev {report.first_best:.6g}")
    click.echo(f"err {err:.6g}")
    click.echo(f"err_over_budget {err_over_budget:.6g}")
    click.echo(f"converged {report.converged} rounds {report.rounds}")
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps({
            "dataset": dataset.name,
            "name": dataset.name,
            "gini_rev": report.revenue,
            "opt_rev": report.first_best,
            "err": err,
            "err_over_budget": err_over_budget,
            "decomposition": report.decomposition(),
            "converged": report.converged,
            "rounds": report.rounds,
        }, indent=2))
        with open(out / "budgets.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["agent_id", "valuation", "max_budget",
                             "reported_budget"])
            for a in agents:
                writer.writerow([a.id, f"{a.valuation:.12g}",
                                 f"{a.max_budget:.12g}",
                                 f"{a.reported_budget:.12g}"])
        profile = BudgetProfile.of(report.budgets)
        sol = run_mechanism(profile, params)
        _write_lorenz(out / "lorenz.csv", sol.allocation.shares)


@main.command()
@click.option("--input", "input_path", required=True)
@click.option("--g", default=0.6, show_default=True)
@click.option("--kset", default=DEFAULT_KSET, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--observers", default=0, show_default=True)
def firstbest(input_path: str, g: float, kset: str, seed: int, observers: int):
    """Full-information optimal revenue for a dataset's population."""
    dataset = _load(input_path)
    agents = _dataset_agents(dataset, observers, seed)
    params = _params(parse_kset(kset), g, len(agents))
    try:
        value = first_best(agents, params)
    except MechanismInfeasible as exc:
        click.echo(f"infeasible: {exc}", err=True)
        sys.exit(EXIT_INFEASIBLE)
    click.echo(f"first_best {value:.6g}")


@main.command()
@click.option("--g", default=0.6, show_default=True)
@click.option("--sizes", default="50,500,5000", show_default=True)
@click.option("--seeds", default=10, show_default=True)
@click.option("--kmin", default=10, show_default=True,
              help="smallest allowed winner count")
@click.option("--seed", default=1, show_default=True, help="first seed")
@click.option("--out-dir", type=click.Path(file_okay=False), default=None)
def asymptotic(g: float, sizes: str, seeds: int, kmin: int, seed: int,
               out_dir: Optional[str]):
    """Revenue trend across population sizes (one row per size and seed)."""
    from .equilibrium import asymptotic_trial

    ns = [int(s) for s in sizes.split(",") if s.strip()]
    rows = []
    click.echo("n,seed,revenue,first_best")
    for n in ns:
        params = MechanismParams(gini_cap=g,
                                 winner_counts=tuple(range(kmin, n + 1)))
        revs = []
        for s in range(seed, seed + seeds):
            rep = asymptotic_trial(n, params, seed=s)
            revs.append(rep.revenue)
            rows.append((n, s, rep.revenue, rep.first_best))
            click.echo(f"{n},{s},{rep.revenue:.6g},{rep.first_best:.6g}")
        click.echo(f"# n={n} median_revenue {statistics.median(revs):.6g}")
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "asymptotic.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n", "seed", "revenue", "first_best"])
            writer.writerows(rows)


@main.command()
@click.option("--name", default="synthetic", show_default=True)
@click.option("--agents", "n_agents", default=100, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", required=True,
              help="output dataset path (.csv or .json)")
def synth(name: str, n_agents: int, seed: int, out_path: str):
    """Generate a synthetic sale dataset for tests and demos."""
    dataset = make_synthetic_dataset(name, n_agents, seed)
    save_dataset(dataset, out_path)
    click.echo(f"wrote {out_path} ({dataset.n} agents)")


@main.command()
@click.option("--port", default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--g", default=0.6, show_default=True)
@click.option("--kset", default=DEFAULT_KSET, show_default=True)
@click.option("--input", "input_path", default=None,
              help="optional dataset preload")
def serve(port: int, host: str, g: float, kset: str,
          input_path: Optional[str]):
    """Launch the live auction HTTP service."""
    import uvicorn

    preload = None
    if input_path:
        dataset = _load(input_path)
        preload = {r.agent_id: r.budget_eth for r in dataset.records}
    app = create_app(gini_cap=g, policy=parse_kset(kset), preload=preload)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
