"""Command-line entry point: ``walklab --experiment NAME [options]``."""
from __future__ import annotations

import sys
from typing import Any

import click
import pydantic

from ..exact_enum import BudgetExceeded
from .config import build_config, read_config_text
from .experiments import EXPERIMENTS
from .runner import EXIT_FAIL, EXIT_OK, EXIT_USAGE, run_experiment


def _overrides(config: str | None, seed: int | None, out: str | None, budget: int | None) -> dict[str, Any]:
    data = read_config_text(config) if config else {}
    if seed is not None:
        data["seed"] = seed
    if out is not None:
        data["output_dir"] = out
    if budget is not None:
        data["budget"] = budget
    return data


@click.command(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="YAML file merged over the experiment defaults.")
@click.option("--experiment", help="Experiment name (overrides the one in --config).")
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), help="Master seed (u64).")
@click.option("--out", type=click.Path(file_okay=False), help="Output directory.")
@click.option("--budget", type=click.IntRange(min=1), help="Enumeration node budget.")
@click.option("--verify", is_flag=True, help="Run the acceptance suite (all experiments unless one is named).")
@click.option("--list", "list_only", is_flag=True, help="List experiments and exit.")
def main(config_path: str | None, experiment: str | None, seed: int | None, out: str | None,
         budget: int | None, verify: bool, list_only: bool) -> None:
    """Run walk-in-random-potential experiments; exit 0 pass, 1 acceptance failure, 2 usage error."""
    if list_only:
        for e in EXPERIMENTS.values():
            click.echo(f"{e.name:24s} criteria {','.join(e.criteria):12s} {e.summary}")
        sys.exit(EXIT_OK)
    try:
        data = _overrides(config_path, seed, out, budget)
    except (OSError, ValueError) as err:
        raise click.UsageError(str(err)) from err
    name = experiment or data.get("experiment")
    if name is None and not verify:
        raise click.UsageError("name an experiment with --experiment or in --config")
    names = [name] if name is not None else list(EXPERIMENTS)
    if name is not None and name not in EXPERIMENTS:
        raise click.UsageError(f"unknown experiment {name!r}; see --list")
    try:
        configs = [build_config(n, data) for n in names]
    except pydantic.ValidationError as err:
        raise click.UsageError(f"invalid config:\n{err}") from err

    status = EXIT_OK
    for cfg in configs:
        try:
            rec, code = run_experiment(cfg)
        except BudgetExceeded as err:
            raise click.UsageError(f"{cfg.experiment}: {err}; raise --budget") from err
        for v in rec.verdicts:
            click.echo(f"{cfg.experiment:24s} criterion {v.criterion:14s} {'PASS' if v.passed else 'FAIL'}")
        status = max(status, code)
    sys.exit(EXIT_FAIL if status else EXIT_OK)
