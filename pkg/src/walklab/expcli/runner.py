"""Run orchestration: budget scope, record persistence and CSV tables."""
from __future__ import annotations

import contextlib
import json
import os
from collections.abc import Iterator
from datetime import datetime, timezone
from pathlib import Path

from ..exact_enum import BUDGET_ENV
from ..streams import RngStream
from .config import ExperimentConfig
from .experiments import EXPERIMENTS
from .records import RunRecord, emit_csv, write_records

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


@contextlib.contextmanager
def budget_scope(budget: int) -> Iterator[None]:
    """Make ``budget`` the default node budget of every enumeration in the block."""
    old = os.environ.get(BUDGET_ENV)
    os.environ[BUDGET_ENV] = str(budget)
    try:
        yield
    finally:
        if old is None:
            os.environ.pop(BUDGET_ENV, None)
        else:
            os.environ[BUDGET_ENV] = old


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def execute(config: ExperimentConfig) -> RunRecord:
    """Run the configured experiment in memory."""
    exp = EXPERIMENTS[config.experiment]
    rec = RunRecord(exp.name, config.model_dump(mode="json", exclude={"output_dir"}), config.hash())
    rec.started = _now()
    with budget_scope(config.budget):
        exp.run(config, rec, RngStream(config.seed, (exp.stream_id,)))
    rec.finished = _now()
    return rec


def output_paths(config: ExperimentConfig) -> dict[str, Path]:
    exp = EXPERIMENTS[config.experiment]
    out = Path(config.output_dir)
    paths = {"records": out / f"{exp.name}.records.jsonl", "timing": out / f"{exp.name}.timing.json"}
    paths.update({t: out / f"{exp.name}.{t}.csv" for t in exp.tables})
    return paths


def persist(config: ExperimentConfig, rec: RunRecord) -> dict[str, Path]:
    """Write the records file, one CSV per documented table and the timing sidecar."""
    paths = output_paths(config)
    paths["records"].parent.mkdir(parents=True, exist_ok=True)
    write_records(rec, paths["records"])
    for t in EXPERIMENTS[config.experiment].tables:
        emit_csv(rec, t, paths[t])
    paths["timing"].write_text(json.dumps({"started": rec.started, "finished": rec.finished}) + "\n")
    return paths


def run_experiment(config: ExperimentConfig) -> tuple[RunRecord, int]:
    """Execute, persist, and return the record with its exit status (0 pass, 1 fail)."""
    rec = execute(config)
    persist(config, rec)
    return rec, EXIT_OK if rec.passed else EXIT_FAIL
