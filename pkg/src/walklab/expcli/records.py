"""Run records: line-delimited JSON as the primary store, CSV tables derived from it.

The records file holds only values that a replay reproduces bit for bit.
Wall-clock times go to a separate timing file.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Any

import numpy as np

from .config import SCHEMA_VERSION

# documented column set of every table an experiment may emit
TABLE_COLUMNS: dict[str, tuple[str, ...]] = {
    "hitting": ("d", "h", "L", "p_hat", "stderr", "exact", "horizon", "residual_bound"),
    "green": ("d", "h", "M", "inverse_sum", "alpha", "tail", "abs_err"),
    "fixtures": ("name", "value", "expected", "abs_err"),
    "violations": ("check", "count"),
    "subadditivity": ("m", "n", "a_m", "a_n", "a_mn"),
    "renewal": ("p", "beta", "L", "residual", "slack", "matched", "matched_slack"),
    "pi": ("k", "pi", "partial_sum", "tail"),
    "mass-gap": ("L", "Bbar", "Lambdabar", "slack_B", "slack_Λ"),
    "ballistic": ("h_bar", "predicted", "pred_halfwidth", "fitted", "fit_halfwidth", "diff"),
    "second-moment": ("beta", "N", "ratio", "stderr"),
    "free-energy-gap": ("N", "mean_log_z", "log_mean_z", "gap", "gap_stderr", "coincidence", "envelope"),
    "concentration": ("t", "empirical", "bound", "slack"),
    "restricted": ("N", "k", "ratio"),
    "strip-chain": ("m", "p_sigma", "stderr"),
}


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def jsonable(v: Any) -> Any:
    """Plain JSON types; floats keep full precision through ``repr``."""
    if isinstance(v, dict):
        return {str(k): jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [jsonable(x) for x in v.tolist()]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float(v)
    return v


@dataclass
class Verdict:
    criterion: str
    passed: bool
    detail: dict = field(default_factory=dict)


@dataclass
class RunRecord:
    experiment: str
    config: dict
    config_hash: str
    tool_version: str = field(default_factory=tool_version)
    started: str = ""
    finished: str = ""
    estimates: list[dict] = field(default_factory=list)
    exact: dict[str, Any] = field(default_factory=dict)
    tables: dict[str, list[dict]] = field(default_factory=dict)
    verdicts: list[Verdict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def add_row(self, table: str, **row: Any) -> None:
        cols = TABLE_COLUMNS[table]
        if set(row) != set(cols):
            raise ValueError(f"table {table!r} needs columns {cols}, got {tuple(row)}")
        self.tables.setdefault(table, []).append({c: row[c] for c in cols})

    def verdict(self, criterion: str, passed: bool, **detail: Any) -> Verdict:
        v = Verdict(criterion, bool(passed), jsonable(detail))
        self.verdicts.append(v)
        return v

    def lines(self) -> list[dict]:
        head = {"schema_version": SCHEMA_VERSION, "kind": "run", "experiment": self.experiment,
                "config_hash": self.config_hash, "tool_version": self.tool_version, "config": self.config}
        out = [head]
        out += [{"schema_version": SCHEMA_VERSION, "kind": "estimate", **e} for e in self.estimates]
        out += [{"schema_version": SCHEMA_VERSION, "kind": "exact", "name": k, "value": v}
                for k, v in self.exact.items()]
        for name, rows in self.tables.items():
            out += [{"schema_version": SCHEMA_VERSION, "kind": "row", "table": name, "row": r} for r in rows]
        out += [{"schema_version": SCHEMA_VERSION, "kind": "verdict", "criterion": v.criterion,
                 "passed": v.passed, "detail": v.detail} for v in self.verdicts]
        return [jsonable(x) for x in out]


def write_records(record: RunRecord, path: Path) -> None:
    """Append one JSON object per line (the file is started fresh for each run)."""
    path.write_text("")
    with path.open("a", encoding="utf-8") as fh:
        for line in record.lines():
            fh.write(json.dumps(line, sort_keys=True, ensure_ascii=False) + "\n")


def read_records(path: Path) -> RunRecord:
    """Rebuild a record (without timing) from its line-delimited file."""
    rec: RunRecord | None = None
    for text in path.read_text(encoding="utf-8").splitlines():
        obj = json.loads(text)
        kind = obj["kind"]
        if kind == "run":
            rec = RunRecord(obj["experiment"], obj["config"], obj["config_hash"], obj["tool_version"])
        elif rec is None:
            raise ValueError("records file must start with a run line")
        elif kind == "estimate":
            rec.estimates.append({k: v for k, v in obj.items() if k not in ("kind", "schema_version")})
        elif kind == "exact":
            rec.exact[obj["name"]] = obj["value"]
        elif kind == "row":
            rec.tables.setdefault(obj["table"], []).append(obj["row"])
        elif kind == "verdict":
            rec.verdicts.append(Verdict(obj["criterion"], obj["passed"], obj["detail"]))
    if rec is None:
        raise ValueError("empty records file")
    return rec


def format_cell(v: Any) -> str:
    """12 significant digits for reals; integers and text as they are."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if not math.isfinite(v) else f"{v:.12g}"
    return str(v)


def emit_csv(record: RunRecord, table: str, path: Path) -> Path:
    """Write ``table`` with its documented columns; no rows gives a header-only file."""
    if table not in TABLE_COLUMNS:
        raise KeyError(f"no table named {table!r}")
    cols = TABLE_COLUMNS[table]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in record.tables.get(table, []):
            w.writerow([format_cell(row[c]) for c in cols])
    return path
