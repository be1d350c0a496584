from __future__ import annotations

import csv
import json

import pytest
import yaml
from click.testing import CliRunner

from walklab.expcli import build_config
from walklab.expcli.cli import main
from walklab.expcli.config import deep_merge
from walklab.expcli.records import TABLE_COLUMNS, RunRecord, emit_csv, format_cell, read_records

SMALL_RENEWAL = {
    "experiment": "renewal",
    "beta": [0.3],
    "sizes": {"p_grid": [1], "L_max": 2, "K": 3, "N_trunc": 30, "eps_trunc": 1e-8},
}


def _run(args, tmp_path, config=None):
    if config is not None:
        path = tmp_path / "cfg.yaml"
        path.write_text(yaml.safe_dump(config))
        args = ["--config", str(path), *args]
    return CliRunner().invoke(main, args, catch_exceptions=False)


def test_list():
    res = CliRunner().invoke(main, ["--list"])
    assert res.exit_code == 0
    assert "renewal" in res.output and "strip-chain" in res.output


def test_unknown_experiment_is_usage_error(tmp_path):
    out = tmp_path / "out"
    res = _run(["--experiment", "nope", "--out", str(out)], tmp_path)
    assert res.exit_code == 2
    assert not out.exists()


def test_unknown_config_key_is_usage_error(tmp_path):
    cfg = deep_merge(SMALL_RENEWAL, {"sizes": {"L_maximum": 3}})
    res = _run(["--out", str(tmp_path / "out")], tmp_path, cfg)
    assert res.exit_code == 2
    assert "L_maximum" in res.output
    assert not (tmp_path / "out").exists()


def test_missing_experiment_is_usage_error(tmp_path):
    assert _run([], tmp_path).exit_code == 2


def test_small_renewal_passes_and_replays(tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        res = _run(["--out", str(out)], tmp_path, SMALL_RENEWAL)
        assert res.exit_code == 0, res.output
        assert "criterion 6" in res.output and "PASS" in res.output
        outs.append(out)
    for f in ("renewal.records.jsonl", "renewal.renewal.csv", "renewal.pi.csv"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
    assert (outs[0] / "renewal.timing.json").exists()
    with open(outs[0] / "renewal.renewal.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["L"]) for r in rows] == [1, 2]
    for r in rows:
        assert float(r["residual"]) <= float(r["slack"])
        assert float(r["matched"]) <= float(r["matched_slack"])
    lines = [json.loads(x) for x in (outs[0] / "renewal.records.jsonl").read_text().splitlines()]
    assert {x["kind"] for x in lines} >= {"run", "verdict", "row"}
    assert all(x["schema_version"] == 1 for x in lines)
    back = read_records(outs[0] / "renewal.records.jsonl")
    assert back.passed
    assert [json.loads(json.dumps(x)) for x in back.lines()] == lines


def test_hash_covers_seed_not_output_dir():
    a = build_config("renewal", SMALL_RENEWAL)
    b = build_config("renewal", {**SMALL_RENEWAL, "seed": 1})
    c = build_config("renewal", {**SMALL_RENEWAL, "output_dir": "elsewhere"})
    assert a.hash() != b.hash()
    assert a.hash() == c.hash()


def test_tolerance_changes_hash():
    a = build_config("hitting-identity")
    b = build_config("hitting-identity", {"tolerances": {"abs_tol": 1e-3}})
    assert a.hash() != b.hash()


def test_impossible_tolerance_fails(tmp_path):
    cfg = {"experiment": "hitting-identity",
           "sizes": {"d_grid": [1], "h_grid": [0.5], "L_grid": [1]},
           "samples": {"n_walks": 1000},
           "tolerances": {"abs_tol": 1e-12, "n_sigma": 1e-9}}
    res = _run(["--out", str(tmp_path / "out")], tmp_path, cfg)
    assert res.exit_code == 1
    assert "FAIL" in res.output
    assert (tmp_path / "out" / "hitting-identity.records.jsonl").exists()


def test_small_budget_is_usage_error(tmp_path):
    res = _run(["--out", str(tmp_path / "out"), "--budget", "50"], tmp_path, SMALL_RENEWAL)
    assert res.exit_code == 2
    assert "budget" in res.output
    assert not (tmp_path / "out").exists()


def test_seed_option_and_config_file_combine(tmp_path):
    res = _run(["--seed", "5", "--out", str(tmp_path / "o"), "--experiment", "green-identity"], tmp_path)
    assert res.exit_code == 0
    run = json.loads((tmp_path / "o" / "green-identity.records.jsonl").read_text().splitlines()[0])
    assert run["config"]["seed"] == 5


def test_bad_yaml_is_usage_error(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("- just\n- a list\n")
    res = CliRunner().invoke(main, ["--config", str(path)])
    assert res.exit_code == 2


def test_emit_csv_header_only_for_empty_record(tmp_path):
    rec = RunRecord("mass-gap", {}, "0")
    emit_csv(rec, "mass-gap", tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text(encoding="utf-8").strip() == ",".join(TABLE_COLUMNS["mass-gap"])
    with pytest.raises(KeyError):
        emit_csv(rec, "no-such-table", tmp_path / "u.csv")


def test_emit_csv_rows_round_trip(tmp_path):
    rec = RunRecord("mass-gap", {}, "0")
    vals = [(1, 0.123456789012345, 0.1, 1e-9, 2e-10), (2, 1 / 3, 0.05, 1.5e-8, 3e-9)]
    for L, B, Lam, sB, sL in vals:
        rec.add_row("mass-gap", L=L, Bbar=B, Lambdabar=Lam, slack_B=sB, **{"slack_Λ": sL})
    emit_csv(rec, "mass-gap", tmp_path / "t.csv")
    with open(tmp_path / "t.csv", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["L"]) for r in rows] == [1, 2]
    assert float(rows[0]["Bbar"]) == pytest.approx(0.123456789012345, rel=1e-11)
    assert float(rows[1]["Bbar"]) == float(format_cell(1 / 3))
    assert format_cell(1 / 3) == "0.333333333333"
    with pytest.raises(ValueError):
        rec.add_row("mass-gap", L=3)
