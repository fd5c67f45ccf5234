import csv
import json
from dataclasses import replace
from pathlib import Path

import pytest

from alh_compactify.errors import ConfigError
from alh_compactify.harness.cli import main
from alh_compactify.harness.config import (DEFAULT_STAGES, ExperimentConfig, GridSpec, load_config,
                                           parse_config, with_overrides)
from alh_compactify.harness.pipeline import STAGE_FUNCS, ExperimentReport, run_experiment
from alh_compactify.harness.report import (BATTERY_COLUMNS, HEADER, emit_report, load_report_json,
                                           report_json)
from alh_compactify.metric_zoo import ModelSpec

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
GOLDEN = Path(__file__).parent / "golden" / "battery_ids.csv"


def read_csv(path):
    lines = Path(path).read_text().splitlines()
    assert lines[0] == HEADER
    return list(csv.DictReader(lines[1:]))


@pytest.fixture(scope="module")
def reports():
    return {name: run_experiment(load_config(CONFIGS / f"{name}.ini"))
            for name in ("hyperbolic", "order05", "order15")}


# --------------------------------------------------------------------------
# configuration

def test_parse_defaults():
    cfg = parse_config("")
    assert cfg == ExperimentConfig()
    assert cfg.stages == DEFAULT_STAGES


def test_parse_full():
    cfg = parse_config("""
[model]
kind = warped
n = 2
a = 1.5 ; order
[grid]
Nw = 161
Nx = 17
[pipeline]
stages = battery, eigenfunction, model
[norms]
p = 6
[solver]
method = gmres
sweep = yes
[output]
format = json
[run]
seed = 7
""")
    assert cfg.model == ModelSpec(kind="warped", n=2, a=1.5)
    assert cfg.grid == GridSpec(Nw=161, Nx=17)
    assert cfg.stages == ("model", "eigenfunction", "battery")
    assert cfg.norms.p == 6.0
    assert cfg.solver.method == "gmres" and cfg.solver.sweep
    assert cfg.fmt == "json" and cfg.seed == 7


@pytest.mark.parametrize("text", [
    "[model]\nn = two\n",
    "[nonsense]\nx = 1\n",
    "[pipeline]\nstages = model, warp\n",
    "[pipeline]\nstages = battery\n",
    "[pipeline]\nstages = model, eigenfunction, compactify\ncoordinates = harmonic\n",
    "[model]\nn = 2\n[pipeline]\nstages = model, charts, eigenfunction, compactify\n"
    "coordinates = harmonic\n",
    "[output]\nformat = xml\n",
    "[solver]\nmethod = magic\n",
    "[norms]\nq = -1\n",
    "[grid]\nNw = 1\n",
    "no section header\n",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini")


def test_overrides():
    cfg = with_overrides(ExperimentConfig(), grid=(201, 17), order=1.5, seed=3, out_dir="x",
                         fmt="json")
    assert (cfg.grid.Nw, cfg.grid.Nx, cfg.model.a, cfg.seed, cfg.out_dir, cfg.fmt) == \
        (201, 17, 1.5, 3, "x", "json")


def test_shipped_configs_parse():
    for path in CONFIGS.glob("*.ini"):
        load_config(path)


# --------------------------------------------------------------------------
# orchestration

def test_hyperbolic_end_to_end(reports):
    rep = reports["hyperbolic"]
    assert rep.exit_code() == 0
    checks = {c.check_id: c for c in rep.checks}
    assert checks["gbar_flat"].passed and checks["gbar_flat"].value <= 1e-8
    assert checks["t_exact"].passed and checks["T_zero"].passed
    assert all(r.fit.sentinel and r.passed for r in rep.battery)


def test_order05_end_to_end(reports):
    rep = reports["order05"]
    assert rep.exit_code() == 0
    h = rep.artifacts["holder"]["metric"]
    assert 0.45 <= h.exponent <= 0.55 and not h.saturated


def test_order15_end_to_end(reports):
    rep = reports["order15"]
    assert rep.exit_code() == 0
    assert rep.artifacts["holder"]["metric"].saturated
    mu = rep.artifacts["holder"]["christoffel"]
    assert mu.exponent >= 0.4 and not mu.saturated


def test_partial_failure_reports_cause():
    # a box of height 9 is too low for order 0.5; charts does not depend on t and still runs
    cfg = parse_config("[model]\na = 0.5\n[grid]\nw_max = 9\nNw = 181\n"
                       "[pipeline]\nstages = model, eigenfunction, charts, compactify, holder\n")
    rep = run_experiment(cfg)
    status = {s.name: s.status for s in rep.stages}
    assert status == {"model": "ok", "eigenfunction": "failed", "charts": "ok",
                      "compactify": "skipped", "holder": "skipped"}
    assert "PreconditionError" in rep.stages[1].message
    assert rep.exit_code() == 3


def test_stage_sees_only_declared_dependencies(monkeypatch):
    seen = {}

    def spy(cfg, deps, checks):
        seen["keys"] = set(deps)
        return []

    monkeypatch.setitem(STAGE_FUNCS, "battery", spy)
    cfg = parse_config("[model]\nkind = hyperbolic\n[grid]\nw_max = 10\nNw = 201\n"
                       "[pipeline]\nstages = model, eigenfunction, charts, battery\n")
    run_experiment(cfg)
    assert seen["keys"] == {"model", "eigenfunction"}


def test_timings_use_injected_clock():
    ticks = iter(range(100))
    cfg = replace(ExperimentConfig(), stages=())
    rep = run_experiment(cfg, clock=lambda: next(ticks))
    assert rep.timings == {} and rep.exit_code() == 0


# --------------------------------------------------------------------------
# reports

def test_empty_pipeline_header_only_csv(tmp_path):
    rep = ExperimentReport(config=ExperimentConfig().as_dict())
    emit_report(rep, tmp_path, "csv")
    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert lines == [HEADER, ",".join(BATTERY_COLUMNS)]


def test_battery_ids_match_golden(reports, tmp_path):
    golden = list(csv.DictReader(GOLDEN.read_text().splitlines()))
    for rep in reports.values():
        emit_report(rep, tmp_path, "csv")
        rows = read_csv(tmp_path / "report.csv")
        assert [(r["estimate_id"], r["paper_ref"]) for r in rows] == \
            [(g["estimate_id"], g["paper_ref"]) for g in golden]


def test_json_round_trip(reports, tmp_path):
    rep = reports["order05"]
    emit_report(rep, tmp_path, "json")
    assert load_report_json(tmp_path / "report.json") == json.loads(json.dumps(rep.to_dict()))
    assert load_report_json(tmp_path / "report.json")["schema"] == "alh-compactify report v1"


def test_reports_are_byte_identical(tmp_path):
    cfg = load_config(CONFIGS / "hyperbolic.ini")
    a, b = run_experiment(cfg), run_experiment(cfg)
    assert report_json(a) == report_json(b)
    emit_report(a, tmp_path / "a")
    emit_report(b, tmp_path / "b")
    for name in ("report.csv", "checks.csv", "stages.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


# --------------------------------------------------------------------------
# command line

def test_cli_run_ok(tmp_path, capsys):
    assert main(["run", "--config", str(CONFIGS / "hyperbolic.ini"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "report.csv").exists() and (tmp_path / "gbar.csv").exists()
    assert json.loads((tmp_path / "holder.json").read_text())["metric"]["saturated"]


def test_cli_acceptance_failure(tmp_path):
    # the n = 1 harmonic chart configuration misses the Neumann decay check
    assert main(["run", "--config", str(CONFIGS / "harmonic_n1.ini"), "--out", str(tmp_path)]) == 1
    rows = read_csv(tmp_path / "checks.csv")
    assert any(r["check_id"].startswith("neumann_rate") and r["pass"] == "fail" for r in rows)


def test_cli_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[model]\nkind = spherical\n")
    assert main(["run", "--config", str(bad)]) == 2
    assert "configuration error" in capsys.readouterr().err
    assert main(["run", "--grid", "401"]) == 2


def test_cli_solver_error(tmp_path):
    cfg = tmp_path / "short.ini"
    cfg.write_text("[model]\na = 0.5\n[grid]\nw_max = 9\nNw = 181\n")
    assert main(["eigenfunction", "--config", str(cfg), "--out", str(tmp_path)]) == 3


def test_cli_eigenfunction_export(tmp_path):
    assert main(["eigenfunction", "--config", str(CONFIGS / "hyperbolic.ini"),
                 "--out", str(tmp_path), "--format", "json"]) == 0
    rows = read_csv(tmp_path / "eigenfunction.csv")
    assert set(rows[0]) == {"w", "x1", "t", "t1"}
    assert (tmp_path / "report.json").exists()


def test_cli_charts_export(tmp_path):
    assert main(["charts", "--config", str(CONFIGS / "hyperbolic.ini"), "--out", str(tmp_path)]) == 0
    assert set(read_csv(tmp_path / "charts.csv")[0]) == {"w", "x1", "y1", "dw_dy1"}
    assert (tmp_path / "boundary_chart.csv").exists()


def test_cli_battery_with_overrides(tmp_path):
    code = main(["battery", "--config", str(CONFIGS / "order05.ini"), "--order", "1.5",
                 "--grid", "401,33", "--out", str(tmp_path)])
    assert code == 0
    rows = read_csv(tmp_path / "report.csv")
    assert len(rows) == len(list(csv.DictReader(GOLDEN.open())))
    assert {r["estimate_id"]: r for r in rows}["hess_y_tang"]["predicted_rate"] == "2.000000"


def test_cli_riccati(tmp_path, capsys):
    assert main(["riccati", "--order", "1.0", "--J", "0.8", "--lam0", "2.0", "--out", str(tmp_path)]) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["pass"] and summary["rate"] >= 0.95
    assert read_csv(tmp_path / "riccati.csv")[0]["s"] == "0.0"


def test_cli_verify_lemmas(tmp_path, capsys):
    assert main(["verify-lemmas", "--seed", "0", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "lemmas.csv")
    assert [r["suite"] for r in rows] == ["moving_window1", "moving_window2", "gronwall", "codazzi"]
    assert all(r["failures"] == "0" for r in rows)
