"""Command-line front end: ``alh-compactify <subcommand> [flags]``.

Exit codes: 0 all checks passed, 1 some check failed, 2 configuration error,
3 solver or internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..errors import AlhError, ConfigError
from ..riccati import integrate_scalar_riccati
from ..window_norms import fit_decay_rate
from .config import ExperimentConfig, load_config, with_overrides
from .pipeline import run_experiment
from .plotting import plot_battery
from .report import emit_report, write_rows

PIPELINE_COMMANDS = {
    "eigenfunction": ("model", "eigenfunction"),
    "charts": ("model", "charts"),
    "compactify": ("model", "eigenfunction", "compactify", "holder"),
    "battery": ("model", "eigenfunction", "battery"),
    "run": None,
}


def _grid_arg(text: str) -> tuple:
    try:
        nw, nx = (int(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"--grid expects Nw,Nx, got {text!r}") from exc
    return nw, nx


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="seed for the property suites")
    common.add_argument("--format", choices=("csv", "json"), help="report format")
    common.add_argument("--grid", help="grid resolution Nw,Nx")
    common.add_argument("--order", type=float, help="ALH order a of the model")
    parser = argparse.ArgumentParser(prog="alh-compactify",
                                     description="Numerical conformal compactification of ALH metrics.")
    sub = parser.add_subparsers(dest="command", required=True)
    r = sub.add_parser("riccati", parents=[common], help="scalar Riccati decay certificate")
    r.add_argument("--J", type=float, default=0.3, help="amplitude in f = 1 + J e^{-as}")
    r.add_argument("--lam0", type=float, default=0.5, help="initial value")
    r.add_argument("--s-max", type=float, default=15.0)
    for name, help_ in (("eigenfunction", "solve for the radial eigenfunction"),
                        ("charts", "interior harmonic coordinates"),
                        ("compactify", "compactified metric and Hölder exponents"),
                        ("battery", "component decay battery"),
                        ("run", "full pipeline from the config")):
        sub.add_parser(name, parents=[common], help=help_)
    sub.add_parser("verify-lemmas", parents=[common], help="window, Gronwall and Codazzi suites")
    return parser


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    grid = _grid_arg(args.grid) if args.grid else None
    return with_overrides(cfg, grid=grid, order=args.order, seed=args.seed, out_dir=args.out,
                          fmt=args.format)


def _cmd_riccati(args) -> int:
    a = 0.5 if args.order is None else args.order
    out = Path(args.out or "out")
    s = np.linspace(0.0, args.s_max, int(round(args.s_max / 0.05)) + 1)
    J = args.J
    curve = integrate_scalar_riccati(lambda x: 1.0 + J * np.exp(-a * x), args.lam0, s)
    write_rows(out / "riccati.csv", ("s", "lambda"), curve.rows())
    keep = (s >= 5.0 - 1e-12) & (s <= 15.0 + 1e-12)
    fit = fit_decay_rate(s[keep], np.abs(curve.lam[keep] - 1.0))
    passed = fit.sentinel or fit.rate >= a - 0.05
    summary = {"a": a, "J": J, "lam0": args.lam0, "rate": fit.rate, "pass": passed}
    print(json.dumps(summary, sort_keys=True))
    return 0 if passed else 1


def _write_artifacts(command: str, report, out: Path) -> None:
    art = report.artifacts
    if command == "eigenfunction" and "eigenfunction" in art:
        eig = art["eigenfunction"]
        n = eig.grid.n
        cols = ("w",) + tuple(f"x{i + 1}" for i in range(n)) + ("t", "t1")
        write_rows(out / "eigenfunction.csv", cols, eig.rows())
    if command == "charts" and "charts" in art:
        ext = art["charts"]["interior"]
        grid = ext[0].phi.grid
        pts = grid.points()
        cols = ("w",) + tuple(f"x{i + 1}" for i in range(grid.n)) + tuple(
            f"y{m + 1}" for m in range(len(ext))) + tuple(f"dw_dy{m + 1}" for m in range(len(ext)))
        vals = [e.phi.values.ravel() for e in ext] + [e.pairing.ravel() for e in ext]
        rows = [tuple(p) + tuple(float(v[i]) for v in vals) for i, p in enumerate(pts.tolist())]
        write_rows(out / "charts.csv", cols, rows)
        chart = art["charts"]["boundary"]
        zc = tuple(f"z{i + 1}" for i in range(chart.n))
        write_rows(out / "boundary_chart.csv", zc + tuple(f"u{i + 1}" for i in range(chart.n)),
                   chart.rows())
    if command in ("compactify", "run") and "compactify" in art:
        cm = art["compactify"]
        d = cm.n + 1
        mesh = np.meshgrid(cm.rho, *([cm.y] * cm.n), indexing="ij")
        cols = ("rho",) + tuple(f"y{i + 1}" for i in range(cm.n)) + tuple(
            f"g{i}{j}" for i in range(d) for j in range(i, d))
        comps = [cm.components[..., i, j].ravel() for i in range(d) for j in range(i, d)]
        coords = [m.ravel() for m in mesh]
        rows = [tuple(float(c[k]) for c in coords + comps) for k in range(coords[0].size)]
        write_rows(out / "gbar.csv", cols, rows)
    if "holder" in art:
        h = art["holder"]
        (out / "holder.json").write_text(json.dumps(
            {"metric": h["metric"].as_dict(), "christoffel": h["christoffel"].as_dict()},
            indent=2, sort_keys=True) + "\n")


def _cmd_pipeline(args) -> int:
    cfg = _config(args)
    stages = PIPELINE_COMMANDS[args.command]
    if stages is not None:
        cfg = replace(cfg, stages=stages, coordinates="fermi")
    report = run_experiment(cfg)
    out = Path(cfg.out_dir)
    emit_report(report, out, cfg.fmt)
    _write_artifacts(args.command, report, out)
    if cfg.plot:
        plot_battery(report, out / "battery.png")
    for st in report.stages:
        print(f"{st.name:14s} {st.status:8s} {st.message}")
    failed = [c for c in report.checks if not c.passed]
    for c in failed:
        print(f"FAIL {c.check_id}: {c.value} (want {c.threshold})")
    return report.exit_code()


def _cmd_lemmas(args) -> int:
    from ..lemma_suites import codazzi_suite, gronwall_suite, window_suite

    seed = args.seed or 0
    out = Path(args.out or "out")
    suites = [window_suite(seed, 100, 1), window_suite(seed, 100, 2), gronwall_suite(seed, 50),
              codazzi_suite(seed)]
    rows = [(s.name, s.cases, len(s.failures), "pass" if s.passed else "fail") for s in suites]
    write_rows(out / "lemmas.csv", ("suite", "cases", "failures", "status"), rows)
    for s in suites:
        print(s.summary())
    return 0 if all(s.passed for s in suites) else 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "riccati":
            return _cmd_riccati(args)
        if args.command == "verify-lemmas":
            return _cmd_lemmas(args)
        return _cmd_pipeline(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except AlhError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
