"""Stage orchestration: model -> t -> charts -> compactify -> Hölder -> battery."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..conformal_factor import (RadialEigenfunction, solve_radial_eigenfunction,
                                t1_decay_fit, traceless_hessian_T)
from ..errors import AlhError
from ..harmonic_charts import extend_harmonic_interior, flat_metric, zoom_lambda_search
from ..metric_zoo import make_model, verify_alh_order
from ..regularity import (change_of_variable_gap, christoffel_holder, compactify,
                          component_order_battery, metric_holder)
from ..window_norms import stations_for
from .config import DEPENDENCIES, ExperimentConfig

SCHEMA = "alh-compactify report v1"


@dataclass
class Check:
    check_id: str
    stage: str
    value: Optional[float]
    threshold: str
    passed: bool

    def __post_init__(self):
        self.value = None if self.value is None else float(self.value)
        self.passed = bool(self.passed)

    def as_dict(self) -> dict:
        return {"check_id": self.check_id, "stage": self.stage, "value": self.value,
                "threshold": self.threshold, "pass": self.passed}


@dataclass
class StageStatus:
    name: str
    status: str
    message: str = ""

    def as_dict(self) -> dict:
        return {"stage": self.name, "status": self.status, "message": self.message}


@dataclass
class ExperimentReport:
    config: dict
    stages: list = field(default_factory=list)
    battery: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)

    @property
    def failed_stages(self) -> list:
        return [s.name for s in self.stages if s.status == "failed"]

    @property
    def all_passed(self) -> bool:
        return not self.failed_stages and all(c.passed for c in self.checks)

    def exit_code(self) -> int:
        if self.errors:
            return max(getattr(e, "exit_code", 3) for e in self.errors.values())
        return 0 if self.all_passed else 1

    def to_dict(self) -> dict:
        """Deterministic content; wall-clock timings are kept out on purpose."""
        return {
            "schema": SCHEMA,
            "config": self.config,
            "stages": [s.as_dict() for s in self.stages],
            "battery": [battery_row_dict(r) for r in self.battery],
            "checks": [c.as_dict() for c in self.checks],
        }


def battery_row_dict(row) -> dict:
    fields = row.csv_fields()
    return dict(zip(("estimate_id", "paper_ref", "predicted_rate", "measured_rate", "margin", "pass"),
                    fields))


def _fnum(v) -> Optional[float]:
    return None if v is None else float(v)


# --------------------------------------------------------------------------
# stages; each receives only the artifacts of its declared dependencies

def _stage_model(cfg: ExperimentConfig, deps: dict, checks: list):
    grid = cfg.grid.build(cfg.model.n)
    metric = make_model(grid, cfg.model)
    if cfg.model.kind != "hyperbolic":
        fit = verify_alh_order(metric)
        rate = None if fit.sentinel else fit.rate
        checks.append(Check("alh_order", "model", _fnum(rate), f">= {cfg.model.a - 0.1:.2f}",
                            fit.sentinel or fit.rate >= cfg.model.a - 0.1))
    return metric


def _stage_eigenfunction(cfg: ExperimentConfig, deps: dict, checks: list):
    metric = deps["model"]
    s = cfg.solver
    a = None if cfg.model.kind == "hyperbolic" else cfg.model.a
    eig = solve_radial_eigenfunction(metric, a, buffer=s.buffer, sweep=s.sweep, tol=s.tol,
                                     method=s.method)
    th = traceless_hessian_T(metric, eig, tol=s.tol)
    checks.append(Check("solver_residual", "eigenfunction", eig.residual, f"<= {s.tol:g}",
                        eig.residual <= s.tol))
    checks.append(Check("trace_T", "eigenfunction", th.trace_defect, f"<= {10 * s.tol:g}",
                        th.trace_defect <= 10 * s.tol))
    grid = metric.grid
    mask = eig.report_mask
    if a is None:
        ew = np.exp(np.broadcast_to(grid.w_column(), grid.shape))
        dev = float(np.max(np.abs(eig.t.values - ew)[mask]))
        checks.append(Check("t_exact", "eigenfunction", dev, "<= 1e-8", dev <= 1e-8))
        tn = float(np.max(th.norm[mask]))
        checks.append(Check("T_zero", "eigenfunction", tn, "<= 1e-6", tn <= 1e-6))
    else:
        st = _stations(cfg, grid)
        fit = t1_decay_fit(eig, st)
        rate = None if fit.sentinel else fit.rate
        # t1 ~ e^{(1-a) w}: decay rate a - 1, accepted within 0.05
        checks.append(Check("t1_rate", "eigenfunction", _fnum(rate), f">= {a - 1 - 0.05:.2f}",
                            fit.sentinel or fit.rate >= a - 1 - 0.05))
    return eig


def _stations(cfg: ExperimentConfig, grid):
    ns = cfg.norms
    return stations_for(grid, start=ns.station_start, step=ns.station_step,
                        top_buffer=ns.station_top_buffer)


def _stage_charts(cfg: ExperimentConfig, deps: dict, checks: list):
    metric = deps["model"]
    n = metric.n
    # zoo models have a flat boundary metric; the chart search settles at lam = 1 with y = x
    chart = zoom_lambda_search(flat_metric(n), (0.0,) * n)
    out = []
    for mu in range(n):
        ext = extend_harmonic_interior(metric, lambda X, mu=mu: X[mu], tol=cfg.solver.tol,
                                       method=cfg.solver.method, stations=_stations(cfg, metric.grid))
        out.append(ext)
        if cfg.model.kind != "hyperbolic":
            fit = ext.fits.get("pairing")
            want = 1.0 + cfg.model.a - 0.1
            ok = fit is not None and (fit.sentinel or fit.rate >= want)
            checks.append(Check(f"neumann_rate_y{mu + 1}", "charts",
                                None if fit is None or fit.sentinel else fit.rate,
                                f">= {want:.2f}", ok))
    return {"boundary": chart, "interior": out}


def _stage_compactify(cfg: ExperimentConfig, deps: dict, checks: list):
    charts = None
    if cfg.coordinates == "harmonic":
        charts = [e.phi for e in deps["charts"]["interior"]]
    cm = compactify(deps["model"], deps["eigenfunction"], charts, buffer=cfg.solver.buffer)
    if cfg.model.kind == "hyperbolic":
        dev = cm.flat_deviation()
        checks.append(Check("gbar_flat", "compactify", dev, "<= 1e-8", dev <= 1e-8))
    return cm


def _stage_holder(cfg: ExperimentConfig, deps: dict, checks: list):
    cm = deps["compactify"]
    hg = metric_holder(cm)
    hc = christoffel_holder(cm)
    if cfg.model.kind != "hyperbolic":
        a = cfg.model.a
        if a < 1:
            ok = abs(hg.exponent - a) <= 0.05 and not hg.saturated
            checks.append(Check("holder_gbar", "holder", hg.exponent,
                                f"in [{a - 0.05:.2f}, {a + 0.05:.2f}], unsaturated", ok))
        else:
            checks.append(Check("holder_gbar_saturated", "holder", hg.raw_slope,
                                f">= cap {hg.cap:.3f}", hg.saturated))
            want = a - 1.0 - 0.1
            checks.append(Check("holder_christoffel", "holder", hc.exponent,
                                f">= {want:.2f}, unsaturated", hc.exponent >= want and not hc.saturated))
    return {"metric": hg, "christoffel": hc}


def _stage_battery(cfg: ExperimentConfig, deps: dict, checks: list):
    charts = None
    if cfg.coordinates == "harmonic":
        charts = [e.phi for e in deps["charts"]["interior"]]
    a = 1.0 if cfg.model.kind == "hyperbolic" else cfg.model.a
    p = cfg.norms.p or None
    rows = component_order_battery(deps["model"], deps["eigenfunction"], charts, a=a,
                                   stations=_stations(cfg, deps["model"].grid), p=p)
    for r in rows:
        checks.append(Check(f"battery:{r.estimate_id}", "battery", _fnum(r.margin), ">= -0.1",
                            r.passed))
    gap = change_of_variable_gap(rows)
    if gap is not None:
        checks.append(Check("drho_identity", "battery", gap, "<= 0.02", gap <= 0.02))
    return rows


STAGE_FUNCS: dict = {
    "model": _stage_model,
    "eigenfunction": _stage_eigenfunction,
    "charts": _stage_charts,
    "compactify": _stage_compactify,
    "holder": _stage_holder,
    "battery": _stage_battery,
}


def stage_dependencies(cfg: ExperimentConfig, stage: str) -> tuple:
    deps = DEPENDENCIES[stage]
    if cfg.coordinates == "harmonic" and stage in ("compactify", "battery"):
        deps = deps + ("charts",)
    return deps


def run_experiment(cfg: ExperimentConfig, clock: Callable[[], float] = time.perf_counter) -> ExperimentReport:
    """Run the configured stages in dependency order.

    A failing stage is recorded with its error; stages depending on it are
    marked skipped and the remaining ones still run.
    """
    report = ExperimentReport(config=cfg.as_dict())
    done: dict = {}
    for name in cfg.stages:
        deps = stage_dependencies(cfg, name)
        missing = [d for d in deps if d not in done]
        if missing:
            report.stages.append(StageStatus(name, "skipped", f"missing {', '.join(missing)}"))
            continue
        start = clock()
        try:
            out = STAGE_FUNCS[name](cfg, {d: done[d] for d in deps}, report.checks)
        except AlhError as exc:
            report.timings[name] = clock() - start
            report.errors[name] = exc
            report.stages.append(StageStatus(name, "failed", f"{type(exc).__name__}: {exc}"))
            continue
        report.timings[name] = clock() - start
        done[name] = out
        report.stages.append(StageStatus(name, "ok"))
        if name == "battery":
            report.battery = list(out)
    report.artifacts = done
    return report


def eigenfunction_of(report: ExperimentReport) -> Optional[RadialEigenfunction]:
    return report.artifacts.get("eigenfunction")
