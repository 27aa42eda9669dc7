"""Scenario driver: computes spectra, runs the enabled checks, writes artifacts."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import flow as fl
from .matfun import NotPositiveDefiniteError
from .models import build_dirac, exact_circle_spectrum, kernel_dim, random_scalar_family
from .report import CheckResult, Report
from .scenario import (ChecksSpec, FlowSpec, GeometrySpec, OutputSpec, Scenario,
                       WeightSpec)

log = logging.getLogger(__name__)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_spectrum_csv(path, spectra) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["t", "logical_index", "lambda", "arsinh_lambda"])
        for spec in spectra:
            for j, lam, alam in spec.window.rows():
                out.writerow([_fmt(spec.t), j, _fmt(lam), _fmt(alam)])


def write_branches_csv(path, tracking) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["t", "branch_id", "lambda", "residual"])
        for k, t in enumerate(tracking.t_grid):
            for col in tracking.focus_branches():
                out.writerow([_fmt(t), int(tracking.branch_ids[col]),
                              _fmt(tracking.values[k, col]), _fmt(tracking.residuals[k, col])])


def _timed(name, func, *args, **kwargs) -> CheckResult:
    start = time.perf_counter()
    try:
        result = func(*args, **kwargs)
    except (ValueError, ArithmeticError, NotPositiveDefiniteError) as exc:
        result = CheckResult(name, False, None, {"error": f"{type(exc).__name__}: {exc}"})
    result.name = name
    result.runtime = time.perf_counter() - start
    return result


def oracle_spectrum_check(flow: fl.FlowRecord, tol: float) -> CheckResult:
    geom = flow.geometry
    lo, hi = flow.common_interior()
    theta1, theta2 = geom.points()
    worst, where = 0.0, None
    for spec in flow.spectra:
        f = flow.family.matrix(theta1, theta2, spec.t)[:, 0, 0].real
        exact = exact_circle_spectrum(f, geom.spin_offset[0], (lo, hi))
        got = spec.window.take(lo, hi)
        scale = np.where(exact == 0, 1.0, np.abs(exact))
        err = np.abs(got - exact) / scale
        k = int(np.argmax(err))
        if err[k] >= worst:
            worst, where = float(err[k]), (spec.t, lo + k)
    return CheckResult("oracle_spectrum", worst <= tol, tol - worst,
                       dict(max_relative_error=worst, attained_at=where, index_range=(lo, hi)))


def hellmann_feynman_check(flow: fl.FlowRecord, tol: float) -> CheckResult:
    k = len(flow.t_grid) // 2
    spec = flow.spectra[k]
    lo, hi = flow.common_interior()
    candidates = sorted({0, lo // 2, hi // 2} & set(range(lo, hi + 1)))
    ctol = 1e-7 * spec.norm
    results, skipped = [], []
    for j in candidates:
        c = spec.column(j)
        if fl.cluster_columns(spec.eigenvalues, c, ctol).size > 1:
            skipped.append(j)
            continue
        results.append(fl.hf_fd_check(flow.geometry, flow.family, spec.t, 1e-4, j, tol))
    if not results:
        return CheckResult("hellmann_feynman", True, None,
                           dict(note="every candidate index is clustered", skipped=skipped))
    worst = min(r.margin for r in results)
    return CheckResult("hellmann_feynman", all(r.passed for r in results), worst,
                       dict(t=spec.t, checks=[r.details for r in results], skipped=skipped))


def projector_check(flow: fl.FlowRecord, tol: float, j: int = 0) -> CheckResult:
    k = len(flow.t_grid) // 2
    spec = flow.spectra[k]
    c = spec.column(j)
    cols = fl.cluster_columns(spec.eigenvalues, c, 1e-7 * spec.norm)
    contour = fl.contour_around(spec.eigenvalues, cols)
    P = fl.riesz_projector(spec.operator.conjugated, *contour)
    deriv = fl.projector_derivative(flow.geometry, flow.family, spec.t, contour)
    dt = float(np.min(np.diff(flow.t_grid)))
    ts = np.clip(np.linspace(spec.t - dt, spec.t + dt, 11), *flow.family.interval)
    path = fl.projector_path(flow.geometry, flow.family, ts, contour)
    ranks = sorted({p.rank for p in path})
    algebra = max(P.idempotency_defect, P.hermitian_defect, P.trace_defect)
    ok = (P.idempotency_defect <= 1e-8 and P.hermitian_defect <= 1e-10
          and P.trace_defect <= 1e-8 and deriv.fd_error <= tol and len(ranks) == 1)
    return CheckResult("projector", ok, tol - deriv.fd_error,
                       dict(t=spec.t, index=j, contour=contour, rank=P.rank,
                            algebra_defect=algebra, derivative_fd_error=deriv.fd_error,
                            derivative_trace=abs(deriv.trace), path_ranks=ranks,
                            resolvent_sup=P.resolvent_sup))


def crossings_check(tracking: fl.BranchTracking, expect: int | None) -> CheckResult:
    events = tracking.crossings
    jumps = [e.branch_slope_jump for e in events]
    ok = expect is None or len(events) == expect
    ok = ok and not any(j > 1e-3 for j in jumps)
    return CheckResult("crossings", ok, None, dict(
        count=len(events), expected=expect, ambiguous_matches=len(tracking.ambiguous),
        events=[dict(branches=e.branches, t=e.t_estimate, interval=e.t_interval,
                     sorted_indices=e.sorted_indices, kink=e.kink, kink_arsinh=e.kink_arsinh,
                     branch_slope_jump=e.branch_slope_jump) for e in events]))


def weyl_check(flow: fl.FlowRecord, tol: float) -> CheckResult:
    spec = flow.spectra[0]
    lo, hi = flow.common_interior()
    edge = min(abs(spec.window(lo)), abs(spec.window(hi)))
    cutoffs = np.linspace(0.1 * edge, 0.9 * edge, 25)
    slope = fl.counting_slope(spec.window.values, cutoffs)
    theta1, theta2 = flow.geometry.points()
    f = flow.family.matrix(theta1, theta2, spec.t)[:, 0, 0].real
    expected = 2 * np.pi * f.mean() / np.pi
    rel = abs(slope - expected) / expected
    return CheckResult("weyl", rel <= tol, tol - rel,
                       dict(slope=slope, expected=expected, relative_error=rel, t=spec.t))


def random_weights_check(scenario: Scenario, geom, count: int) -> CheckResult:
    rng = np.random.default_rng(scenario.seed)
    reference = kernel_dim(build_dirac(geom))
    dims, worst = [], 0.0
    for _ in range(count):
        family = random_scalar_family(rng, interval=(scenario.flow.t_min, scenario.flow.t_max))
        t = float(rng.uniform(scenario.flow.t_min, scenario.flow.t_max))
        spec = fl.solve_weighted_spectrum(geom, family, t)
        dims.append(spec.window.zero_count)
        L = fl.lipschitz_constant(geom, family, (t, t), 2)
        slopes = fl.hf_slopes(spec)
        bound = L * np.abs(spec.eigenvalues)
        worst = max(worst, float(np.max(np.abs(slopes) - bound)))
    ok = all(d == reference for d in dims) and worst <= 1e-12
    return CheckResult("random_weights", ok, None,
                       dict(seed=scenario.seed, count=count, unweighted_kernel=reference,
                            kernels=sorted(set(dims)), worst_slope_excess=worst))


def applicable_checks(scenario: Scenario, mode: str) -> list[str]:
    if scenario.checks.enabled is not None:
        return list(scenario.checks.enabled)
    scalar_circle = scenario.geometry.kind == "circle_scalar"
    if mode == "spectrum":
        names = ["kernel_constancy"] + (["oracle_spectrum"] if scalar_circle else [])
    elif mode == "flow":
        names = ["enumeration_stability", "crossings"]
    else:
        names = ["hellmann_feynman", "slope_bound", "arsinh_lipschitz", "kernel_constancy",
                 "enumeration_stability", "projector", "crossings"]
        if scalar_circle:
            names[:0] = ["oracle_spectrum"]
            names.append("weyl")
        if scenario.checks.random_weights > 0 and geom_is_circle(scenario):
            names.append("random_weights")
    return names


def geom_is_circle(scenario: Scenario) -> bool:
    return scenario.geometry.kind.startswith("circle")


def run(scenario: Scenario, mode: str = "verify", out_dir=None, svg: bool | None = None,
        t: float | None = None, workers: int | None = None) -> Report:
    """Execute ``scenario`` and write spectrum.csv, branches.csv, report.json, flow.svg."""
    start = time.perf_counter()
    geom = scenario.build_geometry()
    family = scenario.build_family()
    checks: ChecksSpec = scenario.checks
    formats = set(scenario.output.formats)
    if svg:
        formats.add("svg")
    out = Path(out_dir or scenario.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    report = Report(scenario.name)
    names = applicable_checks(scenario, mode)

    if mode == "spectrum":
        t = scenario.flow.t_min if t is None else float(t)
        spec = fl.solve_weighted_spectrum(geom, family, t)
        flow = fl.FlowRecord(geom, family, np.array([t]), [spec],
                             fl.lipschitz_constant(geom, family, (t, t), 2))
    else:
        ts = np.linspace(scenario.flow.t_min, scenario.flow.t_max, scenario.flow.samples)
        flow = fl.compute_flow(geom, family, ts, workers=workers)
    log.info("computed %d spectra of dimension %d", len(flow.spectra), geom.dim)

    tracking = None
    if mode != "spectrum" and ("crossings" in names or "csv" in formats or "svg" in formats):
        focus = tuple(checks.focus) if checks.focus else None
        tracking = fl.track_branches(flow, focus=focus)
        flow.branches = tracking

    for name in names:
        tol = checks.tolerance(name)
        if name == "oracle_spectrum":
            res = _timed(name, oracle_spectrum_check, flow, tol)
        elif name == "hellmann_feynman":
            res = _timed(name, hellmann_feynman_check, flow, tol)
        elif name == "slope_bound":
            res = _timed(name, fl.slope_bound_check, flow)
        elif name == "arsinh_lipschitz":
            res = _timed(name, fl.verify_arsinh_lipschitz, flow, tol)
        elif name == "kernel_constancy":
            res = _timed(name, fl.kernel_constancy_check, flow)
        elif name == "enumeration_stability":
            res = _timed(name, fl.enumeration_stability_check, flow)
        elif name == "projector":
            res = _timed(name, projector_check, flow, tol)
        elif name == "crossings":
            if tracking is None:
                tracking = fl.track_branches(flow, focus=tuple(checks.focus) if checks.focus else None)
            res = _timed(name, crossings_check, tracking, checks.expect_crossings)
        elif name == "weyl":
            res = _timed(name, weyl_check, flow, tol)
        elif name == "random_weights":
            res = _timed(name, random_weights_check, scenario, geom, checks.random_weights)
        else:
            raise ValueError(f"unknown check {name!r}")
        flow.verdicts[name] = res
        report.add(res)
        log.info(res.line())

    if "csv" in formats:
        write_spectrum_csv(out / "spectrum.csv", flow.spectra)
        if tracking is not None:
            write_branches_csv(out / "branches.csv", tracking)
    if "svg" in formats and tracking is not None:
        from .plotting import flow_figure, save_figure
        save_figure(flow_figure(flow, tracking), out / "flow.svg")
    report.runtime = time.perf_counter() - start
    if "json" in formats:
        (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n",
                                         encoding="utf-8")
    return report


def crossing_demo_scenario(grid_size: int = 64, samples: int = 21) -> Scenario:
    """Block-diagonal weight diag(1, 1 + t) on t in [1.5, 2.5]; one crossing at t = 2."""
    return Scenario(
        name="demo-crossing",
        geometry=GeometrySpec("circle_system", grid_size, [0.5], 2),
        weight=WeightSpec(named="crossing"),
        flow=FlowSpec(1.5, 2.5, samples),
        checks=ChecksSpec(
            enabled=["hellmann_feynman", "slope_bound", "arsinh_lipschitz", "kernel_constancy",
                     "enumeration_stability", "projector", "crossings"],
            tolerances={"arsinh_lipschitz": 1e-3},
            focus=[1, 2],
            expect_crossings=1),
        output=OutputSpec("demo-crossing", ["csv", "json"]),
    )


def with_overrides(scenario: Scenario, grid_size=None, seed=None) -> Scenario:
    if grid_size is not None:
        scenario = replace(scenario, geometry=replace(scenario.geometry, grid_size=grid_size))
    if seed is not None:
        scenario = replace(scenario, seed=seed)
    return scenario
