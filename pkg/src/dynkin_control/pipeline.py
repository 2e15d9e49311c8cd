"""Stage runner: solve → boundary → build_w → game/control → verify, plus appendix.

Each stage reads what it needs from the output directory, so stages can be
run separately. Artifacts are written deterministically (shortest
round-trip floats, sorted JSON keys, no timestamps): rerunning an unchanged
scenario reproduces every file byte for byte. ``manifest.json`` lists each
stage's status and the SHA-256 of every artifact.
"""
import csv
import hashlib
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

from . import __version__
from .appendix import (Generator, appendix_table, build_hW_1d, compatibility_residual, cosine_bump,
                       pairing_terms, refinement_study)
from .control import (Band, ValueW, build_h, c_adjacent_jump, hjb_region_check, hjb_residual_w,
                      simulate_ensemble, value_at, verification_report)
from .diffusion import check_nondegenerate
from .errors import ConfigurationError, DependencyError, DynkinLabError
from .free_boundary import (ComparisonCurves, FreeBoundary, analytic_ab, connectivity_check, extract_boundaries,
                            lipschitz_estimate, ordering_check)
from .game import GameEstimate, MonteCarloParams, default_alternatives, saddle_check, validate_bands
from .grid import GridField, GridSpec, cumulative_from, interpolate
from .scenario import (Scenario, build_appendix_model, build_band_curves, build_cost, build_diffusion,
                       build_grid, dumps)
from .vi_solver import ObstacleProblem, ObstacleSolution, complementarity_residual, solve_two_obstacle

STAGES = ("solve", "boundary", "build_w", "game", "control", "verify", "appendix")
DEPENDS = {
    "solve": (),
    "boundary": ("solve",),
    "build_w": ("solve", "boundary"),
    "game": ("solve", "boundary"),
    "control": ("boundary", "build_w"),
    "verify": ("build_w", "control"),
    "appendix": (),
}
OUTPUT_ROOT_ENV = "DYNKIN_OUTPUT_ROOT"


# --------------------------------------------------------------------------
# Deterministic writers

def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def json_text(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def csv_text(header, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    cols = [np.ravel(np.asarray(c)) for c in columns]
    for row in zip(*cols):
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in row])
    return buf.getvalue()


def read_csv(path: Path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return {name: [r[k] for r in body] for k, name in enumerate(header)}


def _floats(values):
    return np.array([float(v) for v in values])


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# --------------------------------------------------------------------------
# Context

def resolve_output_dir(scenario: Scenario, out=None) -> Path:
    """``--out`` wins, then ``$DYNKIN_OUTPUT_ROOT/<name>``, then the scenario's own setting."""
    if out:
        return Path(out)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root:
        return Path(root) / scenario.name
    if scenario.output_dir:
        return Path(scenario.output_dir)
    return Path("runs") / scenario.name


@dataclass
class StageResult:
    name: str
    passed: bool
    artifacts: list
    summary: dict = field(default_factory=dict)


class Context:
    """Scenario objects built once and shared by the stages."""

    def __init__(self, scenario: Scenario, out: Path):
        self.scenario = scenario
        self.out = out
        self.digest = scenario.digest()
        self.grid = build_grid(scenario)
        self.spec = build_diffusion(scenario)
        self.cost = build_cost(scenario)
        self.problem = ObstacleProblem.from_cost(self.spec, self.grid, self.cost)
        self.xn_bc = (scenario.solver.xn_bc, scenario.solver.xn_bc)

    def write(self, name, text):
        (self.out / name).write_text(text)
        return name

    def stage_record(self, stage):
        path = self.out / f"{stage}.json"
        if not path.is_file():
            return None
        data = json.loads(path.read_text())
        return data if data.get("scenario_sha256") == self.digest else None

    def require(self, stage, dependency):
        if self.stage_record(dependency) is None:
            raise DependencyError(stage, dependency)

    # artifact readers -----------------------------------------------------

    def load_solution(self) -> ObstacleSolution:
        cols = read_csv(self.out / "solution.csv")
        shape = self.grid.shape
        V = _floats(cols["V"]).reshape(shape)
        labels = np.array([int(v) for v in cols["label"]]).reshape(shape)
        rec = self.stage_record("solve")
        return ObstacleSolution(GridField(self.grid, V), labels, rec["iterations"], rec["residual"], self.xn_bc)

    def load_boundary(self):
        cols = read_csv(self.out / "boundary.csv")
        shape = self.grid.column_shape
        get = lambda k: _floats(cols[k]).reshape(shape)
        fb = FreeBoundary(self.grid, get("a_tilde"), get("b_tilde"))
        rec = self.stage_record("boundary")
        cc = ComparisonCurves(get("a"), get("b"), get("A_band"), get("B_band"))
        return fb, cc, rec

    def load_w(self) -> ValueW:
        cols = read_csv(self.out / "w.csv")
        shape = self.grid.shape
        rec = self.stage_record("build_w")
        C = np.asarray(rec["C"], dtype=np.float64).reshape(self.grid.column_shape)
        return ValueW(GridField(self.grid, _floats(cols["W"]).reshape(shape)),
                      GridField(self.grid, _floats(cols["h"]).reshape(shape)), C)


def _record(ctx, stage, passed, body):
    return json_text({"stage": stage, "scenario": ctx.scenario.name, "scenario_sha256": ctx.digest,
                      "passed": passed, **body})


def _node_columns(grid: GridSpec):
    pts = grid.points().reshape(-1, grid.ndim)
    return [f"x{i + 1}" for i in range(grid.ndim)], [pts[:, i] for i in range(grid.ndim)]


def _column_columns(grid: GridSpec):
    if grid.ndim == 1:
        return [], []
    pts = grid.column_points().reshape(-1, grid.ndim - 1)
    return [f"x{i + 1}" for i in range(grid.ndim - 1)], [pts[:, i] for i in range(grid.ndim - 1)]


# --------------------------------------------------------------------------
# Stages

def stage_solve(ctx: Context) -> StageResult:
    s = ctx.scenario.solver
    sol = solve_two_obstacle(ctx.problem, omega=s.omega, tol=s.tol, max_iter=s.max_iter,
                             top_bc=s.xn_bc, bottom_bc=s.xn_bc)
    comp = complementarity_residual(sol, ctx.problem)
    ell = check_nondegenerate(ctx.spec, ctx.grid)
    names, coords = _node_columns(ctx.grid)
    files = [ctx.write("solution.csv", csv_text(names + ["V", "label"],
                                                coords + [sol.V.values, sol.labels.astype(int)]))]
    passed = bool(comp <= s.tol and ell.passed)
    counts = {r: int(np.sum(sol.labels == v)) for r, v in (("E1", -1), ("E", 0), ("E2", 1))}
    body = {"iterations": sol.iterations, "residual": sol.residual, "complementarity": comp,
            "omega": s.omega, "tol": s.tol, "labels": counts, "ellipticity": ell.to_dict()}
    files.append(ctx.write("solve.json", _record(ctx, "solve", passed, body)))
    return StageResult("solve", passed, files, {"complementarity": comp, "iterations": sol.iterations})


def stage_boundary(ctx: Context) -> StageResult:
    ctx.require("boundary", "solve")
    sol = ctx.load_solution()
    fb = extract_boundaries(sol, ctx.problem)
    A, B = build_band_curves(ctx.scenario, ctx.grid)
    cc = analytic_ab(ctx.problem, A, B)
    order = ordering_check(fb, cc)
    conn = connectivity_check(sol.labels, ctx.grid.periodic)
    names, coords = _column_columns(ctx.grid)
    files = [ctx.write("boundary.csv", csv_text(
        names + ["a_tilde", "b_tilde", "a", "b", "A_band", "B_band"],
        coords + [fb.a_tilde, fb.b_tilde, cc.a, cc.b, cc.A_band, cc.B_band]))]
    body = {"ordering": order.to_dict(), "connectivity": conn.to_dict()}
    if ctx.grid.ndim > 1:
        for key, curve in (("a_tilde", fb.a_tilde), ("b_tilde", fb.b_tilde)):
            value, warning = lipschitz_estimate(curve, ctx.grid.spacing[:-1])
            body[f"lipschitz_{key}"] = {"value": value, "warning": warning}
    passed = bool(order.passed and conn.passed)
    files.append(ctx.write("boundary.json", _record(ctx, "boundary", passed, body)))
    return StageResult("boundary", passed, files, {"ordering": order.passed, "connectivity": conn.passed})


def stage_build_w(ctx: Context) -> StageResult:
    for dep in DEPENDS["build_w"]:
        ctx.require("build_w", dep)
    sol = ctx.load_solution()
    fb, _, _ = ctx.load_boundary()
    vw = build_h(sol.V, ctx.problem.H, fb, ctx.spec, ctx.xn_bc, labels=sol.labels)
    report = hjb_region_check(vw, fb, ctx.spec, tol=ctx.scenario.solver.hjb_tol, cost=ctx.cost,
                              xn_bc=ctx.xn_bc)
    r = hjb_residual_w(vw, ctx.spec, ctx.xn_bc)
    names, coords = _node_columns(ctx.grid)
    files = [ctx.write("w.csv", csv_text(names + ["V", "W", "h", "residual"],
                                         coords + [sol.V.values, vw.W.values, vw.h.values, r]))]
    C = np.asarray(vw.C).ravel()
    body = {"C": C, "C_max_adjacent_jump": c_adjacent_jump(vw.C, ctx.grid.periodic),
            "hjb": report.to_dict()}
    files.append(ctx.write("build_w.json", _record(ctx, "build_w", report.passed, body)))
    return StageResult("build_w", report.passed, files, {"in_band_max": report.in_band_max})


def _mc(cfg, seed):
    return MonteCarloParams(paths=cfg.paths, dt=cfg.dt, t_max=cfg.t_max, seed=seed)


def stage_game(ctx: Context) -> StageResult:
    for dep in DEPENDS["game"]:
        ctx.require("game", dep)
    sc = ctx.scenario
    sol = ctx.load_solution()
    fb, cc, _ = ctx.load_boundary()
    x0 = np.array(sc.game.x0)
    V0 = float(interpolate(ctx.grid, sol.V.values, x0[None])[0])
    mc = _mc(sc.game, sc.seed)
    report = saddle_check(ctx.spec, x0, V0, fb, default_alternatives(fb, sc.game.shifts), ctx.cost, mc, ctx.grid)
    band_mc = MonteCarloParams(paths=sc.bands.paths, dt=sc.game.dt, t_max=sc.game.t_max, seed=sc.seed + 1)
    rows = validate_bands(ctx.spec, ctx.grid, ctx.cost, cc, band_mc, samples=sc.bands.samples)
    passed = bool(report.passed and all(r["passed"] for r in rows))
    body = {"saddle": report.to_dict(), "band_validation": {"rows": rows, **band_mc.to_dict()}}
    files = [ctx.write("game.json", _record(ctx, "game", passed, body))]
    return StageResult("game", passed, files, {"value": report.value.mean, "V_ref": V0})


def _bands(ctx: Context, fb: FreeBoundary):
    c = ctx.scenario.control
    opt = Band.from_free_boundary(fb)
    bands = [opt]
    bands += [opt.widened(d) for d in c.widen]
    bands += [opt.narrowed(d) for d in c.narrow]
    bands += [opt.translated(d) for d in c.translate]
    return bands


def stage_control(ctx: Context) -> StageResult:
    for dep in DEPENDS["control"]:
        ctx.require("control", dep)
    sc = ctx.scenario
    fb, _, _ = ctx.load_boundary()
    vw = ctx.load_w()
    x0 = np.array(sc.control.x0)
    mc = _mc(sc.control, sc.seed + 2)
    ens = simulate_ensemble(ctx.spec, ctx.grid, ctx.cost, vw.h, _bands(ctx, fb), x0, mc)
    ests = ens.estimates()
    means = ens.components.mean(axis=1)
    names = [b.name for b in ens.bands]
    files = [ctx.write("control.csv", csv_text(
        ["band", "k_hat", "std_error", "holding", "control_continuous", "jump", "A1", "A2"],
        [names, [e.mean for e in ests], [e.std_error for e in ests]] + [means[:, k] for k in range(5)]))]
    body = {"x0": x0, **mc.to_dict(), "truncation_bias_bound": ests[0].truncation_bias_bound,
            "bands": {b.name: {"beta": np.ravel(b.beta), "gamma": np.ravel(b.gamma)} for b in ens.bands}}
    files.append(ctx.write("control.json", _record(ctx, "control", True, body)))
    return StageResult("control", True, files, {"k_hat_optimal": ests[0].mean})


def stage_verify(ctx: Context) -> StageResult:
    for dep in DEPENDS["verify"]:
        ctx.require("verify", dep)
    sc = ctx.scenario
    fb, _, _ = ctx.load_boundary()
    vw = ctx.load_w()
    cols = read_csv(ctx.out / "control.csv")
    rec = ctx.stage_record("control")
    mc = MonteCarloParams(rec["paths"], rec["dt"], rec["t_max"], rec["seed"])
    ests = [GameEstimate(m, se, mc.paths, rec["truncation_bias_bound"])
            for m, se in zip(_floats(cols["k_hat"]), _floats(cols["std_error"]))]
    x0 = np.array(sc.control.x0)
    W0 = value_at(vw, fb, ctx.cost, x0)
    report = verification_report(W0, cols["band"], ests, x0, mc)
    files = [ctx.write("verify.txt", report.to_text()),
             ctx.write("verify.json", _record(ctx, "verify", report.passed, report.to_dict()))]
    return StageResult("verify", report.passed, files, {"W_x0": W0})


def stage_appendix(ctx: Context) -> StageResult:
    sc = ctx.scenario
    model = build_appendix_model(sc)
    a = sc.appendix
    studies = {}
    for choice in Generator:
        hs, res, orders = refinement_study(model, a.counts, choice, a.bump, a.bump)
        studies[choice.value] = {"h": hs, "residual": res, "order": orders}
    finest = GridSpec([a.interval[0]], [a.interval[1]], [a.counts[-1]])
    table = appendix_table(model, finest)
    u = cosine_bump(finest, a.bump)
    gaps = {}
    for choice in Generator:
        gaps[choice.value] = pairing_terms(model, u, u, choice).to_dict()
    compat = compatibility_residual(model, finest.xn)
    res_gamma = studies[Generator.L_GAMMA.value]["residual"]
    passed = bool(np.all(np.diff(res_gamma) < 0) or np.max(res_gamma) <= 1e-12)
    body = {"compatibility_residual": compat, "refinement": studies, "pairing_finest": gaps,
            "interval": a.interval, "bump": a.bump}
    consistency = _appendix_consistency(ctx, model)
    if consistency is not None:
        body["consistency_with_build_w"] = consistency
    files = [ctx.write("appendix.csv", csv_text(
        ["x", "s_dot", "m_dot", "gamma", "compat"],
        [table["x"], table["s_dot"], table["m_dot"], table["gamma"], table["compat"]]))]
    files.append(ctx.write("appendix.json", _record(ctx, "appendix", passed, body)))
    return StageResult("appendix", passed, files, {"compatibility_residual": compat})


def _appendix_consistency(ctx: Context, model):
    """Nodewise gap between the 1-D formulas and the generic construction (one axis only)."""
    if ctx.grid.ndim != 1 or ctx.stage_record("build_w") is None:
        return None
    lo, hi = model.interval
    y = ctx.grid.xn
    if lo > y[0] or hi < y[-1]:
        return None
    sol = ctx.load_solution()
    fb, _, _ = ctx.load_boundary()
    vw = ctx.load_w()
    a = float(fb.a_tilde)
    H = ctx.problem.H
    C_app = float(vw.C) + float(np.interp(0.0, y, cumulative_from(H.values, y, a)))
    h_app, W_app = build_hW_1d(model, sol.V, H, a, C=C_app)
    return {"C": float(vw.C), "max_abs_h": float(np.max(np.abs(h_app.values - vw.h.values))),
            "max_abs_W": float(np.max(np.abs(W_app.values - vw.W.values)))}


RUNNERS = {"solve": stage_solve, "boundary": stage_boundary, "build_w": stage_build_w, "game": stage_game,
           "control": stage_control, "verify": stage_verify, "appendix": stage_appendix}


# --------------------------------------------------------------------------
# Orchestration

@dataclass
class RunManifest:
    scenario: str
    scenario_sha256: str
    version: str
    stages: dict
    artifacts: dict

    @property
    def passed(self):
        return all(v["status"] == "pass" for v in self.stages.values())

    def to_dict(self):
        return {"scenario": self.scenario, "scenario_sha256": self.scenario_sha256, "version": self.version,
                "stages": self.stages, "artifacts": self.artifacts, "passed": self.passed}


def order_stages(stages):
    """Requested stages in pipeline order; raises on unknown names."""
    stages = list(stages) if stages else list(STAGES)
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        raise ConfigurationError(f"unknown stage(s) {unknown}; choose from {list(STAGES)}", field="stages")
    return [s for s in STAGES if s in stages]


def _previous_manifest(out: Path, digest):
    path = out / "manifest.json"
    if not path.is_file():
        return {}
    data = json.loads(path.read_text())
    return data.get("stages", {}) if data.get("scenario_sha256") == digest else {}


def run_pipeline(scenario: Scenario, stages=None, out=None, log=None) -> RunManifest:
    """Run ``stages`` (default: all) in dependency order and write the manifest.

    A stage whose dependency is neither requested nor already present in
    the output directory raises :class:`DependencyError`. The manifest is
    written even when a stage raises; the exception is then re-raised.
    """
    order = order_stages(stages)
    out = resolve_output_dir(scenario, out)
    out.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(out / ".lock"))
    try:
        lock.acquire(timeout=0)
    except Timeout:
        raise ConfigurationError(f"output directory {out} is in use by another run", field="out") from None
    try:
        ctx = Context(scenario, out)
        for stage in order:
            for dep in DEPENDS[stage]:
                if dep not in order and ctx.stage_record(dep) is None:
                    raise DependencyError(stage, dep)
        (out / "scenario.ini").write_text(dumps(scenario))
        records = _previous_manifest(out, ctx.digest)
        error = None
        for stage in order:
            try:
                result = RUNNERS[stage](ctx)
            except DynkinLabError as exc:
                records[stage] = {"status": "error", "error": f"{type(exc).__name__}: {exc}", "artifacts": []}
                error = exc
                break
            records[stage] = {"status": "pass" if result.passed else "fail",
                              "artifacts": sorted(result.artifacts), "summary": _clean(result.summary)}
            if log is not None:
                log(f"{stage}: {records[stage]['status']}")
        names = sorted({a for r in records.values() for a in r["artifacts"]} | {"scenario.ini"})
        artifacts = {n: sha256(out / n) for n in names if (out / n).is_file()}
        manifest = RunManifest(scenario.name, ctx.digest, __version__,
                               {k: records[k] for k in STAGES if k in records}, artifacts)
        (out / "manifest.json").write_text(json_text(manifest.to_dict()))
        if error is not None:
            raise error
        return manifest
    finally:
        lock.release()
