"""Configuration, experiment orchestration and on-disk artifacts.

A configuration is a nested mapping (YAML on disk)::

    domain:   {extents: [1, 1], resolution: [16, 16]}
    time:     {horizon: 1.0, steps: 64}          # steps optional
    coupling: {epsilon: 0.1, theta: 1.0, constant: 62.5}
    model:
      beta: {name: linear, params: {lam: 1.0}}
      g:    {name: logistic, params: {sigma: 1.0}}
      f:    {name: zero}
      u0:   {name: cosine, params: {a: 1.0}}
    solver:   {newton_tol: 1.0e-10, ...}
    noise:    {seed: 20240601}
    ensemble: {samples: 64}
    schedule: {levels: 3, base_steps: 16, kappa: 1}
    output:   {dir: out}

Without ``time.steps`` a run uses the smallest N with ``T/N <= C eps^(2+theta)``.
"""

from __future__ import annotations

import copy
import json
import logging
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .diagnostics import (RunDiagnostics, cauchy_difference, check_gronwall_bound, collect,
                          constraint_decay, ensemble_reduce, write_diagnostics_csv,
                          write_summary_csv)
from .fields import l2_norm, save_space_time
from .mesh import build_uniform_grid, write_mesh
from .model import (ModelSpec, ScheduleError, build_schedule, function_l2_sq, make_beta, make_g,
                    make_source, make_u0, project_initial, source_norm_sq, validate)
from .noise import coarsen, sample_path
from .solver import SolverConfig, SolverError, assemble_stiffness, run_path

log = logging.getLogger(__name__)

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3
THREADS_ENV = "SAC_FV_THREADS"

DEFAULTS = {
    "domain": {"extents": [1.0, 1.0], "resolution": [16, 16]},
    "time": {"horizon": 1.0},
    "coupling": {"epsilon": 0.1, "theta": 1.0, "constant": 62.5},
    "model": {
        "beta": {"name": "linear", "params": {"lam": 1.0}},
        "g": {"name": "logistic", "params": {"sigma": 1.0}},
        "f": {"name": "zero", "params": {}},
        "u0": {"name": "cosine", "params": {"a": 1.0}},
    },
    "solver": {},
    "noise": {"seed": 20240601},
    "ensemble": {"samples": 8},
    "schedule": {"levels": 3, "base_steps": 16, "kappa": 1},
    "output": {"dir": "out"},
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "params":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path) -> dict:
    """Read a YAML config, or the config snapshot stored in a run manifest."""
    text = Path(path).read_text()
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    if "config" in data and "code_version" in data:
        data = data["config"]
    return _merge(DEFAULTS, data)


def normalize_config(cfg: dict | None) -> dict:
    return _merge(DEFAULTS, cfg or {})


def spec_from_config(cfg: dict) -> ModelSpec:
    try:
        model = cfg["model"]
        extents = tuple(float(e) for e in cfg["domain"]["extents"])

        def build(factory, key):
            entry = model[key]
            return factory(entry["name"], **(entry.get("params") or {}))

        return ModelSpec(
            epsilon=float(cfg["coupling"]["epsilon"]),
            theta=float(cfg["coupling"]["theta"]),
            coupling_constant=float(cfg["coupling"]["constant"]),
            beta=build(make_beta, "beta"), g=build(make_g, "g"),
            f=build(make_source, "f"), u0=build(make_u0, "u0"),
            horizon=float(cfg["time"]["horizon"]), extents=extents,
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed configuration: {exc}") from exc


def solver_from_config(cfg: dict) -> SolverConfig:
    try:
        return SolverConfig(**(cfg.get("solver") or {}))
    except TypeError as exc:
        raise ConfigError(f"unknown solver option: {exc}") from exc


def steps_from_config(cfg: dict, spec: ModelSpec) -> int:
    steps = cfg["time"].get("steps")
    return int(steps) if steps else spec.coupled_steps()


def mesh_from_config(cfg: dict, resolution=None):
    extents = cfg["domain"]["extents"]
    return build_uniform_grid(len(extents), extents, resolution or cfg["domain"]["resolution"])


def check_config(cfg: dict):
    """Validate a config; returns ``(spec, report)``."""
    spec = spec_from_config(cfg)
    steps = steps_from_config(cfg, spec)
    report = validate(spec, dt=spec.horizon / steps)
    if len(spec.extents) != len(cfg["domain"]["resolution"]):
        report.failures.append("domain: extents and resolution differ in length")
        report.passed = False
    return spec, report


# ------------------------------------------------------------- artifacts

@dataclass
class RunManifest:
    config: dict
    mesh_hash: str | list
    seed: int
    samples: list
    code_version: str = __version__
    level: int | None = None
    threads: int = 1
    started: str = ""
    wall_clock_s: float = 0.0
    solver_summary: dict = field(default_factory=dict)
    platform: str = field(default_factory=platform.platform)

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def _solver_summary(reports) -> dict:
    return {
        "steps": len(reports),
        "newton_iters": int(sum(r.newton_iters for r in reports)),
        "linear_iters": int(sum(r.linear_iters for r in reports)),
        "damping_events": int(sum(r.damping_events for r in reports)),
        "max_residual": float(max((r.residual for r in reports), default=0.0)),
    }


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _map(fn, items, threads):
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


@dataclass
class SampleResult:
    sample: int
    diagnostics: RunDiagnostics | None = None
    summary: dict | None = None
    error: str | None = None


def _run_sample(spec, mesh, A, u0, steps, seed, solver_cfg, sample) -> SampleResult:
    path = sample_path(seed, sample, steps, spec.horizon / steps)
    try:
        stf, reports = run_path(u0, path, spec, mesh, solver_cfg, A)
    except SolverError as exc:
        return SampleResult(sample, error=str(exc))
    return SampleResult(sample, collect(stf, spec, sample), _solver_summary(reports))


def run_single(cfg: dict, out_dir, sample: int = 0):
    """One path: frames, diagnostics CSV and manifest.  Returns the exit code."""
    t0 = time.time()
    spec, report = check_config(cfg)
    if not report.passed:
        log.error(report.summary())
        return EXIT_VALIDATION
    mesh = mesh_from_config(cfg)
    steps = steps_from_config(cfg, spec)
    seed = int(cfg["noise"]["seed"])
    u0 = project_initial(spec.u0, mesh)
    path = sample_path(seed, sample, steps, spec.horizon / steps)
    try:
        stf, reports = run_path(u0, path, spec, mesh, solver_from_config(cfg))
    except SolverError as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_mesh(mesh, out / "mesh.txt")
    save_space_time(stf, out / "solution", seed=seed, sample=sample)
    write_diagnostics_csv(out / "diagnostics.csv", [(0, collect(stf, spec, sample))])
    RunManifest(cfg, mesh.hash, seed, [sample], started=time.strftime("%Y-%m-%dT%H:%M:%S"),
                wall_clock_s=time.time() - t0,
                solver_summary=_solver_summary(reports)).write(out / "manifest.json")
    return EXIT_OK


def _gronwall_text(spec, stats, mesh, steps, u0) -> tuple[str, bool]:
    u0_sq = l2_norm(u0) ** 2
    exact_u0_sq = function_l2_sq(spec.u0, mesh)
    f_sq = source_norm_sq(spec.f, mesh, spec.horizon, steps)
    rep = check_gronwall_bound(stats, spec, u0_sq, f_sq)
    projection_ok = u0_sq <= exact_u0_sq * (1 + 1e-12)
    lines = [
        f"energy bound: {'holds' if rep.holds else 'VIOLATED'}",
        f"  max_n mean + 3 stderr = {rep.estimate:.17g} (step {rep.worst_step})",
        f"  bound                 = {rep.bound:.17g}",
        f"  margin                = {rep.margin:.17g}",
        f"  ||u_h^0||^2 = {u0_sq:.17g}, ||u0||^2 = {exact_u0_sq:.17g}, ||f||^2 = {f_sq:.17g}",
        f"initial projection bound: {'holds' if projection_ok else 'VIOLATED'}",
    ]
    if rep.note:
        lines.append(f"  note: {rep.note}")
    return "\n".join(lines) + "\n", rep.holds and projection_ok


def run_ensemble(cfg: dict, out_dir, threads: int = 1):
    t0 = time.time()
    spec, report = check_config(cfg)
    if not report.passed:
        log.error(report.summary())
        return EXIT_VALIDATION
    samples = int(cfg["ensemble"]["samples"])
    if samples < 1:
        log.error("ensemble.samples must be >= 1")
        return EXIT_VALIDATION
    mesh = mesh_from_config(cfg)
    steps = steps_from_config(cfg, spec)
    seed = int(cfg["noise"]["seed"])
    A = assemble_stiffness(mesh)
    u0 = project_initial(spec.u0, mesh)
    solver_cfg = solver_from_config(cfg)
    results = _map(lambda s: _run_sample(spec, mesh, A, u0, steps, seed, solver_cfg, s),
                   range(samples), threads)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    good = [r for r in results if r.error is None]
    bad = [r for r in results if r.error is not None]
    if good:
        write_diagnostics_csv(out / "diagnostics.csv", [(0, r.diagnostics) for r in good])
        stats = ensemble_reduce([r.diagnostics for r in good])
        write_summary_csv(out / "summary.csv", stats)
        text, _ = _gronwall_text(spec, stats, mesh, steps, u0)
        (out / "gronwall.txt").write_text(text)
    if bad:
        (out / "failures.txt").write_text("".join(f"sample {r.sample}: {r.error}\n" for r in bad))
    RunManifest(cfg, mesh.hash, seed, [0, samples], threads=threads,
                started=time.strftime("%Y-%m-%dT%H:%M:%S"), wall_clock_s=time.time() - t0,
                solver_summary={str(r.sample): r.summary for r in good}).write(out / "manifest.json")
    return EXIT_SOLVER if bad else EXIT_OK


@dataclass
class ConvergenceResult:
    schedule: object
    stats: list
    cauchy: list          # per level gap: (mean, stderr)
    decay: object
    per_sample_cauchy: np.ndarray
    per_sample: list      # per sample: list of RunDiagnostics, one per level


def _converge_sample(spec, schedule, meshes, ops, u0s, seed, solver_cfg, sample):
    finest = schedule[-1]
    fine_path = sample_path(seed, sample, finest.steps, finest.dt)
    stfs, diags = [], []
    for m, level in enumerate(schedule):
        path = coarsen(fine_path, finest.steps // level.steps)
        lspec = spec.with_epsilon(level.epsilon)
        stf, _ = run_path(u0s[m], path, lspec, meshes[m], solver_cfg, ops[m])
        stfs.append(stf)
        diags.append(collect(stf, lspec, sample))
    gaps = [cauchy_difference(stfs[m], stfs[m + 1], meshes[m + 1]) for m in range(len(stfs) - 1)]
    return diags, gaps


def convergence_study(cfg: dict, threads: int = 1) -> ConvergenceResult:
    """Coupled refinement study driven by shared, coarsened Brownian paths."""
    spec = spec_from_config(cfg)
    sch = cfg["schedule"]
    schedule = build_schedule(spec, int(sch["levels"]), cfg["domain"]["resolution"],
                              int(sch["base_steps"]), int(sch.get("kappa", 1)))
    meshes = [mesh_from_config(cfg, lvl.resolution) for lvl in schedule]
    ops = [assemble_stiffness(m) for m in meshes]
    u0s = [project_initial(spec.u0, m) for m in meshes]
    seed = int(cfg["noise"]["seed"])
    samples = int(cfg["ensemble"]["samples"])
    solver_cfg = solver_from_config(cfg)
    results = _map(lambda s: _converge_sample(spec, schedule, meshes, ops, u0s, seed, solver_cfg, s),
                   range(samples), threads)
    stats = [ensemble_reduce([r[0][m] for r in results]) for m in range(len(schedule))]
    gaps = np.array([r[1] for r in results])
    cauchy = []
    for m in range(len(schedule) - 1):
        col = gaps[:, m]
        se = col.std(ddof=1) / np.sqrt(len(col)) if len(col) > 1 else float("nan")
        cauchy.append((float(col.mean()), float(se)))
    decay = constraint_decay([(lvl.epsilon, st) for lvl, st in zip(schedule, stats)])
    return ConvergenceResult(schedule, stats, cauchy, decay, gaps, [r[0] for r in results])


CONVERGENCE_COLUMNS = ("level", "epsilon", "dt", "h", "steps", "dt_over_eps_power",
                       "cauchy_mean", "cauchy_stderr", "neg_part_sq", "overshoot_sq",
                       "psi_sq", "lr_gap_over_dt")


def run_converge(cfg: dict, out_dir, threads: int = 1):
    t0 = time.time()
    spec, report = check_config(cfg)
    failures = [f for f in report.failures if not f.startswith("smallness")]
    if failures:
        log.error("invalid configuration:\n%s", "\n".join(failures))
        return EXIT_VALIDATION
    try:
        result = convergence_study(cfg, threads)
    except ScheduleError as exc:
        log.error("schedule: %s", exc)
        return EXIT_VALIDATION
    except SolverError as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for m, st in enumerate(result.stats):
        d = out / f"level_{m}"
        d.mkdir(exist_ok=True)
        write_diagnostics_csv(d / "diagnostics.csv", [(m, s[m]) for s in result.per_sample])
        write_summary_csv(d / "summary.csv", st)
    th = result.schedule.theta
    rows = [",".join(CONVERGENCE_COLUMNS)]
    for m, (lvl, st) in enumerate(zip(result.schedule, result.stats)):
        mesh_h = float(np.linalg.norm(np.array(cfg["domain"]["extents"], float)
                                      / np.array(lvl.resolution)))
        cm, cs = result.cauchy[m] if m < len(result.cauchy) else (float("nan"), float("nan"))
        vals = [m, lvl.epsilon, lvl.dt, mesh_h, lvl.steps, lvl.dt / lvl.epsilon ** (2 + th), cm, cs,
                st["neg_part_sq"].mean, st["overshoot_sq"].mean, st["psi_sq"].mean,
                st["lr_gap_sq"].mean / lvl.dt]
        rows.append(",".join(str(v) if isinstance(v, int) else format(float(v), ".17g") for v in vals))
    (out / "convergence.csv").write_text("\n".join(rows) + "\n")
    (out / "decay.txt").write_text(result.decay.summary() + "\n")
    meshes = [mesh_from_config(cfg, lvl.resolution).hash for lvl in result.schedule]
    RunManifest(cfg, meshes, int(cfg["noise"]["seed"]), [0, int(cfg["ensemble"]["samples"])],
                level=len(result.schedule), threads=threads,
                started=time.strftime("%Y-%m-%dT%H:%M:%S"),
                wall_clock_s=time.time() - t0).write(out / "manifest.json")
    return EXIT_OK
