"""Workflow stages behind the CLI subcommands.

Each stage reads its prerequisites from the output directory (building them
on demand when missing), writes its artifacts there, and is byte-idempotent
for fixed seeds; wall-clock timestamps appear only in the human-readable
summary files.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import curves as curves_mod
from . import kle
from .config import RunConfig
from .errors import ConfigError
from .inversion import (ErrorMetrics, IdentificationResult, ObservationSet,
                        ForwardObjective, PsoConfig, draw_ground_truth,
                        error_metrics, identify, load_observations,
                        save_observations, training_currents,
                        validation_currents)
from .magnetostatics import (DipoleGeometry, FemSystem, build_nu_table,
                             generate_dipole_mesh, load_mesh, save_mesh,
                             solve_nonlinear)
from .sensitivity import export_sensitivity_csv, rank_probes, solve_gateaux

MODEL_JSON = "model.json"
EIGENVALUES_CSV = "eigenvalues.csv"
MODES_CSV = "modes.csv"
SENSITIVITY_CSV = "sensitivity_map.csv"
RANKING_JSON = "probe_ranking.json"
TRAIN_CSV = "obs_train.csv"
VALIDATION_CSV = "obs_validation.csv"
GROUND_TRUTH_JSON = "ground_truth.json"
RESULT_JSON = "identification.json"
E_REL_CSV = "e_rel.csv"
E_ABS_CSV = "e_abs.csv"
SUMMARY_TXT = "summary.txt"
VALIDATE_TXT = "validation_summary.txt"


def geometry_from_config(cfg: RunConfig) -> DipoleGeometry:
    mm = 1e-3
    return DipoleGeometry(
        turns=cfg.get("geometry", "turns"),
        gap_height=cfg.get("geometry", "gap_height_mm") * mm,
        pole_gap=cfg.get("geometry", "pole_gap_mm") * mm,
        pole_width=cfg.get("geometry", "pole_width_mm") * mm,
        shim_width=cfg.get("geometry", "shim_width_mm") * mm,
        shim_drop=cfg.get("geometry", "shim_drop_mm") * mm,
        leg_width=cfg.get("geometry", "leg_width_mm") * mm,
        beam_height=cfg.get("geometry", "beam_height_mm") * mm,
        window_width=cfg.get("geometry", "window_width_mm") * mm,
        air_margin=cfg.get("geometry", "air_margin_mm") * mm,
    )


def solver_options(cfg: RunConfig) -> dict:
    return {
        "tol": cfg.get("solver", "newton_tol"),
        "max_iter": cfg.get("solver", "newton_max_iter"),
        "max_halvings": cfg.get("solver", "max_halvings"),
        "linear_solver": cfg.get("solver", "linear_solver"),
        "cg_tol": cfg.get("solver", "cg_tol"),
    }


def pso_from_config(cfg: RunConfig) -> PsoConfig:
    return PsoConfig(
        swarm_size=cfg.get("inversion", "swarm_size"),
        iterations=cfg.get("inversion", "iterations"),
        inertia=cfg.get("inversion", "inertia"),
        cognitive=cfg.get("inversion", "cognitive"),
        social=cfg.get("inversion", "social"),
        velocity_clamp=cfg.get("inversion", "velocity_clamp"),
        seed=cfg.get("inversion", "seed"),
        early_stop_tol=cfg.get("inversion", "early_stop_tol"),
        early_stop_window=cfg.get("inversion", "early_stop_window"),
    )


def _ensemble(cfg: RunConfig) -> list:
    if cfg.get("model", "synthetic"):
        tables = curves_mod.synth_ensemble(
            seed=cfg.get("model", "seed"),
            K=cfg.get("model", "specimens"),
            L=cfg.get("model", "table_points"),
            b_max=cfg.get("model", "b_max"))
    else:
        manifest = cfg.get("paths", "ensemble_manifest")
        if not manifest:
            raise ConfigError("[paths] ensemble_manifest required when "
                              "[model] synthetic = false")
        tables = curves_mod.load_ensemble(manifest)
    return [curves_mod.fit_monotone_spline(t) for t in tables]


def get_mesh(cfg: RunConfig):
    cache = cfg.get("paths", "mesh_cache")
    geom = geometry_from_config(cfg)
    if cache and Path(cache).exists():
        return load_mesh(cache), geom
    mesh = generate_dipole_mesh(geom, refinement=cfg.get("geometry", "refinement"))
    if cache:
        save_mesh(mesh, cache)
    return mesh, geom


def get_model(cfg: RunConfig) -> kle.MaterialModel:
    path = cfg.out_dir() / MODEL_JSON
    if not path.exists():
        cmd_build_model(cfg)
    return kle.load_model(path)


def _nominal_current(cfg: RunConfig) -> float:
    spec = cfg.get("inversion", "nominal_current")
    cur = training_currents(cfg.get("inversion", "current_min"),
                            cfg.get("inversion", "current_max"),
                            cfg.get("inversion", "n_currents"))
    if spec == "max":
        return float(cur[-1])
    if spec == "median":
        return float(np.median(cur))
    return float(spec)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_build_model(cfg: RunConfig) -> dict:
    """Fit the ensemble, solve the eigenproblem, write model + spectrum."""
    out = cfg.out_dir()
    out.mkdir(parents=True, exist_ok=True)
    fitted = _ensemble(cfg)
    stats = kle.estimate_statistics(fitted, N=cfg.get("model", "grid_n"))
    M = cfg.get("model", "truncation")
    pairs = kle.solve_eigenproblem(stats, M_max=max(M, 10))
    model = kle.build_model(stats, pairs, M=M, curves=fitted,
                            alpha=cfg.get("model", "alpha"))
    kle.save_model(model, out / MODEL_JSON)

    spectrum = kle.full_spectrum(stats)
    lines = ["m,eigenvalue"]
    lines += [f"{m + 1},{float(lam)!r}" for m, lam in enumerate(spectrum)]
    (out / EIGENVALUES_CSV).write_text("\n".join(lines) + "\n")

    header = "B_T,mean_H" + "".join(f",mode{m + 1}" for m in range(M))
    rows = [header]
    for i, s in enumerate(stats.grid):
        vals = ",".join(repr(float(model.modes[m, i])) for m in range(M))
        rows.append(f"{float(s)!r},{float(stats.mean[i])!r},{vals}")
    (out / MODES_CSV).write_text("\n".join(rows) + "\n")

    ratios = [float(lam / pairs[0][0]) for lam, _ in pairs[:M]]
    report = {"eigenvalues": [float(lam) for lam, _ in pairs[:M]],
              "ratios_to_lambda1": ratios,
              "trace": stats.trace,
              "truncation": M}
    print(f"model: M={M}, eigenvalues "
          + ", ".join(f"{v:.4e}" for v in report["eigenvalues"]))
    print("lambda_m/lambda_1: "
          + ", ".join(f"{v:.3e}" for v in ratios))
    return report


def cmd_sensitivity(cfg: RunConfig) -> dict:
    """Per-mode sensitivity maps and the ranked probe set."""
    out = cfg.out_dir()
    out.mkdir(parents=True, exist_ok=True)
    model = get_model(cfg)
    mesh, geom = get_mesh(cfg)
    system = FemSystem(mesh, turns=geom.turns)
    table = build_nu_table(model.curve(np.zeros(model.M)),
                           n=cfg.get("solver", "table_size"))
    current = _nominal_current(cfg)
    sol = solve_nonlinear(system, table, current, **solver_options(cfg))
    fields = [solve_gateaux(sol, model, m) for m in range(1, model.M + 1)]
    export_sensitivity_csv(fields, out / SENSITIVITY_CSV)

    candidates = geom.candidate_probe_lattice()
    ranked = rank_probes(fields, candidates,
                         top_p=cfg.get("inversion", "probe_count"))
    doc = {"nominal_current_A": current,
           "probes": [{"x_m": p[0], "y_m": p[1], "score_T": s}
                      for p, s in ranked]}
    (out / RANKING_JSON).write_text(json.dumps(doc, indent=1) + "\n")
    print(f"sensitivity: nominal current {current:.1f} A, "
          f"top probe ({ranked[0][0][0]:.4f}, {ranked[0][0][1]:.4f})")
    return doc


def _ranked_probes(cfg: RunConfig) -> np.ndarray:
    path = cfg.out_dir() / RANKING_JSON
    if not path.exists():
        cmd_sensitivity(cfg)
    doc = json.loads(path.read_text())
    return np.array([[p["x_m"], p["y_m"]] for p in doc["probes"]])


def cmd_make_data(cfg: RunConfig) -> dict:
    """Simulate training and validation observations at a seeded ground truth."""
    out = cfg.out_dir()
    out.mkdir(parents=True, exist_ok=True)
    model = get_model(cfg)
    mesh, geom = get_mesh(cfg)
    system = FemSystem(mesh, turns=geom.turns)
    probes = _ranked_probes(cfg)
    y0 = draw_ground_truth(model, seed=cfg.get("inversion", "y0_seed"))

    cur_tr = training_currents(cfg.get("inversion", "current_min"),
                               cfg.get("inversion", "current_max"),
                               cfg.get("inversion", "n_currents"))
    cur_val = validation_currents(cfg.get("inversion", "current_min"),
                                  cfg.get("inversion", "current_max"),
                                  cfg.get("inversion", "n_currents"),
                                  cfg.get("inversion", "n_validation_extra"))
    axis = geom.central_axis_points(cfg.get("inversion", "axis_probes"))
    opts = solver_options(cfg)

    def simulate(points, currents):
        shell = ObservationSet(probes=points, currents=currents,
                               data=np.zeros((currents.size, len(points))),
                               provenance="shell")
        fo = ForwardObjective(shell, model, system, solver_options=opts)
        return fo.sweep(y0)

    train = ObservationSet(probes=probes, currents=cur_tr,
                           data=simulate(probes, cur_tr),
                           provenance="synthetic-ground-truth")
    val = ObservationSet(probes=axis, currents=cur_val,
                         data=simulate(axis, cur_val),
                         provenance="synthetic-ground-truth")
    save_observations(train, out / TRAIN_CSV)
    save_observations(val, out / VALIDATION_CSV)
    (out / GROUND_TRUTH_JSON).write_text(json.dumps(
        {"y0": y0.tolist(), "y0_seed": cfg.get("inversion", "y0_seed"),
         "provenance": "synthetic-ground-truth"}, indent=1) + "\n")
    print(f"data: {cur_tr.size} training currents x {len(probes)} probes, "
          f"{cur_val.size} validation currents x {len(axis)} axis probes")
    return {"y0": y0.tolist(), "training_currents": cur_tr.tolist(),
            "validation_currents": cur_val.tolist()}


def _write_metrics(out: Path, metrics: ErrorMetrics) -> None:
    lines = ["B_T,e_rel"]
    lines += [f"{float(b)!r},{'' if np.isnan(v) else repr(float(v))}"
              for b, v in zip(metrics.b_grid, metrics.e_rel)]
    (out / E_REL_CSV).write_text("\n".join(lines) + "\n")

    lines = ["current_A,x_m,y_m,e_abs_T"]
    for n, cur in enumerate(metrics.currents):
        for p, (x, y) in enumerate(metrics.probes):
            lines.append(f"{float(cur)!r},{float(x)!r},{float(y)!r},"
                         f"{float(metrics.e_abs[n, p])!r}")
    (out / E_ABS_CSV).write_text("\n".join(lines) + "\n")


def cmd_identify(cfg: RunConfig, threads: int = 1) -> IdentificationResult:
    """Run the swarm identification and emit result, metrics and summary."""
    out = cfg.out_dir()
    out.mkdir(parents=True, exist_ok=True)
    for name in (TRAIN_CSV,):
        if not (out / name).exists():
            cmd_make_data(cfg)
    model = get_model(cfg)
    mesh, geom = get_mesh(cfg)
    system = FemSystem(mesh, turns=geom.turns)
    obs = load_observations(out / TRAIN_CSV, provenance="training")
    pso = pso_from_config(cfg)
    opts = solver_options(cfg)

    t0 = time.perf_counter()
    result = identify(obs, model, system, pso,
                      tikhonov_a=cfg.get("inversion", "tikhonov_a"),
                      threads=threads, solver_options=opts)
    wall = time.perf_counter() - t0

    doc = {
        "y_hat": result.y_hat.tolist(),
        "objective_value": result.objective_value,
        "history": result.history,
        "iterations": result.iterations,
        "evaluations": result.evaluations,
        "forward_solves": result.forward_solves,
        "cache_hits": result.cache_hits,
        "divergences": result.divergences,
        "seed": result.seed,
        "tikhonov_a": result.tikhonov_a,
        "pso": {"swarm_size": pso.swarm_size, "iterations": pso.iterations,
                "inertia": pso.inertia, "cognitive": pso.cognitive,
                "social": pso.social, "velocity_clamp": pso.velocity_clamp,
                "early_stop_tol": pso.early_stop_tol,
                "early_stop_window": pso.early_stop_window},
    }
    (out / RESULT_JSON).write_text(json.dumps(doc, indent=1) + "\n")

    summary = [
        "identification summary",
        f"finished: {time.strftime('%Y-%m-%d %H:%M:%S')}",
        f"wall time: {wall:.1f} s",
        f"y_hat: {result.y_hat.tolist()}",
        f"best objective: {result.objective_value:.6e} T^2",
        f"iterations: {result.iterations} (budget "
        f"{pso.iterations}, early stop window {pso.early_stop_window})",
        f"objective evaluations: {result.evaluations}",
        f"forward solves: {result.forward_solves}",
        f"cache hits: {result.cache_hits}",
        f"accounting: evaluations x currents = "
        f"{result.evaluations * obs.currents.size} = forward solves + cache "
        f"hits = {result.forward_solves + result.cache_hits}",
        f"divergent evaluations: {result.divergences}",
    ]

    gt_path = out / GROUND_TRUTH_JSON
    if gt_path.exists() and (out / VALIDATION_CSV).exists():
        y0 = np.array(json.loads(gt_path.read_text())["y0"])
        validation = load_observations(out / VALIDATION_CSV,
                                       provenance="validation")
        metrics = error_metrics(result.y_hat, y0, model, validation, system,
                                solver_options=opts)
        _write_metrics(out, metrics)
        e_rel_ok = metrics.max_e_rel < cfg.get("inversion", "e_rel_threshold")
        e_abs_ok = metrics.max_e_abs < cfg.get("inversion", "e_abs_threshold")
        summary += [
            f"max E_rel: {metrics.max_e_rel:.6f} "
            f"(threshold {cfg.get('inversion', 'e_rel_threshold')}) "
            f"{'PASS' if e_rel_ok else 'FAIL'}",
            f"max E_abs: {metrics.max_e_abs:.6e} T "
            f"(threshold {cfg.get('inversion', 'e_abs_threshold')}) "
            f"{'PASS' if e_abs_ok else 'FAIL'}",
        ]
    (out / SUMMARY_TXT).write_text("\n".join(summary) + "\n")
    print("\n".join(summary[2:]))
    return result


def cmd_validate(cfg: RunConfig) -> bool:
    """Error metrics of a finished identification against the stored ground
    truth; returns False when a threshold is exceeded."""
    out = cfg.out_dir()
    for name in (RESULT_JSON, GROUND_TRUTH_JSON, VALIDATION_CSV):
        if not (out / name).exists():
            raise ConfigError(f"validate: missing '{out / name}'; run "
                              f"identify (and make-data) first")
    model = get_model(cfg)
    mesh, geom = get_mesh(cfg)
    system = FemSystem(mesh, turns=geom.turns)
    y_hat = np.array(json.loads((out / RESULT_JSON).read_text())["y_hat"])
    y0 = np.array(json.loads((out / GROUND_TRUTH_JSON).read_text())["y0"])
    validation = load_observations(out / VALIDATION_CSV,
                                   provenance="validation")
    metrics = error_metrics(y_hat, y0, model, validation, system,
                            solver_options=solver_options(cfg))
    _write_metrics(out, metrics)
    e_rel_thr = cfg.get("inversion", "e_rel_threshold")
    e_abs_thr = cfg.get("inversion", "e_abs_threshold")
    ok = metrics.max_e_rel < e_rel_thr and metrics.max_e_abs < e_abs_thr
    lines = [
        "validation summary",
        f"finished: {time.strftime('%Y-%m-%d %H:%M:%S')}",
        f"max E_rel: {metrics.max_e_rel:.6f} (threshold {e_rel_thr}) "
        f"{'PASS' if metrics.max_e_rel < e_rel_thr else 'FAIL'}",
        f"max E_abs: {metrics.max_e_abs:.6e} T (threshold {e_abs_thr}) "
        f"{'PASS' if metrics.max_e_abs < e_abs_thr else 'FAIL'}",
        f"overall: {'PASS' if ok else 'FAIL'}",
    ]
    (out / VALIDATE_TXT).write_text("\n".join(lines) + "\n")
    print("\n".join(lines[2:]))
    return ok
