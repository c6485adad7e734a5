"""Sweep orchestration and artifact persistence for the command line."""

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .algorithms import (
    FBConfig,
    FCConfig,
    ablation_individual_allocation,
    baseline_independent_fb,
    baseline_independent_fc,
    baseline_uniform_fb,
    coop_kernel_fb,
    coop_kernel_fc,
    fb_xi_star,
)
from .config import dump_config
from .design import SolverOptions
from .diagnostics import capacity_chain
from .protocol import CSV_FIELDS, InstanceConfig, _jsonable, generate_instance
from .validation import CoopKernelError

POINT_FIELDS = ["regime", "param", "value", "algorithm_key"]
DIAG_FIELDS = ["diag_xi_star", "rho_star", "upsilon", "d_eff", "rank_K"]
RESULT_FIELDS = POINT_FIELDS + CSV_FIELDS + DIAG_FIELDS

# per-process memo so every worker builds each instance (and its design cache) once
_INSTANCES = {}


class RunAborted(Exception):
    def __init__(self, point, seed, cause):
        super().__init__(f"run aborted at {point} seed {seed}: {cause}")
        self.cause = cause


def instance_config(data, regime, value):
    inst = data["instance"]
    delta_min = value if data["experiment"]["mode"] == "fc" else inst["delta_min"]
    return InstanceConfig(
        V=inst["V"], d=inst["d"], n=inst["n"], delta_min=float(delta_min),
        theta_start=inst["theta_start"], arm_set=inst["arm_set"], task_regime=regime,
        n_blocks=inst["n_blocks"], block_coupling=inst["block_coupling"],
        task_table=inst.get("task_table"), arm_kernel=inst["arm_kernel"],
        bandwidth=inst["bandwidth"], noise_std=inst["noise_std"], seed=inst["instance_seed"])


def get_instance(data, regime, value):
    icfg = instance_config(data, regime, value)
    key = json.dumps(_jsonable(vars(icfg)), sort_keys=True)
    if key not in _INSTANCES:
        _INSTANCES[key] = generate_instance(icfg)
    return _INSTANCES[key]


def solver_options(data):
    return SolverOptions(**data["solver"])


def fc_config(data):
    fc = data["fc"]
    return FCConfig(delta=fc["delta"], B=fc.get("B"), eps=fc["eps"],
                    solver=solver_options(data), max_samples=fc["max_samples"])


def fb_config(data, T):
    fb = data["fb"]
    return FBConfig(T=T, xi_star=fb["xi_star"], eps=fb["eps"], B=fb.get("B"),
                    solver=solver_options(data), max_samples=fb["max_samples"])


def run_algorithm(data, instance, algo, value, seed):
    if data["experiment"]["mode"] == "fc":
        cfg = fc_config(data)
        if algo == "coop":
            return coop_kernel_fc(instance, cfg, seed)
        if algo == "indalloc":
            return ablation_individual_allocation(instance, cfg, "fc", seed)
        return baseline_independent_fc(instance, cfg, seed)
    T = int(value)
    cfg = fb_config(data, T)
    if algo == "coop":
        return coop_kernel_fb(instance, cfg, seed)
    if algo == "indalloc":
        return ablation_individual_allocation(instance, cfg, "fb", seed)
    if algo == "independent":
        return baseline_independent_fb(instance, cfg, seed)
    return baseline_uniform_fb(instance, T, seed)


def run_task(task):
    """Worker entry: every configured algorithm for one (point, seed)."""
    data, regime, value, seed = task
    instance = get_instance(data, regime, value)
    out = []
    for algo in data["experiment"]["algorithms"]:
        try:
            report = run_algorithm(data, instance, algo, value, seed)
        except CoopKernelError as exc:
            return out, f"{regime}/{value}/{algo}", seed, f"{type(exc).__name__}: {exc}"
        row = {"regime": regime, "param": _param(data), "value": repr(value),
               "algorithm_key": algo}
        row.update(report.csv_row())
        out.append((row, report.to_dict()))
        if not report.complete:
            return out, f"{regime}/{value}/{algo}", seed, "; ".join(dict.fromkeys(report.warnings))
    return out, None, seed, None


def _param(data):
    return "delta_min" if data["experiment"]["mode"] == "fc" else "T"


def point_diagnostics(data, regime, value, reports):
    """Diagnostics block for one grid point (empty when disabled)."""
    if not data["diagnostics"]["enabled"]:
        return {}
    instance = get_instance(data, regime, value)
    xi = data["diagnostics"]["xi_star"]
    if xi == "auto":
        if data["experiment"]["mode"] == "fb":
            xi = fb_config(data, 1).resolve(instance).xi_star
        else:
            seen = [p["xi"] for r in reports for p in r["phase_trace"]]
            xi = min(seen) if seen else 1.0
    key = ("diagnostics", float(xi))
    if key not in instance.cache:
        instance.cache[key] = capacity_chain(instance, float(xi), solver_options(data))
    return instance.cache[key]


def _diag_columns(diag):
    if not diag:
        return {k: "" for k in DIAG_FIELDS}
    return {"diag_xi_star": repr(float(diag["xi_star"])), "rho_star": repr(float(diag["rho_star"])),
            "upsilon": repr(float(diag["upsilon"])), "d_eff": diag["d_eff"],
            "rank_K": diag["rank_K"]}


def plan(cfg):
    points = cfg.points()
    seeds = cfg.seeds()
    algos = cfg.data["experiment"]["algorithms"]
    return {
        "name": cfg.data["experiment"]["name"],
        "mode": cfg.mode,
        "param": cfg.grid_param,
        "values": cfg.grid_values(),
        "regimes": cfg.data["instance"]["task_regimes"],
        "algorithms": algos,
        "points": len(points),
        "seeds_per_point": len(seeds),
        "total_runs": len(points) * len(seeds) * len(algos),
    }


def _point_name(regime, param, value):
    return f"{regime}_{param}{value:g}".replace("+", "")


def run_experiment(cfg, out_dir, workers=1):
    """Run every (point, seed), write artifacts under ``out_dir``.

    Rows reach ``results.csv`` in task order through this single writer, so
    the file is identical for any worker count.  Raises :class:`RunAborted`
    after persisting everything finished so far.
    """
    out = Path(out_dir)
    (out / "reports").mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.toml").write_text(dump_config(cfg))
    data = cfg.data
    seeds = cfg.seeds()
    tasks = [(data, r, v, s) for r, v in cfg.points() for s in seeds]
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    results = pool.map(run_task, tasks) if pool else map(run_task, tasks)
    abort = None
    try:
        with open(out / "results.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=RESULT_FIELDS, lineterminator="\n")
            writer.writeheader()
            buffer, reports = [], []
            for k, (rows, failed, seed, cause) in enumerate(results):
                _, regime, value, _ = tasks[k]
                buffer.extend(r for r, _ in rows)
                reports.extend(d for _, d in rows)
                last = (k + 1) % len(seeds) == 0
                if failed:
                    abort = RunAborted(failed, seed, cause)
                if last or abort:
                    diag = {} if abort else point_diagnostics(data, regime, value, reports)
                    for row in buffer:
                        row.update(_diag_columns(diag))
                        writer.writerow(row)
                    fh.flush()
                    _write_point(out, cfg, regime, value, reports, diag, complete=not abort)
                    buffer, reports = [], []
                if abort:
                    break
    finally:
        if pool:
            pool.shutdown(cancel_futures=True)
    if abort:
        raise abort
    return out


def _write_point(out, cfg, regime, value, reports, diag, complete):
    name = _point_name(regime, cfg.grid_param, value)
    doc = {"regime": regime, "param": cfg.grid_param, "value": value,
           "complete": complete, "diagnostics": diag, "runs": reports}
    (out / "reports" / f"{name}.json").write_text(
        json.dumps(_jsonable(doc), indent=1, sort_keys=True) + "\n")


def diagnose(cfg):
    """Diagnostics for every instance of the sweep, without running algorithms."""
    data = cfg.data
    blocks = []
    seen = set()
    for regime, value in cfg.points():
        instance = get_instance(data, regime, value)
        if instance.name in seen:
            continue
        seen.add(instance.name)
        xi = data["diagnostics"]["xi_star"]
        if xi == "auto":
            if cfg.mode == "fb":
                xi = fb_config(data, 1).resolve(instance).xi_star
            else:
                B = data["fc"].get("B") or instance.theta_norm
                xi = fb_xi_star(instance, data["fc"]["eps"], B)
        block = capacity_chain(instance, float(xi), solver_options(data))
        block = dict(block, instance=instance.name, regime=regime)
        blocks.append(block)
    return blocks
