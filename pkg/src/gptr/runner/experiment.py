"""Run configured experiments and write their output bundles.

A bundle is a directory holding ``config.json``, ``trace.csv`` (one row per
iteration), ``summary.json``, ``data.csv`` (every plant sample used by the
surrogate) and, for GP runs, ``model.json``. The reactor experiment adds
``batches.csv`` (per-batch cost, terminal concentrations, recipe and
scenario, next to the fixed model-based recipe) and ``profiles.csv`` (feed
profiles over time). Every file is a pure function of the config.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..baselines import run_local_tr
from ..certification import alpha_lower_bound
from ..gp import Dataset, fit
from ..kernel import Hyperparams
from ..problems import get_analytic
from ..problems.reactor import (
    ReactorParams,
    feed_profile,
    optimize_cost,
    reactor_problem,
    simulate_batch,
)
from ..trust_region import RunError, RunResult, TrConfig, run, write_trace_csv
from .config import ExperimentConfig, config_hash

__all__ = [
    "ExperimentResult",
    "build_problem",
    "run_experiment",
    "compare_modes",
    "write_comparison_csv",
    "reactor_assessment",
    "save_model",
    "load_model",
    "BATCH_COLUMNS",
    "COMPARISON_COLUMNS",
]

_log = logging.getLogger(__name__)

BATCH_COLUMNS = [
    "batch", "scenario", "t_m", "t_s", "F", "x_1", "x_2", "x_3", "cost", "measured_cost", "c_B", "c_D",
    "model_cost", "model_c_B", "model_c_D", "optimal_cost",
]
COMPARISON_COLUMNS = [
    "seed", "mode", "total_plant_evals", "best_plant_value", "evals_to_tolerance", "iterations_to_tolerance",
    "final_grad_norm",
]

# reactor defaults that differ from the generic problem factory
REACTOR_DEFAULTS = {
    "scale": 10.0,
    "noise_rel": 0.05,
    "cost_scale": 100.0,
    "switch_batch": 8,
    "n_batches": 22,
    "reference_maxiter": 200,
}


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    result: RunResult
    summary: dict
    batches: Optional[list] = None
    files: dict = field(default_factory=dict)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def build_problem(config: ExperimentConfig):
    """Instantiate the configured problem (reactor parameters fall back to :data:`REACTOR_DEFAULTS`)."""
    p = dict(config.problem.params)
    if config.problem.name == "reactor":
        o = {**REACTOR_DEFAULTS, **p}
        params = ReactorParams.from_dict(o.get("reactor", {}))
        switch = int(o["switch_batch"])

        def schedule(batch: int) -> str:
            if batch < 1:
                raise ValueError("batch indices start at 1")
            return "I" if batch < switch else "II"

        return reactor_problem(params, float(o["scale"]), float(o["noise_rel"]), schedule, float(o["cost_scale"]))
    return get_analytic(config.problem.name, **p)


def _tr_for(config: ExperimentConfig) -> TrConfig:
    tr = config.tr
    updates = {}
    if config.design.count is not None:
        updates["n_init"] = config.design.count
    if config.design.radius is not None:
        updates["init_radius"] = config.design.radius
    return replace(tr, **updates) if updates else tr


def _summary(config: ExperimentConfig, res: RunResult, problem) -> dict:
    s = res.summary()
    s.update(
        config_hash=config_hash(config),
        name=config.name,
        mode=config.mode,
        problem=config.problem.name,
        seed=config.seed,
        alpha_lower_bound=alpha_lower_bound(config.tr.gamma_inc, config.tr.gamma_dec),
    )
    if problem.has_oracle:
        reach = res.evals_to_reach(problem, 1e-2)
        s["evals_to_1e-2"] = reach
    return s


def _write_common(config: ExperimentConfig, res: RunResult, summary: dict, out: Path, dim: int) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    files = {"config": out / "config.json", "trace": out / "trace.csv", "summary": out / "summary.json"}
    cfg = config.to_dict()
    cfg["config_hash"] = config_hash(config)
    _dump_json(cfg, files["config"])
    write_trace_csv(res.trace, files["trace"], dim)
    _dump_json(summary, files["summary"])
    files["data"] = out / "data.csv"
    res.data.to_csv(files["data"])
    if res.theta is not None:
        files["model"] = out / "model.json"
        save_model(files["model"], res.data, res.theta, config.tr.surrogate_mode, config.problem.name)
    return files


def save_model(path, data: Dataset, theta, surrogate_mode: str = "direct", problem: Optional[str] = None) -> None:
    """Write the GP (training data plus hyperparameters) as JSON; refit with :func:`load_model`."""
    doc = {
        "problem": problem,
        "surrogate_mode": surrogate_mode,
        "hyperparams": theta.to_dict(),
        "inputs": data.inputs.tolist(),
        "outputs": data.outputs.tolist(),
    }
    _dump_json(doc, Path(path))


def load_model(path):
    """Rebuild a :class:`~gptr.gp.GpModel` saved by :func:`save_model`; returns ``(model, document)``."""
    doc = json.loads(Path(path).read_text())
    try:
        data = Dataset(np.asarray(doc["inputs"], dtype=float).reshape(len(doc["outputs"]), -1), doc["outputs"])
        theta = Hyperparams.from_dict(doc["hyperparams"])
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: not a saved model ({exc})") from None
    return fit(data, theta), doc


def run_experiment(config: ExperimentConfig, output_dir=None, write: bool = True) -> ExperimentResult:
    """Execute one configured experiment and (optionally) write its bundle.

    Raises
    ------
    RunError
        If the run fails; ``trace`` holds the iterations completed so far.
        The partial trace is written to ``trace.csv`` before re-raising.
    """
    out = Path(output_dir if output_dir is not None else config.output_dir)
    if config.problem.name == "reactor":
        return _run_reactor(config, out, write)
    problem = build_problem(config)
    tr = _tr_for(config)
    try:
        if config.mode == "gp":
            res = run(problem, tr, seed=config.seed)
        else:
            res = run_local_tr(problem, tr, config.mode, seed=config.seed)
    except RunError as exc:
        if write:
            out.mkdir(parents=True, exist_ok=True)
            write_trace_csv(exc.trace, out / "trace.csv", problem.dim)
        raise
    summary = _summary(config, res, problem)
    files = _write_common(config, res, summary, out, problem.dim) if write else {}
    return ExperimentResult(config, res, summary, None, files)


# -- reactor -------------------------------------------------------------------------------------------


def _reactor_design(problem, center, count: int, fraction: float, rng) -> np.ndarray:
    """The center plus ``count - 1`` uniform points in a box of half-width ``fraction * range``."""
    lo, hi = problem.bounds
    half = fraction * (hi - lo)
    X = center + rng.uniform(-1.0, 1.0, size=(count - 1, problem.dim)) * half
    return np.vstack([center, np.clip(X, lo, hi)])


def _terminal(problem, x, scenario) -> tuple[float, np.ndarray]:
    scaling = problem.info["scaling"]
    state = simulate_batch(scaling.to_arc(x), scaling.params, scenario)
    cost = float(problem.info["plants"][scenario](x))
    return cost, state


def _run_reactor(config: ExperimentConfig, out: Path, write: bool) -> ExperimentResult:
    o = {**REACTOR_DEFAULTS, **config.problem.params}
    problem = build_problem(config)
    schedule = problem.info["schedule"]
    n_batches = int(o["n_batches"])
    ref_iter = int(o["reference_maxiter"])
    lo, hi = problem.bounds

    # nominal model optimum: the recipe a purely model-based approach would apply every batch
    x_model, _ = optimize_cost(problem.nominal, (lo, hi), seed=0, maxiter=ref_iter)
    optima = {
        name: optimize_cost(plant, (lo, hi), seed=0, maxiter=ref_iter)
        for name, plant in problem.info["plants"].items()
    }

    count = config.design.count or 20
    X0 = _reactor_design(problem, x_model, count, config.design.box_fraction, np.random.default_rng([config.seed, 0]))
    noise_rng = np.random.default_rng([config.seed, 5])
    z0 = [problem.evaluate(x, noise_rng) for x in X0]
    initial = Dataset(X0, z0)

    tr = replace(config.tr, surrogate_mode="mismatch", max_iters=n_batches)
    try:
        res = run(problem, tr, initial_data=initial, x0=x_model, seed=config.seed)
    except RunError as exc:
        if write:
            out.mkdir(parents=True, exist_ok=True)
            write_trace_csv(exc.trace, out / "trace.csv", problem.dim)
        raise
    res.initial_evals = len(X0)

    scaling = problem.info["scaling"]
    rows = []
    for rec in res.trace:
        b = rec.k + 1
        scen = schedule(b)
        cost, state = _terminal(problem, rec.x, scen)
        mcost, mstate = _terminal(problem, x_model, scen)
        pi = scaling.to_arc(rec.x)
        rows.append({
            "batch": b, "scenario": scen, "t_m": pi.t_m, "t_s": pi.t_s, "F": pi.F,
            "x_1": rec.x[0], "x_2": rec.x[1], "x_3": rec.x[2],
            "cost": cost, "measured_cost": rec.plant_value_estimate,
            "c_B": float(state[1]), "c_D": float(state[3]),
            "model_cost": mcost, "model_c_B": float(mstate[1]), "model_c_D": float(mstate[3]),
            "optimal_cost": optima[scen][1],
        })

    summary = _summary(config, res, problem)
    summary["model_input"] = [float(v) for v in x_model]
    summary["plant_optima"] = {k: {"x": [float(v) for v in x], "cost": float(f)} for k, (x, f) in optima.items()}
    summary["switch_batch"] = int(o["switch_batch"])
    summary["assessment"] = reactor_assessment(rows, int(o["switch_batch"]))

    files = {}
    if write:
        files = _write_common(config, res, summary, out, problem.dim)
        files["batches"] = out / "batches.csv"
        with open(files["batches"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(BATCH_COLUMNS)
            for r in rows:
                w.writerow([r[c] if isinstance(r[c], (str, int)) else repr(float(r[c])) for c in BATCH_COLUMNS])
        files["profiles"] = out / "profiles.csv"
        final_x = res.trace[-1].x if res.trace else x_model
        _write_profiles(files["profiles"], scaling, {"gp_final": final_x, "model": x_model, **{f"optimal_{k}": v[0] for k, v in optima.items()}})
    return ExperimentResult(config, res, summary, rows, files)


def _write_profiles(path: Path, scaling, recipes: dict, n: int = 251) -> None:
    params = scaling.params
    t = np.linspace(0.0, params.t_f, n)
    arcs = {k: scaling.to_arc(x) for k, x in recipes.items()}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"F_{k}" for k in arcs])
        for ti in t:
            w.writerow([repr(float(ti))] + [repr(float(feed_profile(a, float(ti), params))) for a in arcs.values()])


def reactor_assessment(rows: Sequence[dict], switch_batch: int, tol: float = 0.05, within: int = 5) -> dict:
    """Recovery after the scenario switch.

    ``recovered_batch`` is the first batch at or after the switch whose
    noiseless plant cost is within ``tol`` (relative) of the plant optimum;
    ``recovered`` requires it no later than ``switch_batch + within``.
    ``outperforms_model`` requires a strictly lower cost than the fixed
    model-based recipe at every batch after the switch batch.
    """
    after = [r for r in rows if r["batch"] >= switch_batch]
    recovered_batch = None
    for r in after:
        if r["cost"] <= r["optimal_cost"] + tol * abs(r["optimal_cost"]):
            recovered_batch = r["batch"]
            break
    later = [r for r in rows if r["batch"] > switch_batch]
    return {
        "recovered_batch": recovered_batch,
        "recovered": recovered_batch is not None and recovered_batch <= switch_batch + within,
        "outperforms_model": bool(later) and all(r["cost"] < r["model_cost"] for r in later),
    }


# -- mode comparison ----------------------------------------------------------------------------------


def compare_modes(configs: Sequence[ExperimentConfig], tol: float = 1e-2, output_dir=None) -> list[dict]:
    """One row per config: evaluations, best value and evaluations to reach ``tol``.

    The configs must agree on everything except mode, name and output
    directory. Without a gradient oracle the accuracy columns are ``None``.
    """
    if not configs:
        return []
    ref = _comparable(configs[0])
    for c in configs[1:]:
        if _comparable(c) != ref:
            raise ValueError("compare_modes needs configs that differ only in mode")
    rows = []
    for c in configs:
        problem = build_problem(c)
        sub = None if output_dir is None else Path(output_dir) / f"{c.mode}_seed{c.seed}"
        res = run_experiment(c, sub, write=sub is not None).result
        row = {
            "seed": c.seed,
            "mode": c.mode,
            "total_plant_evals": res.total_plant_evals,
            "best_plant_value": res.best_plant_estimate,
            "evals_to_tolerance": None,
            "iterations_to_tolerance": None,
            "final_grad_norm": res.oracle_grad_norm,
        }
        if problem.has_oracle:
            row["evals_to_tolerance"] = res.evals_to_reach(problem, tol)
            row["iterations_to_tolerance"] = next(
                (r.k for r in res.trace if problem.grad_norm(r.x) < tol),
                len(res.trace) if res.oracle_grad_norm is not None and res.oracle_grad_norm < tol else None,
            )
        rows.append(row)
    return rows


def _comparable(c: ExperimentConfig) -> dict:
    d = c.to_dict()
    for k in ("mode", "name", "output_dir"):
        d.pop(k)
    return d


def write_comparison_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COMPARISON_COLUMNS)
        for r in rows:
            w.writerow(["" if r[c] is None else (repr(float(r[c])) if isinstance(r[c], float) else r[c]) for c in COMPARISON_COLUMNS])
