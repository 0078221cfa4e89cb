"""Build a problem, topology and algorithm from a config, run it, and write artifacts."""
import json
import logging
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import kernels
from .config import parse_config
from .datagen import SynthSpec, generate_synthetic
from .diagnostics import (CSV_COLUMNS, Diagnostics, IterateTrace, check_stepsizes,
                          derive_constants, theory_stepsizes)
from .errors import ComparisonError, ConfigError, DBOError, DivergenceError
from .fileio import atomic_write
from .mixing import build_ring_mixing, complete_mixing, load_mixing, single_agent
from .oracles import LogisticHyperOpt, load_agent_datasets, random_quadratic, save_agent_datasets
from .sldbo import StepSizes, run
from .soba import run_soba

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3


def build_problem(cfg):
    """Returns (problem, datasets or None)."""
    n, p = cfg.resolved_n_agents(), cfg.resolved_dim()
    if cfg.problem == "quadratic":
        return random_quadratic(n=n, p=p, q=cfg.dim_lower, seed=cfg.seed, coupling=cfg.coupling), None
    if cfg.problem == "logistic-synthetic":
        spec = SynthSpec(n_agents=n, dim=p, samples_per_agent=cfg.samples,
                         heterogeneity=cfg.heterogeneity, seed=cfg.seed)
        datasets = generate_synthetic(spec)
    else:
        datasets = load_agent_datasets(cfg.data_dir)
    return LogisticHyperOpt(datasets, reduction=cfg.loss_reduction), datasets


def build_topology(cfg, n):
    if cfg.algorithm == "soba" or n == 1:
        if cfg.algorithm == "soba" and n > 1:
            warnings.warn("soba runs on the averaged problem; topology settings are ignored",
                          stacklevel=2)
        return single_agent()
    if cfg.topology == "ring":
        return build_ring_mixing(n, cfg.self_weight)
    if cfg.topology == "complete":
        return complete_mixing(n)
    W = load_mixing(cfg.matrix_file)
    if W.n != n:
        raise ConfigError(f"matrix has {W.n} rows but there are {n} agents", key="matrix_file")
    return W


def problem_constants(problem, cfg=None):
    """The five assumption constants, from the family's own recipe."""
    if hasattr(problem, "default_region"):
        return problem.lipschitz_constants(*problem.default_region())
    box = (-2.0, 2.0) if cfg is None else (cfg.lambda_lo, cfg.lambda_hi)
    return problem.lipschitz_constants(box)


def f_star_for(problem):
    """F* where it is cheap to obtain (closed form), else None."""
    if hasattr(problem, "minimizer"):
        return problem.minimizer()[1]
    return None


def choose_stepsizes(cfg, ledger):
    if cfg.stepsize_rule == "theory":
        if cfg.algorithm == "soba":
            raise ConfigError("theory stepsizes are defined for the decentralized method only",
                              key="stepsize_rule")
        return theory_stepsizes(ledger, cfg.theory_fraction)
    return StepSizes(alpha=cfg.alpha, beta=cfg.beta, eta=cfg.eta)


def summarize(trace, cfg, ledger, steps, bounds, satisfied, r_v, rho, wall, error, truth_failures=0):
    last = trace.rows[-1] if trace.rows else {}
    out = {
        "status": "ok" if error is None else "error",
        "error": None if error is None else f"{type(error).__name__}: {error}",
        "algorithm": cfg.algorithm,
        "problem": cfg.problem,
        "seed": cfg.seed,
        "rounds": cfg.rounds,
        "rows": len(trace),
        "wall_time_s": wall,
        "backend": kernels.active.NAME if cfg.deterministic else "blas",
        "rho": rho,
        "r_v": r_v,
        "stepsizes": None if steps is None else {"alpha": steps.alpha, "beta": steps.beta, "eta": steps.eta},
        "stepsize_bounds": bounds,
        "stepsizes_satisfy_theory": satisfied,
        "ledger": None if ledger is None else ledger.as_dict(),
        "final_stat_sq": trace.last("stat_sq"),
        "min_stat_sq": trace.min_stationarity(),
        "final_cons_x": last.get("cons_x"),
        "final_cons_y": last.get("cons_y"),
        "final_cons_v": last.get("cons_v"),
        "final_lyapunov": trace.last("lyapunov"),
        "final_train_loss": trace.last("train_loss"),
        "final_test_loss": trace.last("test_loss"),
        "final_accuracy": trace.last("accuracy"),
        "truth_failures": truth_failures,
    }
    return out


def run_experiment(cfg):
    """Run one config in memory. Returns (trace, summary dict, exit code)."""
    t0 = time.perf_counter()
    trace, ledger, steps, bounds, satisfied, r_v, rho = IterateTrace(), None, None, None, None, None, None
    diag = None
    error = None
    try:
        problem, datasets = build_problem(cfg)
        if cfg.save_data and datasets is not None:
            save_agent_datasets(cfg.save_data, datasets)
        W = build_topology(cfg, problem.n)
        rho = W.rho
        consts = problem_constants(problem, cfg)
        ledger = derive_constants(rho=rho, **consts)
        steps = choose_stepsizes(cfg, ledger)
        satisfied, bounds = check_stepsizes(ledger, steps)
        if cfg.enforce_theory and not satisfied:
            raise ConfigError(f"stepsizes {steps} violate the theory bounds {bounds}",
                              key="enforce_theory")
        r_v = ledger.r_v if cfg.r_v is None else cfg.r_v
        F_star = f_star_for(problem)
        diag = Diagnostics(problem, cfg.rounds, ledger=ledger, steps=steps, F_star=F_star,
                           truth_every=cfg.truth_every)
        if cfg.algorithm == "soba":
            trace = run_soba(problem, steps, cfg.rounds, r_v=r_v, hooks=[diag], on_divergence="truncate")
        else:
            trace = run(problem, W, steps, r_v, cfg.rounds, projection=cfg.algorithm == "sldbo",
                        hooks=[diag], deterministic=cfg.deterministic, on_divergence="truncate")
        error = trace.error
    except DBOError as exc:
        error = exc
        trace = getattr(exc, "trace", trace)
    wall = time.perf_counter() - t0
    summary = summarize(trace, cfg, ledger, steps, bounds, satisfied, r_v, rho, wall, error,
                        0 if diag is None else diag.truth_failures)
    if error is None:
        code = EXIT_OK
    elif isinstance(error, DivergenceError):
        code = EXIT_DIVERGED
    else:
        code = EXIT_ERROR
    summary["exit_code"] = code
    return trace, summary, code


def write_artifacts(out_dir, trace, summary, jsonl=False):
    os.makedirs(out_dir, exist_ok=True)
    trace.write_csv(os.path.join(out_dir, "trace.csv"))
    if jsonl:
        trace.write_jsonl(os.path.join(out_dir, "trace.jsonl"))
    atomic_write(os.path.join(out_dir, "summary.json"), json.dumps(summary, indent=2, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def execute(cfg, out_dir=None):
    """Run ``cfg`` and write trace.csv and summary.json under ``out_dir`` (default ``cfg.out``).

    Returns the exit status: 0 on success, nonzero when any module reported an error.
    """
    out_dir = cfg.out if out_dir is None else out_dir
    trace, summary, code = run_experiment(cfg)
    write_artifacts(out_dir, trace, summary, cfg.jsonl)
    if code != EXIT_OK:
        log.error("run failed: %s", summary["error"])
    return code


# --------------------------------------------------------------------------
# comparisons


def _run_named(args):
    name, cfg, out_dir = args
    trace, summary, code = run_experiment(cfg)
    write_artifacts(os.path.join(out_dir, name), trace, summary, cfg.jsonl)
    return name, trace, summary, code


def _unique_names(paths):
    names, seen = [], {}
    for p in paths:
        base = os.path.splitext(os.path.basename(str(p)))[0] or "run"
        seen[base] = seen.get(base, 0) + 1
        names.append(base if seen[base] == 1 else f"{base}-{seen[base]}")
    return names


def first_reach(trace, column, threshold, above=True):
    """First round whose ``column`` is >= threshold (``above``) or <= threshold, else None."""
    for k, val in trace.series(column):
        if (val >= threshold) if above else (val <= threshold):
            return k
    return None


def compare(configs, out_dir, names=None, accuracy_thresholds=(0.8, 0.9, 0.95),
            loss_thresholds=(), stat_thresholds=(), parallel=1):
    """Run several configs sharing a problem seed and write aligned columns.

    ``configs`` holds paths or parsed configs. Writes ``compare.csv`` (round
    plus ``<run>.<metric>`` columns) and ``compare.json`` (per-run summaries
    and the first round each threshold is reached). Returns (table, report).
    """
    if not configs:
        raise ComparisonError("compare needs at least two configs, got none")
    if names is None:
        names = _unique_names([c if isinstance(c, str) else f"run{i}" for i, c in enumerate(configs)])
    cfgs = [parse_config(c) if isinstance(c, str) else c for c in configs]
    if len(cfgs) < 2:
        raise ComparisonError("compare needs at least two configs")
    seeds = {c.seed for c in cfgs}
    if len(seeds) > 1:
        raise ComparisonError(f"configs use different problem seeds: {sorted(seeds)}")
    jobs = [(name, cfg, out_dir) for name, cfg in zip(names, cfgs)]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_run_named, jobs))
    else:
        results = [_run_named(j) for j in jobs]

    metrics = CSV_COLUMNS[1:]
    length = max(len(tr) for _, tr, _, _ in results)
    table = {"k": list(range(length))}
    for name, tr, _, _ in results:
        by_k = {r["k"]: r for r in tr.rows}
        for m in metrics:
            table[f"{name}.{m}"] = [by_k.get(k, {}).get(m) for k in range(length)]
    report = {"runs": {}}
    for name, tr, summary, code in results:
        reach = {}
        for t in accuracy_thresholds:
            reach[f"accuracy>={t}"] = first_reach(tr, "accuracy", t)
        for t in loss_thresholds:
            reach[f"test_loss<={t}"] = first_reach(tr, "test_loss", t, above=False)
        for t in stat_thresholds:
            reach[f"stat_sq<={t}"] = first_reach(tr, "stat_sq", t, above=False)
        report["runs"][name] = {"exit_code": code, "summary": summary, "first_reach": reach}
    os.makedirs(out_dir, exist_ok=True)
    cols = list(table)
    lines = [",".join(cols)]
    for i in range(length):
        lines.append(",".join(_cell(table[c][i]) for c in cols))
    atomic_write(os.path.join(out_dir, "compare.csv"), "\n".join(lines) + "\n")
    atomic_write(os.path.join(out_dir, "compare.json"), json.dumps(report, indent=2, default=_json_default) + "\n")
    return table, report


def _cell(val):
    if val is None:
        return ""
    if isinstance(val, (int, np.integer)):
        return str(int(val))
    val = float(val)
    return repr(val) if math.isfinite(val) else ""
