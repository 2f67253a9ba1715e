"""Experiment drivers behind the CLI: data generation, benchmark runs, tables.

Every function here is importable and returns plain objects; the CLI adds
argument parsing and output paths. All outputs embed the producing config and
seed, and rerunning with the same config and seed writes byte-identical
numeric content.
"""

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from functools import partial

import numpy as np

from . import acrobot, loop, metrics
from .models import TrueDynamics, make_model, save_model
from .planner import CemConfig, PlannerConfig, cem, random_shooting
from .trace import Trace

log = logging.getLogger(__name__)

_CI90 = 1.6448536269514722


def _ci90(values) -> float:
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return 0.0
    return float(_CI90 * values.std(ddof=1) / math.sqrt(len(values)))


def gen_random_data(
    variant: str, episodes: int, episode_len: int = 500, seed: int = 0
) -> Trace:
    """Episodes of uniform-random torques from near-hanging start states."""
    collected = []
    for e in range(episodes):
        rng = np.random.default_rng(np.random.SeedSequence([seed, e]))
        start = acrobot.reset(rng)
        tr = loop.run_episode(start, loop.random_policy(rng), episode_len, variant)
        collected.append((tr.obs, tr.act, tr.rew))
    return Trace.from_episodes(
        collected, variant,
        meta={"source": "random", "seed": seed, "episode_len": episode_len},
    )


def gen_linear_policy_data(
    variant: str,
    episodes: int,
    episode_len: int = 500,
    seed: int = 0,
    planner_config: PlannerConfig | None = None,
) -> Trace:
    """Episodes from the shooting policy built on a one-epoch linear model.

    Runs one learn/plan epoch (200 random steps, then a linear-Gaussian fit)
    and rolls the resulting fixed policy from fresh near-hanging starts.
    """
    config = planner_config or PlannerConfig(variant=variant)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x11EA4]))
    start = acrobot.reset(rng)
    warmup = loop.run_episode(start, loop.random_policy(rng), 200, variant)
    cond, targets = warmup.pairs()
    model = make_model("arlin", seed=seed).fit(cond, targets)

    collected = []
    for e in range(episodes):
        ep_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x11EA4, e]))
        ep_start = acrobot.reset(ep_rng)
        policy = loop.planning_policy(model, config, ep_rng)
        tr = loop.run_episode(ep_start, policy, episode_len, variant)
        collected.append((tr.obs, tr.act, tr.rew))
    return Trace.from_episodes(
        collected, variant,
        meta={"source": "linear_policy", "seed": seed, "episode_len": episode_len},
    )


GENERATORS = {"random": gen_random_data, "linear": gen_linear_policy_data}


def run_static(
    model_kinds: list,
    pool: Trace,
    test_trace: Trace,
    out_dir: str,
    folds: int = 10,
    seed: int = 0,
    horizon: int = 10,
    n_traces: int = 100,
    positions: int = 100,
    threads: int = 1,
    dataset: str = "",
    save_models: bool = False,
    model_overrides: dict | None = None,
) -> list:
    """Cross-validate each model kind and write per-model and combined tables."""
    os.makedirs(out_dir, exist_ok=True)
    config = {
        "models": list(model_kinds), "folds": folds, "seed": seed,
        "horizon": horizon, "n_traces": n_traces, "positions": positions,
        "dataset": dataset, "variant": test_trace.variant,
    }
    reports = []
    rows = []
    for kind in model_kinds:
        t0 = time.perf_counter()
        factory = partial(_make_seeded, kind, model_overrides or {})
        report = metrics.cross_validate(
            factory, pool, test_trace, k=folds, seed=seed, horizon=horizon,
            n_traces=n_traces, positions=positions, threads=threads,
            model_kind=kind, dataset=dataset,
        )
        reports.append(report)
        rows.extend(report.csv_rows())
        with open(os.path.join(out_dir, f"report_{kind}.json"), "w") as fh:
            payload = report.to_dict()
            payload["config"] = config
            fh.write(json.dumps(payload, indent=1, sort_keys=True))
        log.info(
            "static %-12s lr=%s or=%s r2=%s ks=%s r2_h=%s ks_h=%s (%.1fs)",
            kind, *[_fmt(report.mean.get(n)) for n in metrics.METRIC_NAMES],
            time.perf_counter() - t0,
        )
        if save_models:
            cond, targets = pool.pairs()
            full = _make_seeded(kind, model_overrides or {}, seed)
            full.fit(cond, targets)
            save_model(full, os.path.join(out_dir, f"model_{kind}.npz"))
    with open(os.path.join(out_dir, "static_table.csv"), "w") as fh:
        fh.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
        fh.write("model,dataset,variant,fold,metric,dim,value\n")
        fh.write("\n".join(rows) + "\n")
    return reports


def _fmt(v):
    return "-" if v is None else ("%.4g" % v)


def _make_seeded(kind: str, overrides: dict, seed: int):
    return make_model(kind, seed=seed, **overrides)


def _run_one_dynamic(args):
    (kind, variant, n_epochs, epoch_len, planner_config, seed, out_dir,
     overrides) = args
    factory = partial(_make_seeded, kind, overrides)
    run_dir = os.path.join(out_dir, f"run_{kind}_seed{seed}") if out_dir else None
    curve, _ = loop.run_mbrl(
        factory, variant, n_epochs, epoch_len, planner_config, seed=seed,
        out_dir=run_dir, model_kind=kind,
    )
    return curve


def run_dynamic(
    model_kinds: list,
    variant: str,
    out_dir: str,
    n_epochs: int = 100,
    epoch_len: int = 200,
    seeds: list | None = None,
    planner_config: PlannerConfig | None = None,
    mar_opt: float = loop.MAR_OPT,
    mar_ran: float = loop.MAR_RAN,
    threads: int = 1,
    model_overrides: dict | None = None,
) -> dict:
    """Learn/plan runs per model kind and seed; aggregates RMAR and MRCP(70)."""
    os.makedirs(out_dir, exist_ok=True)
    seeds = list(seeds if seeds is not None else range(3))
    config = {
        "models": list(model_kinds), "variant": variant, "epochs": n_epochs,
        "epoch_len": epoch_len, "seeds": seeds, "mar_opt": mar_opt,
        "mar_ran": mar_ran,
    }
    planner_config = planner_config or PlannerConfig(variant=variant)
    results = {"config": config, "models": {}}
    for kind in model_kinds:
        tasks = [
            (kind, variant, n_epochs, epoch_len, planner_config, s, out_dir,
             model_overrides or {})
            for s in seeds
        ]
        if threads > 1:
            with ProcessPoolExecutor(max_workers=threads) as pool_exec:
                curves = list(pool_exec.map(_run_one_dynamic, tasks))
        else:
            curves = [_run_one_dynamic(t) for t in tasks]
        mars = [loop.mar(c) for c in curves]
        rmars = [loop.rmar(m, mar_opt, mar_ran) for m in mars]
        mrcps = [loop.mrcp(c, 70.0, mar_opt, mar_ran) for c in curves]
        defined = [m for m in mrcps if m is not None]
        entry = {
            "seeds": seeds,
            "mar": mars,
            "rmar_mean": float(np.mean(rmars)),
            "rmar_ci90": _ci90(rmars),
            "mrcp_steps": mrcps,
            "mrcp_mean": float(np.mean(defined)) if defined else None,
            "mrcp_ci90": _ci90(defined) if defined else None,
            "curves": [list(map(float, c.mean_rewards)) for c in curves],
        }
        results["models"][kind] = entry
        log.info("dynamic %-12s RMAR %.3f +- %.3f, MRCP %s", kind,
                 entry["rmar_mean"], entry["rmar_ci90"], entry["mrcp_mean"])
    with open(os.path.join(out_dir, "dynamic_report.json"), "w") as fh:
        fh.write(json.dumps(results, indent=1, sort_keys=True))
    with open(os.path.join(out_dir, "curves.csv"), "w") as fh:
        fh.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
        fh.write("model,seed,epoch,steps_so_far,mean_reward\n")
        for kind in model_kinds:
            entry = results["models"][kind]
            for seed, curve in zip(entry["seeds"], entry["curves"]):
                for i, mr in enumerate(curve, start=1):
                    fh.write("%s,%d,%d,%d,%.17g\n" % (kind, seed, i, i * epoch_len, mr))
    return results


def compare_planners(
    variant: str = acrobot.RAW,
    rollouts: int = 100,
    episode_len: int = 200,
    rs_populations: tuple = (100, 500, 1000),
    cem_totals: tuple = (500, 1000),
    seed: int = 0,
    horizon: int = 10,
    out_path: str | None = None,
) -> dict:
    """Mean episode reward of RS and CEM on the true dynamics, with 90% CIs."""
    oracle = TrueDynamics(variant)
    cells = [("rs", n) for n in rs_populations] + [("cem", n) for n in cem_totals]
    config = {
        "variant": variant, "rollouts": rollouts, "episode_len": episode_len,
        "seed": seed, "horizon": horizon,
    }
    table = {"config": config, "cells": []}
    algo_ids = {"rs": 1, "cem": 2}
    for algo, n in cells:
        t0 = time.perf_counter()
        vals = []
        for r in range(rollouts):
            rng = np.random.default_rng(np.random.SeedSequence([seed, algo_ids[algo], n, r]))
            start = acrobot.reset(rng)
            if algo == "rs":
                cfg = PlannerConfig(horizon=horizon, population=n, variant=variant)
                policy = loop.planning_policy(oracle, cfg, rng)
            else:
                cfg = PlannerConfig(
                    horizon=horizon, variant=variant,
                    cem=CemConfig(total_samples=n),
                )
                policy = _cem_policy(oracle, cfg, rng)
            vals.append(
                loop.run_episode(start, policy, episode_len, variant).mean_reward()
            )
        cell = {
            "planner": algo, "n": n, "mean": float(np.mean(vals)),
            "ci90": _ci90(vals), "seconds": time.perf_counter() - t0,
        }
        table["cells"].append(cell)
        log.info("planner %s n=%d: %.3f +- %.3f (%.0fs)", algo, n, cell["mean"],
                 cell["ci90"], cell["seconds"])
    if out_path:
        with open(out_path, "w") as fh:
            fh.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
            fh.write("planner,n,mean,ci90\n")
            for cell in table["cells"]:
                fh.write("%s,%d,%.17g,%.17g\n" % (cell["planner"], cell["n"],
                                                  cell["mean"], cell["ci90"]))
    return table


def _cem_policy(model, config, rng):
    def policy(obs):
        return cem(model, acrobot.featurize(obs, config.variant), config, rng)

    return policy


def simulate_futures(
    model,
    trace: Trace,
    episode: int,
    start_step: int,
    n_traces: int = 100,
    horizon: int = 10,
    seed: int = 0,
    context_steps: int = 20,
):
    """Ground truth plus n simulated futures replaying the logged actions.

    Returns (truth_steps, truth_obs, sims) where sims has shape
    (n, horizon, d_y) holding the simulated observables at steps
    start_step+1 .. start_step+horizon.
    """
    sub = trace.select_episodes([episode])
    if sub.n_steps == 0:
        raise ValueError(f"episode {episode} not found")
    if not 0 <= start_step or start_step + horizon >= sub.n_steps:
        raise ValueError(
            f"start step {start_step} with horizon {horizon} exceeds the "
            f"{sub.n_steps}-step episode"
        )
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF07]))
    reps = 1 if model.is_deterministic else n_traces
    obs = np.tile(sub.obs[start_step], (reps, 1))
    ctx = model.start_trajectory(reps, rng)
    sims = np.empty((reps, horizon, sub.d_y))
    with np.errstate(all="ignore"):
        for i in range(horizon):
            feats = acrobot.featurize_batch(obs, sub.variant)
            cond = np.column_stack([feats, np.full(reps, sub.act[start_step + i])])
            obs = model.sample(cond, rng, ctx)
            sims[:, i, :] = obs
    lo = max(0, start_step - context_steps)
    hi = start_step + horizon + 1
    truth_steps = np.arange(lo, hi)
    return truth_steps, sub.obs[lo:hi], sims


def write_futures_csv(path, truth_steps, truth_obs, sims, start_step, config):
    d = truth_obs.shape[1]
    ys = ",".join(f"y{j + 1}" for j in range(d))
    with open(path, "w") as fh:
        fh.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
        fh.write(f"series,traj,step,{ys}\n")
        for t, row in zip(truth_steps, truth_obs):
            fh.write("truth,-1,%d,%s\n" % (t, ",".join("%.17g" % v for v in row)))
        for k in range(sims.shape[0]):
            for i in range(sims.shape[1]):
                fh.write(
                    "sim,%d,%d,%s\n"
                    % (k, start_step + 1 + i,
                       ",".join("%.17g" % v for v in sims[k, i]))
                )


def write_endpoints_csv(path, sims, config):
    d = sims.shape[2]
    ys = ",".join(f"y{j + 1}" for j in range(d))
    with open(path, "w") as fh:
        fh.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
        fh.write(f"traj,{ys}\n")
        for k in range(sims.shape[0]):
            fh.write("%d,%s\n" % (k, ",".join("%.17g" % v for v in sims[k, -1])))


def calibrate(
    variant: str = acrobot.RAW,
    rollouts: int = 50,
    episode_len: int = 200,
    planner_config: PlannerConfig | None = None,
    seed: int = 0,
) -> dict:
    """Recompute the planner ceiling and random floor on the local build."""
    config = planner_config or PlannerConfig(variant=variant)
    oracle = TrueDynamics(variant)
    opt_vals, ran_vals = [], []
    for r in range(rollouts):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xCA1, r]))
        start = acrobot.reset(rng)
        policy = loop.planning_policy(oracle, config, rng)
        opt_vals.append(loop.run_episode(start, policy, episode_len, variant).mean_reward())
        rng2 = np.random.default_rng(np.random.SeedSequence([seed, 0xCA2, r]))
        start2 = acrobot.reset(rng2)
        ran_vals.append(
            loop.run_episode(start2, loop.random_policy(rng2), episode_len, variant)
            .mean_reward()
        )
    return {
        "config": {
            "variant": variant, "rollouts": rollouts, "episode_len": episode_len,
            "seed": seed, "population": config.population, "horizon": config.horizon,
        },
        "mar_opt": float(np.mean(opt_vals)),
        "mar_opt_ci90": _ci90(opt_vals),
        "mar_ran": float(np.mean(ran_vals)),
        "mar_ran_ci90": _ci90(ran_vals),
    }
