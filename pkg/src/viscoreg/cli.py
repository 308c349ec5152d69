"""Command line entry point: ``viscoreg <verb> [--config FILE] [flags]``.

Every verb writes its outputs and a ``manifest.json`` (resolved config,
seed, input and output hashes) into ``--out-dir``. Exit status is 0 on
success, 2 for invalid input or configuration and 3 for runtime failures.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .config import ConfigError, config_hash, describe_keys, file_hash, jsonable, load_config
from .data import check_ratios, read_jsonl, relabel, write_jsonl
from .evaluation import (AblationConfig, ablate, evaluate, export_geometry, make_tasks, summarize,
                         write_eval_csv, write_report_csv)
from .maze import generate_dataset, resolve_maze
from .value import REGULARIZERS, GoalValueEstimator, TrainingError, bellman_residual, closed_form_table, \
    load_checkpoint, save_checkpoint, write_loss_csv

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3
log = logging.getLogger("viscoreg")


class _Run:
    """Output directory bookkeeping for one command."""

    def __init__(self, command, cfg):
        self.command = command
        self.cfg = cfg
        self.out = cfg["run"]["out_dir"]
        os.makedirs(self.out, exist_ok=True)
        self.inputs = {}
        self.outputs = []

    def path(self, name):
        self.outputs.append(name)
        return os.path.join(self.out, name)

    def add_input(self, label, path):
        self.inputs[label] = {"path": str(path), "sha256": file_hash(path)}

    def write_json(self, name, doc):
        with open(self.path(name), "w", encoding="utf-8", newline="\n") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1, allow_nan=True)
            fh.write("\n")

    def finish(self, status="ok"):
        outputs = {}
        for name in sorted(set(self.outputs)):
            p = os.path.join(self.out, name)
            if os.path.isfile(p):
                outputs[name] = file_hash(p)
        doc = {"command": self.command, "version": __version__, "status": status,
               "seed": self.cfg["run"]["seed"], "config": jsonable(self.cfg),
               "config_sha256": config_hash(self.cfg), "inputs": self.inputs, "outputs": outputs}
        with open(os.path.join(self.out, "manifest.json"), "w", encoding="utf-8", newline="\n") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1)
            fh.write("\n")


def _maze(run: _Run):
    name = run.cfg["maze"]["name"]
    maze = resolve_maze(name)
    if os.path.isfile(name):
        run.add_input("maze", name)
    return maze


def _dataset_from_config(cfg, maze):
    d = cfg["data"]
    check_ratios(d["ratios"])
    trajs = generate_dataset(maze, d["behavior"], d["n_traj"], d["traj_len"], cfg["run"]["seed"],
                             d["epsilon"], d["starts"])
    return relabel(trajs, d["ratios"], d["gamma_geom"], d["n_samples"], cfg["run"]["seed"], maze)


def _load_dataset(run, path, maze):
    if not os.path.isfile(path):
        raise FileNotFoundError(f"dataset not found: {path}")
    run.add_input("dataset", path)
    return read_jsonl(path).validate(maze)


# verbs --------------------------------------------------------------------------------

def cmd_gen_data(cfg) -> int:
    run = _Run("gen-data", cfg)
    check_ratios(cfg["data"]["ratios"])
    maze = _maze(run)
    ds = _dataset_from_config(cfg, maze)
    write_jsonl(ds, run.path("dataset.jsonl"), maze)
    log.info("wrote %d transitions", len(ds))
    run.finish()
    return EXIT_OK


def _estimator(t, maze, seed):
    reg = t["regularizer"].strip().lower()
    if reg not in REGULARIZERS:
        parts = {p.strip() for p in reg.replace("+", ",").split(",")}
        if {"fk", "eikonal"} <= parts:
            raise ConfigError("fk and eikonal regularizers cannot be combined in one run")
        raise ConfigError(f"[train] regularizer must be one of {REGULARIZERS}, got {reg!r}")
    if t["checkpoint_every"] < 0 or (t["checkpoint_every"] and t["checkpoint_every"] % t["log_every"]):
        raise ConfigError("[train] checkpoint_every must be a multiple of log_every")
    return GoalValueEstimator(maze, gamma=t["gamma"], kappa=t["kappa"], lr=t["lr"], batch_size=t["batch_size"],
                              n_steps=t["n_steps"], regularizer=reg, lam=t["lam"], nu=t["nu"], dt=t["dt"],
                              k=t["k"], q=t["q"], speed=t["speed"], target_rate=t["target_rate"],
                              log_every=t["log_every"], random_state=seed)


def cmd_train(cfg) -> int:
    run = _Run("train", cfg)
    t = cfg["train"]
    maze = _maze(run)
    est = _estimator(t, maze, cfg["run"]["seed"])
    est._configs()
    ds = _load_dataset(run, t["dataset"] or os.path.join(run.out, "dataset.jsonl"), maze)
    every = t["checkpoint_every"]

    def periodic(step, e):
        if every and step % every == 0 and step < e.n_steps:
            e.save(run.path(f"checkpoint_{step:07d}.json"))

    try:
        est.fit(ds, callback=periodic)
    except TrainingError:
        # the failing step leaves the table untouched, so it is the last good state
        save_checkpoint(run.path("checkpoint_last_good.json"), est.values_, maze,
                        {"step": int(getattr(est, "n_steps_done_", 0)), "status": "aborted"})
        write_loss_csv(run.path("losses.csv"), est.loss_history_)
        run.finish("failed")
        raise
    est.save(run.path("checkpoint.json"))
    est.write_losses(run.path("losses.csv"))
    last = est.loss_history_[-1] if est.loss_history_ else (0, 0.0, 0.0, 0.0)
    exact = closed_form_table(maze, t["gamma"])
    covered = np.isfinite(exact)
    metrics = {"steps": est.n_steps_done_, "td_loss": last[1], "phy_loss": last[2], "eik_loss": last[3],
               "max_abs_error_vs_closed_form": float(np.max(np.abs(est.values_ - exact)[covered])),
               "bellman_residual": bellman_residual(est.values_, maze, ds, t["gamma"])}
    run.write_json("metrics.json", metrics)
    log.info("trained %d steps, max error vs closed form %.3g", metrics["steps"],
             metrics["max_abs_error_vs_closed_form"])
    run.finish()
    return EXIT_OK


def cmd_eval(cfg) -> int:
    run = _Run("eval", cfg)
    e = cfg["eval"]
    maze = _maze(run)
    path = e["checkpoint"] or os.path.join(run.out, "checkpoint.json")
    if not os.path.isfile(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    run.add_input("checkpoint", path)
    table, _ = load_checkpoint(path, maze)
    tasks = make_tasks(maze, e["n_tasks"], e["task_seed"])
    res = evaluate(table, maze, tasks, e["max_steps"])
    write_eval_csv(res, run.path("eval.csv"))
    scores = {}
    for g in e["geometry_goals"]:
        prefix = f"geometry_g{g}"
        for suffix in ("field", "mask", "quiver"):
            run.path(f"{prefix}_{suffix}.csv")
        scores[str(g)] = export_geometry(table, maze, g, os.path.join(run.out, prefix))["alignment_score"]
    run.write_json("metrics.json", {"success_rate": res.success_rate, "mean_steps": res.mean_steps,
                                    "n_tasks": len(tasks), "alignment_score": scores})
    log.info("success rate %.3f on %d tasks", res.success_rate, len(tasks))
    run.finish()
    return EXIT_OK


def cmd_oracle(cfg) -> int:
    from . import oracle

    run = _Run("oracle", cfg)
    metrics, files = oracle.run_oracle(cfg["oracle"], cfg["run"]["seed"], run.out)
    run.outputs.extend(files)
    run.write_json("metrics.json", metrics)
    if metrics["failed"]:
        run.finish("partial")
        for stage, msg in metrics["failed"].items():
            log.error("%s failed: %s", stage, msg)
        return EXIT_RUNTIME
    run.finish()
    return EXIT_OK


def cmd_ablate(cfg, parallel=1) -> int:
    run = _Run("ablate", cfg)
    a = cfg["ablate"]
    maze = _maze(run)
    if a["dataset"]:
        ds = _load_dataset(run, a["dataset"], maze)
    else:
        ds = _dataset_from_config(cfg, maze)
    if a["n_seeds"] < 1:
        raise ConfigError("[ablate] n_seeds must be >= 1")
    seed = cfg["run"]["seed"]
    acfg = AblationConfig(nu=a["nu"], k=a["k"], k_grid=a["k_grid"], nu_grid=a["nu_grid"],
                          seeds=tuple(range(seed, seed + a["n_seeds"])), lam=a["lam"], dt=a["dt"], q=a["q"],
                          gamma=a["gamma"], lr=a["lr"], batch_size=a["batch_size"], n_steps=a["n_steps"],
                          n_tasks=a["n_tasks"], task_seed=a["task_seed"],
                          n_variance_pairs=a["n_variance_pairs"], n_repeats=a["n_repeats"])
    rows = ablate(maze, ds, acfg, parallel=parallel, out_dir=os.path.join(run.out, "runs"))
    write_report_csv(rows, run.path("report.csv"))
    summary = summarize(rows)
    with open(run.path("summary.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(summary[0]), lineterminator="\n")
        w.writeheader()
        w.writerows({k: repr(v) if isinstance(v, float) else v for k, v in r.items()} for r in summary)
    for r in summary:
        log.info("%s=%g success %.3f +- %.3f", r["sweep_param"], r["value"], r["success_mean"], r["success_std"])
    run.finish()
    return EXIT_OK


# argument handling ----------------------------------------------------------------------

VERBS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "oracle": cmd_oracle,
         "ablate": cmd_ablate}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [section] key = value entries")
    common.add_argument("--seed", type=int, help="overrides [run] seed")
    common.add_argument("--out-dir", help="overrides [run] out_dir")
    common.add_argument("--parallel", type=int, default=1, metavar="N",
                        help="worker processes for independent runs (ablate)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="viscoreg", description="Viscosity-regularized goal-conditioned values.",
                                epilog=describe_keys(), formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"viscoreg {__version__}")
    sub = p.add_subparsers(dest="verb", required=True)
    helps = {"gen-data": "generate a relabeled JSON-lines dataset",
             "train": "fit a value table; writes checkpoint.json and losses.csv",
             "eval": "greedy rollouts of a checkpoint; writes eval.csv",
             "oracle": "PDE reference solutions, walker probes and residual metrics",
             "ablate": "K and nu sweep; writes report.csv and summary.csv"}
    for verb, text in helps.items():
        sub.add_parser(verb, parents=[common], help=text, description=text, epilog=describe_keys(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        overrides = {}
        for item in args.set:
            key, sep, val = item.partition("=")
            if not sep or "." not in key:
                raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
            overrides[key.strip()] = val
        if args.seed is not None:
            overrides["run.seed"] = str(args.seed)
        if args.out_dir is not None:
            overrides["run.out_dir"] = args.out_dir
        if args.parallel < 1:
            raise ConfigError("--parallel must be >= 1")
        cfg = load_config(args.config, overrides=overrides)
        fn = VERBS[args.verb]
        return fn(cfg, args.parallel) if args.verb == "ablate" else fn(cfg)
    except (TrainingError, RuntimeError) as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME
    except (ValueError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
