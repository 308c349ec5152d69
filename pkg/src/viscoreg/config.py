"""INI run configuration with typed keys and environment overrides.

Values are resolved in order: built-in defaults, the ``--config`` file, then
variables named ``VISCOREG_<SECTION>__<KEY>`` (e.g.
``VISCOREG_TRAIN__N_STEPS=5000``), then command-line flags.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import os

ENV_PREFIX = "VISCOREG_"


class ConfigError(ValueError):
    pass


def _floats(text):
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def _ints(text):
    return tuple(int(v) for v in text.replace(";", ",").split(",") if v.strip())


def _opt_int(text):
    text = text.strip().lower()
    return None if text in ("", "none", "all") else int(text)


# section -> key -> (parser, default text, help)
SCHEMA = {
    "run": {
        "seed": (int, "0", "seed for data generation, training and probes"),
        "out_dir": (str, "out", "output directory"),
    },
    "maze": {
        "name": (str, "empty5", "bundled maze (empty5, maze10, arena20) or path to an ASCII maze"),
    },
    "data": {
        "behavior": (str, "noisy_expert", "noisy_expert or random_walk"),
        "n_traj": (int, "200", "number of trajectories"),
        "traj_len": (int, "50", "steps per trajectory"),
        "epsilon": (float, "0.2", "noisy expert random-action probability"),
        "starts": (str, "free", "start cells: free (uniform) or marked (S cells)"),
        "ratios": (_floats, "0.2,0.5,0,0.3", "goal relabel mix cur,geom,traj,rand"),
        "gamma_geom": (float, "0.99", "geometric goal horizon parameter"),
        "n_samples": (_opt_int, "none", "resample this many transitions (none = each once)"),
    },
    "train": {
        "dataset": (str, "", "dataset file (default <out_dir>/dataset.jsonl)"),
        "regularizer": (str, "none", "none, fk or eikonal"),
        "gamma": (float, "0.99", "discount"),
        "kappa": (float, "0.9", "expectile"),
        "lr": (float, "0.2", "table step size"),
        "batch_size": (int, "256", "samples per step"),
        "n_steps": (int, "20000", "gradient steps"),
        "lam": (float, "1.0", "regularizer weight"),
        "nu": (float, "0.01", "diffusion scale in cell units (fk)"),
        "dt": (float, "1.0", "time step (fk)"),
        "k": (int, "10", "neighbour samples per state (fk)"),
        "q": (float, "1.0", "running cost (fk)"),
        "speed": (float, "1.0", "Eikonal speed"),
        "target_rate": (float, "0.005", "target table soft-update rate"),
        "log_every": (int, "100", "steps per loss CSV row"),
        "checkpoint_every": (int, "0", "steps between saved checkpoints (0 = final only)"),
    },
    "eval": {
        "checkpoint": (str, "", "checkpoint file (default <out_dir>/checkpoint.json)"),
        "n_tasks": (_opt_int, "none", "random tasks (none = one per free goal cell)"),
        "task_seed": (int, "1234", "task sampling seed"),
        "max_steps": (_opt_int, "none", "rollout cap (none = 4x BFS distance)"),
        "geometry_goals": (_ints, "", "goal cells whose value geometry is exported"),
    },
    "oracle": {
        "scene": (str, "obstacle", "obstacle, strip or all_goal"),
        "bc": (str, "reflecting", "absorbing or reflecting walls"),
        "h": (float, "0.0078125", "grid spacing"),
        "nu": (float, "0.2", "viscosity"),
        "q": (float, "1.0", "running cost"),
        "strip_length": (float, "1.0", "strip length"),
        "n_probes": (int, "20", "walker probe points (0 = skip)"),
        "n_walkers": (int, "100000", "walkers per probe"),
        "walker_dt": (float, "0.002", "walker time step"),
        "walker_refine": (int, "4", "fine sub-steps near the goal and corners"),
        "band_width": (float, "3", "obstacle band width in grid spacings"),
        "jensen_dt": (float, "1.0", "Jensen check time step"),
        "jensen_nu": (float, "0.2", "Jensen check jump scale"),
        "jensen_k": (int, "64", "Jensen check samples per node"),
    },
    "ablate": {
        "dataset": (str, "", "dataset file (default: generate from [data])"),
        "nu": (float, "0.5", "nu for the K rows, cell units"),
        "k": (int, "10", "K for the nu rows"),
        "k_grid": (_ints, "1,5,10,20", "K values"),
        "nu_grid": (_floats, "1e-4,1e-3,1e-2,1e-1", "nu values"),
        "n_seeds": (int, "3", "seeds run.seed .. run.seed + n_seeds - 1"),
        "lam": (float, "1.0", "FK weight"),
        "dt": (float, "1.0", "FK time step"),
        "q": (float, "1.0", "running cost"),
        "gamma": (float, "0.99", "discount"),
        "lr": (float, "0.2", "table step size"),
        "batch_size": (int, "256", "samples per step"),
        "n_steps": (int, "30000", "gradient steps per run"),
        "n_tasks": (int, "50", "evaluation tasks"),
        "task_seed": (int, "1234", "task sampling seed"),
        "n_variance_pairs": (int, "20", "(s, g) pairs in the estimator variance"),
        "n_repeats": (int, "200", "independent K-sample means per pair"),
    },
}


def describe_keys() -> str:
    lines = ["configuration keys ([section] key = default):"]
    for sec, keys in SCHEMA.items():
        lines.append(f"  [{sec}]")
        for key, (_, default, text) in keys.items():
            lines.append(f"    {key + ' = ' + default:<34} {text}")
    lines.append(f"environment overrides: {ENV_PREFIX}<SECTION>__<KEY>=value")
    return "\n".join(lines)


def _parse(section, key, text):
    try:
        parser = SCHEMA[section][key][0]
    except KeyError:
        raise ConfigError(f"unknown config key [{section}] {key}") from None
    try:
        return parser(text)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {text!r}: {exc}") from None


def load_config(path=None, env=None, overrides=None) -> dict:
    """Resolved ``{section: {key: value}}``; ``overrides`` maps ``"section.key"`` to text."""
    raw = {sec: {k: v[1] for k, v in keys.items()} for sec, keys in SCHEMA.items()}
    if path is not None:
        cp = configparser.ConfigParser(interpolation=None)
        if not os.path.isfile(path):
            raise ConfigError(f"config file not found: {path}")
        try:
            cp.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for sec in cp.sections():
            if sec not in SCHEMA:
                raise ConfigError(f"{path}: unknown section [{sec}]")
            for key, val in cp.items(sec):
                _parse(sec, key, val)
                raw[sec][key] = val
    env = os.environ if env is None else env
    for name, val in env.items():
        if not name.startswith(ENV_PREFIX) or "__" not in name:
            continue
        sec, _, key = name[len(ENV_PREFIX):].lower().partition("__")
        _parse(sec, key, val)
        raw[sec][key] = val
    for dotted, val in (overrides or {}).items():
        sec, _, key = dotted.partition(".")
        _parse(sec, key, val)
        raw[sec][key] = val
    return {sec: {k: _parse(sec, k, v) for k, v in keys.items()} for sec, keys in raw.items()}


def jsonable(cfg: dict) -> dict:
    return {sec: {k: list(v) if isinstance(v, tuple) else v for k, v in keys.items()}
            for sec, keys in cfg.items()}


def config_hash(cfg: dict) -> str:
    blob = json.dumps(jsonable(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
