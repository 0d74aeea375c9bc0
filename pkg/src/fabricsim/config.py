"""Run configuration: a YAML tree over built-in defaults.

Precedence, lowest first: defaults, config file, ``FABRICSIM_*``
environment variables, command-line flags.  Environment keys use ``__``
for nesting, e.g. ``FABRICSIM_SCENARIO__EPSILON=0.2`` or
``FABRICSIM_REGRET__N_CH_GRID=[10,20]``; values are parsed as YAML
scalars or flow sequences.
"""

from __future__ import annotations

import copy
import dataclasses
import os
from pathlib import Path
from typing import Any, Mapping

import yaml

from .bandit import Policy
from .consensus import LatencyCosts
from .engine import PfDistribution, ScenarioConfig
from .geometry import SceneConfig

ENV_PREFIX = "FABRICSIM_"


class ConfigError(ValueError):
    """Bad config file, key or value (CLI exit status 1)."""


DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "threads": None,          # None = machine parallelism
    "replications": None,     # None = each experiment's own default
    "scenario": {
        "scene": {
            "length_m": 2000.0, "width_m": 2000.0,
            "rsu_density": 2.5e-5, "obu_density": 1e-4,
            "network_radius_m": 1000.0, "speed_min": 5.0, "speed_max": 30.0,
        },
        "n_channels": 10,
        "peer_range": [5, 10],
        "pf_distribution": {"kind": "uniform", "low": 0.0, "high": 0.5, "values": []},
        "policy": "thompson",
        "epsilon": 0.1,
        "t_train_slots": 100,
        "costs": {"c_endorse": 1, "c_order": 1, "max_retries": 2, "slot_duration_s": 0.1},
        "n_clients": 1,
        "horizon_slots": 10_100,
        "arrival_prob": 1.0,
        "contention": True,
        "context_bins": 1,
        "oracle_reps": 0,
        "rsu_backed": False,
        "training_schedule": "round_robin",
        "total_peers": 100,
    },
    "heatmap": {
        "n_grid": [5, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100],
        "pf_grid": [0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5],
        "reps": 10_000,
    },
    "gossip": {"n_list": [5, 10, 50, 100], "threshold": None, "reps": 10_000},
    "convergence": {
        "replications": 100,
        "policies": ["thompson", "epsilon_greedy"],
        "log_every": 100,
        "scenario": {},
    },
    "regret": {
        "replications": 500,
        "policies": ["thompson", "epsilon_greedy"],
        "t_train_grid": [100, 1000, 10_000],
        "n_ch_grid": [10, 20, 30],
        "operate_slots": 2000,
        "scenario": {},
    },
    "scalability": {
        "replications": 100,
        "policies": ["oracle", "thompson", "random"],
        "n_clients_grid": [10, 50, 100, 200],
        "scenario": {"horizon_slots": 1100, "arrival_prob": 0.01},
    },
}


def merge(base: Mapping, override: Mapping, path: str = "") -> dict:
    """Deep merge; keys absent from ``base`` are rejected."""
    out = copy.deepcopy(dict(base))
    for key, val in override.items():
        where = f"{path}{key}"
        if key not in out:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(out[key], dict):
            if not isinstance(val, Mapping):
                raise ConfigError(f"{where!r} must be a mapping")
            if key == "scenario" and path:
                # per-experiment scenario overrides: checked against the shared scenario keys
                merge(DEFAULTS["scenario"], val, where + ".")
                out[key] = _deep_update(out[key], val)
            else:
                out[key] = merge(out[key], val, where + ".")
        else:
            out[key] = val
    return out


def _deep_update(base: dict, override: Mapping) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, Mapping) and isinstance(out.get(key), dict):
            out[key] = _deep_update(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_file(path: str | os.PathLike) -> dict:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {str(p)!r}: {exc.strerror or exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {str(p)!r} is not valid YAML: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {str(p)!r} must hold a mapping at top level")
    return data


def env_overrides(environ: Mapping[str, str] | None = None) -> dict:
    environ = os.environ if environ is None else environ
    tree: dict = {}
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        keys = [k.lower() for k in name[len(ENV_PREFIX):].split("__")]
        if keys[0] not in DEFAULTS:
            continue  # other FABRICSIM_* switches, e.g. the backend selector
        try:
            val = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {name}={raw!r}: {exc}") from exc
        node = tree
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        node[keys[-1]] = val
    return tree


def resolve(path: str | os.PathLike | None = None, flags: Mapping[str, Any] | None = None,
            environ: Mapping[str, str] | None = None) -> dict:
    """Full config tree after applying every layer."""
    cfg = merge(DEFAULTS, load_file(path)) if path is not None else copy.deepcopy(DEFAULTS)
    cfg = merge(cfg, env_overrides(environ))
    cfg = merge(cfg, {k: v for k, v in (flags or {}).items() if v is not None})
    return cfg


def _build(cls, data: Mapping, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys under {where!r}: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where!r}: {exc}") from exc


def scenario_config(cfg: Mapping, experiment: str | None = None) -> ScenarioConfig:
    """ScenarioConfig for ``experiment`` (its ``scenario`` section merged
    over the shared one), with seed and replication count applied."""
    tree = copy.deepcopy(cfg["scenario"])
    reps = None
    if experiment is not None:
        section = cfg[experiment]
        tree = merge(tree, section.get("scenario") or {}, f"{experiment}.scenario.")
        reps = section.get("replications")
    if cfg.get("replications") is not None:
        reps = cfg["replications"]
    pf = dict(tree.pop("pf_distribution"))
    pf["values"] = tuple(pf.get("values") or ())
    try:
        return ScenarioConfig(
            scene=_build(SceneConfig, tree.pop("scene"), "scenario.scene"),
            costs=_build(LatencyCosts, tree.pop("costs"), "scenario.costs"),
            pf_distribution=_build(PfDistribution, pf, "scenario.pf_distribution"),
            peer_range=tuple(tree.pop("peer_range")),
            master_seed=int(cfg["seed"]),
            replications=int(reps) if reps is not None else ScenarioConfig.replications,
            **tree,
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid scenario: {exc}") from exc


def policies(names) -> list[Policy]:
    try:
        return [Policy.parse(n) for n in names]
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"unknown policy in {list(names)}") from exc
