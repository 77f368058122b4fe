"""Run configuration: defaults, JSON file loading, dotted overrides, hashing.

A single nested dict drives every subcommand. Defaults below are the schema:
key presence and value types are validated against them, unknown keys are
rejected with the full dotted path.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import os
import subprocess
from datetime import datetime, timezone
from typing import Any


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "dynamics": {
        "mass": 0.46,             # kg
        "arm_radius": 0.0745,     # m, center to motor (0.149 m motor span)
        "inertia": [8.0e-4, 8.0e-4, 1.4e-3],   # kg m^2 diagonal
        "drag": [0.05, 0.05, 0.08],            # N s/m, world-frame linear drag
        "motor_tc": 0.02,         # s, first-order thrust lag
        "thrust_to_weight": 4.1,
        "k_tau": 0.016,           # m, reaction torque per unit thrust
        "gravity": 9.81,
        "dt_physics": 0.001,
        "substeps": 10,           # physics substeps per policy step (100 Hz policy)
        # Rate-loop bandwidth in s^-1 per axis; the controller multiplies by J
        # so tau_des = J*diag(rate_gain)*(omega_cmd-omega) + omega x J omega.
        "rate_gain": [50.0, 50.0, 25.0],
    },
    "task": {
        "anchor": [0.0, 0.0, 1.5],
        "horizon": 500,
        "z_min": 0.1,
        "omega_max": 10.0,        # rad/s command bound per axis
        "rotate_radius": 1.2,
        "flip_radius": 0.5,
        "roll_rate": 6.0,         # rad/s nominal roll execution rate
        "hover_pos_tol": 0.1,     # m
        "hover_ang_tol_deg": 10.0,
        "roll_tol": 0.26,         # rad, final roll-angle error
        "rotate_radius_tol": 0.1, # m, mean radius error
        "diverge_speed": 50.0,    # m/s, state considered diverged beyond this
        # Which two entries of each R_rel column form the VecPair ("xy" pairs
        # rows 0,1 leaving row 2 scalar).
        "rel_columns_paired": "xy",
    },
    "noise": {
        "enabled": True,
        "pos": 0.01,    # m
        "vel": 0.05,    # m/s
        "omega": 0.1,   # rad/s
        "rot_deg": 1.0, # deg, random-rotation perturbation of R_rel
    },
    "randomization": {
        "mass_pct": 0.10,
        "inertia_pct": 0.10,
        "drag_pct": 0.20,
        "motor_tc_pct": 0.20,
        "tilt_deg": 30.0,
        "yaw_rad": 3.141592653589793,
        "pos": [1.0, 1.0, 0.5],
        "vel": 1.0,
        "rate": 1.0,
        "motor_pct": 0.20,
    },
    "network": {
        "backbone": "emlp",       # "emlp" | "mlp"
        "film": True,
        "multihead": True,
        "hidden_pairs": 16,
        "hidden_scalars": 32,
        "mlp_widths": [64, 64],
        "film_hidden": 32,
        "norm_features": True,    # append VecPair norms as scalar channels
        "invariant_action": False,  # all-scalar actor head (literal reading)
        "log_std_init": -0.75,
        "hover_thrust_bias": True,  # bias f_sigma head toward hover at init
    },
    "ppo": {
        "n_envs": 128,
        "rollout_steps": 64,
        "epochs": 4,
        "minibatches": 8,
        "clip": 0.2,
        "gamma": 0.99,
        "lam": 0.95,
        "lr": 3.0e-4,
        "entropy_coef": 1.0e-3,
        "value_coef": 0.5,
        "max_grad_norm": 0.5,
        "total_steps": 2000000,
        "tasks": ["hover", "rotate", "flip", "roll"],
        "curriculum_full_at": 0.5,  # training fraction at which level hits 1
        "flip_rate_range": [4.0, 6.0],
        "roll_turns_max": 3,
        "rotate_speed_max": 4.0,
        "eval_every": 10,          # iterations between SR probes (0 disables)
        "checkpoint_every": 50,
    },
    "eval": {
        "episodes": 64,
        "randomization_level": 0.5,
        "noise": False,
        "flip_rate_range": [2.0, 8.0],
        "roll_turns_max": 5,
        "rotate_speed_max": 6.0,
    },
    "service": {
        "host": "127.0.0.1",
        "port": 8765,
        "timescale": 1.0,
        "telemetry_hz": 30.0,
        "queue_size": 256,
    },
    "composer": {
        "flip_done_angle": 3.141592653589793,
        "max_duration": 12.0,
    },
}

_CHOICES = {
    "network.backbone": ("emlp", "mlp"),
    "task.rel_columns_paired": ("xy", "xz", "yz"),
}

_POSITIVE = {
    "dynamics.mass", "dynamics.arm_radius", "dynamics.motor_tc",
    "dynamics.thrust_to_weight", "dynamics.gravity", "dynamics.dt_physics",
    "dynamics.substeps", "task.horizon", "task.rotate_radius",
    "task.flip_radius", "task.roll_rate", "ppo.n_envs", "ppo.rollout_steps",
    "ppo.epochs", "ppo.minibatches", "service.timescale",
    "service.telemetry_hz", "service.queue_size", "eval.episodes",
}


def _type_name(v: Any) -> str:
    return type(v).__name__


def _validate(value: Any, default: Any, path: str) -> Any:
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected object, got {_type_name(value)}")
        out = {}
        for key, sub in value.items():
            if key not in default:
                raise ConfigError(f"unknown config key: {path}.{key}" if path else f"unknown config key: {key}")
            child = f"{path}.{key}" if path else key
            out[key] = _validate(sub, default[key], child)
        for key, sub in default.items():
            if key not in out:
                out[key] = copy.deepcopy(sub)
        return out
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected bool, got {_type_name(value)}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected number, got {_type_name(value)}")
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"{path}: expected integer, got {value}")
        value = int(value)
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected number, got {_type_name(value)}")
        value = float(value)
        if not math.isfinite(value):
            raise ConfigError(f"{path}: expected finite number")
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected string, got {_type_name(value)}")
    elif isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected list, got {_type_name(value)}")
        elem = default[0]
        value = [_validate(v, elem, f"{path}[{i}]") for i, v in enumerate(value)]
    if path in _CHOICES and value not in _CHOICES[path]:
        raise ConfigError(f"{path}: must be one of {_CHOICES[path]}, got {value!r}")
    if path in _POSITIVE and not (isinstance(value, (int, float)) and value > 0):
        raise ConfigError(f"{path}: must be positive, got {value!r}")
    return value


def _parse_override(text: str) -> tuple[list[str], Any]:
    if "=" not in text:
        raise ConfigError(f"override {text!r}: expected key.path=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {text!r}: empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def _apply_override(cfg: dict, parts: list[str], value: Any) -> None:
    node = cfg
    for i, part in enumerate(parts[:-1]):
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"unknown config key: {'.'.join(parts[: i + 1])}")
        node = node[part]
    leaf = parts[-1]
    if not isinstance(node, dict) or leaf not in node:
        raise ConfigError(f"unknown config key: {'.'.join(parts)}")
    node[leaf] = value


def load_config(path: str | None = None,
                overrides: list[str] | dict | None = None) -> dict:
    """Resolve defaults <- file <- dotted overrides into a validated dict.

    Overrides are "key.path=value" strings (values parsed as JSON, falling
    back to bare strings) or a {"key.path": value} mapping.
    """
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                file_cfg = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}")
        if not isinstance(file_cfg, dict):
            raise ConfigError(f"config file {path}: top level must be an object")
        cfg = _merge(cfg, file_cfg, "")
    if isinstance(overrides, dict):
        for key, value in overrides.items():
            _apply_override(cfg, key.split("."), value)
    else:
        for text in overrides or []:
            parts, value = _parse_override(text)
            _apply_override(cfg, parts, value)
    return _validate(cfg, DEFAULTS, "")


def _merge(base: dict, update: dict, path: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        child = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key: {child}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, child)
        else:
            out[key] = value
    return out


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def network_hash(cfg: dict) -> str:
    """Hash of the blocks that determine network shape and wiring."""
    block = {"network": cfg["network"], "rel_columns_paired": cfg["task"]["rel_columns_paired"]}
    return hashlib.sha256(canonical_json(block).encode()).hexdigest()


def git_describe(cwd: str | None = None) -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5, cwd=cwd,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return "unknown"


def init_run_dir(cfg: dict, out_dir: str, force: bool = False) -> str:
    """Create a run directory with a resolved config snapshot and metadata."""
    if os.path.exists(out_dir):
        if not os.path.isdir(out_dir):
            raise ConfigError(f"{out_dir} exists and is not a directory")
        if os.listdir(out_dir) and not force:
            raise ConfigError(f"{out_dir} is not empty (use --force to reuse)")
    os.makedirs(out_dir, exist_ok=True)
    for sub in ("metrics", "checkpoints", "logs"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
    meta = {
        "seed": cfg["seed"],
        "config_hash": config_hash(cfg),
        "network_hash": network_hash(cfg),
        "git": git_describe(),
        "created": datetime.now(timezone.utc).isoformat(),
    }
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    return out_dir
