"""Evaluation harness: deterministic policy rollouts over per-task episode
batches, success rate and success-weighted command distance, in- and
out-of-distribution command splits, and report emission (JSON + CSV + JSONL).
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np

from . import nets
from . import tasks as tasks_mod
from .env import FlightSession, OracleController, VecEnv
from .tasks import Anchor, Command, Reason, TaskId, Termination, check_termination

CSV_COLUMNS = ["task", "n", "sr_pct", "scd", "primary_error", "split"]


def success_rate(successes) -> float:
    """Percent of successful episodes."""
    s = np.asarray(successes, dtype=float)
    return float(100.0 * s.mean()) if s.size else 0.0


def scd(successes, cmd_dists) -> float:
    """Success-weighted command distance: (1/N) sum (1 - success_i) * C_i.

    Lower is better; exactly zero iff every episode succeeded (given C_i > 0
    for failures).
    """
    s = np.asarray(successes, dtype=float)
    c = np.asarray(cmd_dists, dtype=float)
    if s.size == 0:
        return 0.0
    return float(np.mean((1.0 - s) * c))


# Training ranges are the in-distribution region; eval additionally sweeps
# beyond them: Rotate |v| in (4, 6], Roll |N| in {4, 5}, Flip rate in
# [2, 8] outside [4, 6].
def sample_eval_command(rng: np.random.Generator, task: TaskId, split: str,
                        ppo_cfg: dict, eval_cfg: dict) -> float:
    if task == TaskId.HOVER:
        return 0.0
    if task == TaskId.ROTATE:
        lo = float(ppo_cfg["rotate_speed_max"])
        hi = float(eval_cfg["rotate_speed_max"])
        mag = rng.uniform(0.0, lo) if split == "in" else rng.uniform(lo, hi)
        return float(mag * rng.choice([-1.0, 1.0]))
    if task == TaskId.FLIP:
        in_lo, in_hi = ppo_cfg["flip_rate_range"]
        full_lo, full_hi = eval_cfg["flip_rate_range"]
        if split == "in":
            return float(rng.uniform(in_lo, in_hi))
        side = rng.choice([0, 1])
        return float(rng.uniform(full_lo, in_lo) if side == 0 else rng.uniform(in_hi, full_hi))
    if task == TaskId.ROLL:
        n_in = int(ppo_cfg["roll_turns_max"])
        n_full = int(eval_cfg["roll_turns_max"])
        pool = list(range(1, n_in + 1)) if split == "in" else list(range(n_in + 1, n_full + 1))
        n = int(rng.choice(pool))
        return float(n * rng.choice([-1, 1]))
    raise ValueError(f"unknown task {task}")


def is_ood(task: TaskId, param: float, ppo_cfg: dict) -> bool:
    if task == TaskId.ROTATE:
        return abs(param) > float(ppo_cfg["rotate_speed_max"])
    if task == TaskId.FLIP:
        lo, hi = ppo_cfg["flip_rate_range"]
        return not (lo <= param <= hi)
    if task == TaskId.ROLL:
        return abs(param) > int(ppo_cfg["roll_turns_max"])
    return False


def policy_actor(policy: nets.ActorCritic):
    """Deterministic action function (mean of the squashed Gaussian)."""

    def act(obs, obs_clean, task_ids):
        out = policy.act(obs, obs_clean, task_ids, deterministic=True)
        return nets.normalized_to_physical(out["action"], policy.f_total_max, policy.omega_max)

    return act


def run_episode_batch(env: VecEnv, act_fn, max_steps: int) -> list[dict]:
    """Drive a frozen-on-done batch until every episode finishes."""
    obs, obs_clean = env.reset()
    episodes: list[dict] = []
    for _ in range(max_steps):
        actions = act_fn(obs, obs_clean, env.task)
        out = env.step(actions)
        episodes.extend(out["episodes"])
        obs, obs_clean = out["obs"], out["obs_clean"]
        if env.done_latch.all():
            break
    episodes.sort(key=lambda e: e["env"])
    return episodes


def run_eval(cfg: dict, policy: nets.ActorCritic | None = None,
             task_list: list[TaskId] | None = None, episodes: int | None = None,
             seed: int = 0, level: float | None = None,
             splits: tuple = ("in", "ood"), oracle: bool = False,
             task_cfg_overrides: dict | None = None) -> dict:
    """Evaluate a policy (or the perfect-tracking oracle) per task and split.

    Returns {"rows": [...], "episodes": [...]} with one row per (task, split).
    """
    eval_cfg = cfg["eval"]
    n = episodes or int(eval_cfg["episodes"])
    lvl = float(eval_cfg["randomization_level"]) if level is None else float(level)
    tasks = task_list or list(TaskId)
    cfg_local = cfg
    if task_cfg_overrides:
        cfg_local = json.loads(json.dumps(cfg))
        cfg_local["task"].update(task_cfg_overrides)
    rows, all_eps = [], []
    for split in splits:
        for task in tasks:
            if split == "ood" and task == TaskId.HOVER:
                continue  # Hover has no command attribute to push out of range
            if oracle:
                eps = [run_oracle_episode(
                    cfg_local,
                    Command(task, sample_eval_command(
                        np.random.default_rng(seed * 7919 + 31 * int(task) + i),
                        task, split, cfg["ppo"], eval_cfg)),
                    seed + i) for i in range(n)]
            else:
                sampler = lambda rng, t, s=split: sample_eval_command(rng, t, s, cfg["ppo"], eval_cfg)
                env = VecEnv(cfg_local, n_envs=n, task_list=[task],
                             seed=seed + 1000 * int(task) + (0 if split == "in" else 7),
                             level=lvl, noise=bool(eval_cfg["noise"]), auto_reset=False,
                             command_sampler=sampler)
                eps = run_episode_batch(env, policy_actor(policy),
                                        int(cfg_local["task"]["horizon"]) + 2)
            for e in eps:
                e["split"] = split
            all_eps.extend(eps)
            rows.append({
                "task": task.name.lower(),
                "n": len(eps),
                "sr_pct": success_rate([e["success"] for e in eps]),
                "scd": scd([e["success"] for e in eps], [e["cmd_dist"] for e in eps]),
                "primary_error": float(np.mean([e["primary_error"] for e in eps])) if eps else 0.0,
                "split": split,
            })
    return {"rows": rows, "episodes": all_eps}


def run_oracle_episode(cfg: dict, cmd: Command, seed: int = 0) -> dict:
    """One episode flown by direct perfect-state injection."""
    sess = FlightSession(cfg, seed=seed)
    ctrl = OracleController(cfg)
    anchor = Anchor(np.array(cfg["task"]["anchor"], dtype=float), 0.0)
    sess.issue(cmd, anchor)
    sess.state = ctrl.on_command(cmd, anchor, sess.state)
    horizon = int(cfg["task"]["horizon"])
    status, reason = Termination.RUNNING, Reason.NONE
    ep_return = 0.0
    for _ in range(horizon):
        out = sess.step(inject=ctrl.next_state(cmd, anchor, sess.dt))
        ep_return += float(out["breakdown"].total)
        st, rs = check_termination(sess.state, sess.progress, cmd, anchor, cfg["task"])
        status, reason = Termination(int(st)), Reason(int(rs))
        if status != Termination.RUNNING:
            break
    prog = sess.progress
    cmd_dist = float(prog.cmd_dist)
    if cmd.task == TaskId.ROLL and reason != Reason.ROLL_COMPLETE:
        cmd_dist = float(tasks_mod.finalize_roll_cmd_dist(prog, cmd).cmd_dist)
    from .env import primary_error
    return {
        "env": 0, "task": cmd.task.name.lower(), "param": float(cmd.param),
        "success": bool(status == Termination.SUCCESS),
        "reason": reason.name.lower(), "steps": int(prog.step),
        "return": ep_return, "cmd_dist": cmd_dist,
        "primary_error": primary_error(cmd.task, sess.state, prog, cmd, anchor),
    }


def emit_report(report: dict, out_dir: str) -> dict:
    """Write eval.json, eval.csv (fixed columns) and episodes.jsonl."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "json": os.path.join(out_dir, "eval.json"),
        "csv": os.path.join(out_dir, "eval.csv"),
        "jsonl": os.path.join(out_dir, "episodes.jsonl"),
    }
    with open(paths["json"], "w") as f:
        json.dump({"rows": report["rows"]}, f, indent=2, sort_keys=True)
    with open(paths["csv"], "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for row in report["rows"]:
            w.writerow({k: row[k] for k in CSV_COLUMNS})
    with open(paths["jsonl"], "w") as f:
        for e in report["episodes"]:
            f.write(json.dumps(e, sort_keys=True) + "\n")
    return paths
