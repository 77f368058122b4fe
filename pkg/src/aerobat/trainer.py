"""PPO with GAE over the vectorized environment.

Conventions: the actor is trained on noisy observations, values always come
from clean ones through the episode's task head; rewards are scaled by the
reward ceiling (72) into [0, 1]; horizon/timeout terminations bootstrap the
final clean observation, crashes do not; advantages are normalized per
minibatch. Everything is seeded and runs in float64 on CPU.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import torch

from . import nets
from .config import init_run_dir
from .env import VecEnv
from .evaluation import policy_actor, run_episode_batch
from .rewards import REWARD_MAX
from .tasks import TaskId


@dataclass
class Rollout:
    """One rollout of shape (T, N, ...); filled completely before the update."""

    obs: np.ndarray
    obs_clean: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    truncated: np.ndarray
    bootstrap_values: np.ndarray   # value of the final clean obs where truncated
    task_ids: np.ndarray
    last_values: np.ndarray        # V(s_T) per env, for the tail bootstrap
    episodes: list = field(default_factory=list)


def collect_rollouts(policy: nets.ActorCritic, env: VecEnv, T: int,
                     generator: torch.Generator, obs: np.ndarray,
                     obs_clean: np.ndarray) -> tuple[Rollout, np.ndarray, np.ndarray]:
    N = env.n
    shape = (T, N)
    ro = Rollout(
        obs=np.zeros(shape + (obs.shape[-1],)),
        obs_clean=np.zeros(shape + (obs.shape[-1],)),
        actions=np.zeros(shape + (4,)),
        log_probs=np.zeros(shape),
        rewards=np.zeros(shape),
        values=np.zeros(shape),
        dones=np.zeros(shape, dtype=bool),
        truncated=np.zeros(shape, dtype=bool),
        bootstrap_values=np.zeros(shape),
        task_ids=np.zeros(shape, dtype=int),
        last_values=np.zeros(N),
    )
    for t in range(T):
        task_ids = env.task.copy()
        out_pi = policy.act(obs, obs_clean, task_ids, generator=generator)
        a_phys = nets.normalized_to_physical(out_pi["action"], policy.f_total_max, policy.omega_max)
        out_env = env.step(a_phys)
        ro.obs[t] = obs
        ro.obs_clean[t] = obs_clean
        ro.actions[t] = out_pi["action"]
        ro.log_probs[t] = out_pi["log_prob"]
        ro.values[t] = out_pi["value"]
        ro.rewards[t] = out_env["reward"] / REWARD_MAX
        ro.dones[t] = out_env["done"]
        ro.truncated[t] = out_env["truncated"]
        ro.task_ids[t] = task_ids
        if out_env["truncated"].any():
            idx = np.nonzero(out_env["truncated"])[0]
            ro.bootstrap_values[t, idx] = policy.values(
                out_env["final_obs_clean"][idx], task_ids[idx])
        ro.episodes.extend(out_env["episodes"])
        obs, obs_clean = out_env["obs"], out_env["obs_clean"]
    ro.last_values = policy.values(obs_clean, env.task)
    return ro, obs, obs_clean


def gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
        truncated: np.ndarray, bootstrap_values: np.ndarray,
        last_values: np.ndarray, gamma: float, lam: float):
    """Generalized advantage estimation with truncation-aware bootstrapping.

    An episode cut by the horizon bootstraps its stored final-state value; a
    terminal episode bootstraps zero. Both cut the recursion chain.
    """
    T, N = rewards.shape
    adv = np.zeros((T, N))
    lastgaelam = np.zeros(N)
    for t in reversed(range(T)):
        next_values = last_values if t == T - 1 else values[t + 1]
        next_values = np.where(dones[t],
                               np.where(truncated[t], bootstrap_values[t], 0.0),
                               next_values)
        delta = rewards[t] + gamma * next_values - values[t]
        lastgaelam = delta + gamma * lam * (~dones[t]) * lastgaelam
        adv[t] = lastgaelam
    returns = adv + values
    return adv, returns


@dataclass
class UpdateStats:
    loss_pi: float = 0.0
    loss_v: float = 0.0
    entropy: float = 0.0
    approx_kl: float = 0.0
    clip_frac: float = 0.0
    skipped_minibatches: int = 0


def ppo_update(policy: nets.ActorCritic, optimizer: torch.optim.Optimizer,
               ro: Rollout, ppo_cfg: dict, generator: torch.Generator) -> UpdateStats:
    adv, returns = gae(ro.rewards, ro.values, ro.dones, ro.truncated,
                       ro.bootstrap_values, ro.last_values,
                       float(ppo_cfg["gamma"]), float(ppo_cfg["lam"]))
    T, N = ro.rewards.shape
    flat = lambda x: torch.as_tensor(x.reshape((T * N,) + x.shape[2:]), dtype=nets.DTYPE)
    b_obs = flat(ro.obs)
    b_obs_clean = flat(ro.obs_clean)
    b_actions = flat(ro.actions)
    b_logp = flat(ro.log_probs)
    b_adv = flat(adv)
    b_ret = flat(returns)
    b_task = torch.as_tensor(ro.task_ids.reshape(-1))

    clip = float(ppo_cfg["clip"])
    vcoef = float(ppo_cfg["value_coef"])
    ecoef = float(ppo_cfg["entropy_coef"])
    stats = UpdateStats()
    count = 0
    n_mb = int(ppo_cfg["minibatches"])
    mb_size = (T * N) // n_mb
    for _ in range(int(ppo_cfg["epochs"])):
        perm = torch.randperm(T * N, generator=generator)
        for m in range(n_mb):
            mb = perm[m * mb_size:(m + 1) * mb_size]
            mean, log_std = policy.distribution_params(b_obs[mb])
            logp = policy.log_prob(mean, log_std, b_actions[mb])
            ratio = torch.exp(logp - b_logp[mb])
            madv = b_adv[mb]
            madv = (madv - madv.mean()) / (madv.std() + 1e-8)
            s1 = ratio * madv
            s2 = torch.clamp(ratio, 1.0 - clip, 1.0 + clip) * madv
            loss_pi = -torch.min(s1, s2).mean()
            v = policy.critic.value_for(b_obs_clean[mb], b_task[mb])
            loss_v = 0.5 * ((v - b_ret[mb]) ** 2).mean()
            entropy = policy.entropy(log_std)
            loss = loss_pi + vcoef * loss_v - ecoef * entropy
            if not torch.isfinite(loss):
                stats.skipped_minibatches += 1
                continue
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(policy.parameters(), float(ppo_cfg["max_grad_norm"]))
            optimizer.step()
            with torch.no_grad():
                stats.loss_pi += float(loss_pi)
                stats.loss_v += float(loss_v)
                stats.entropy += float(entropy)
                stats.approx_kl += float((b_logp[mb] - logp).mean())
                stats.clip_frac += float((torch.abs(ratio - 1.0) > clip).double().mean())
            count += 1
    for f in ("loss_pi", "loss_v", "entropy", "approx_kl", "clip_frac"):
        setattr(stats, f, getattr(stats, f) / max(count, 1))
    return stats


@dataclass
class TrainResult:
    run_dir: str
    checkpoint: str
    steps: int
    iterations: int
    steps_to_sr: float          # env steps when eval SR first hit the stop target (inf if never)
    final_eval_sr: float
    metrics: list


METRIC_FIELDS = ["iteration", "steps", "level", "loss_pi", "loss_v", "entropy",
                 "approx_kl", "clip_frac", "ep_return", "train_sr", "eval_sr",
                 "skipped_minibatches", "elapsed_s"]


def train(cfg: dict, out_dir: str | None = None, seed: int | None = None,
          stop_at_sr: float | None = None, eval_task_overrides: dict | None = None,
          max_iterations: int | None = None, quiet: bool = False,
          force: bool = False) -> TrainResult:
    """Full training loop. Returns after total_steps, max_iterations, or once
    eval SR reaches stop_at_sr (earliest of the three)."""
    ppo_cfg = cfg["ppo"]
    seed = int(cfg["seed"] if seed is None else seed)
    run_dir = init_run_dir(cfg, out_dir, force=force) if out_dir else None

    torch.manual_seed(seed)
    policy = nets.build_policy(cfg, seed=seed)
    optimizer = torch.optim.Adam(policy.parameters(), lr=float(ppo_cfg["lr"]))
    sample_gen = torch.Generator()
    sample_gen.manual_seed(seed + 1)
    env = VecEnv(cfg, seed=seed + 2)

    eval_cfg_local = cfg
    if eval_task_overrides:
        eval_cfg_local = json.loads(json.dumps(cfg))
        eval_cfg_local["task"].update(eval_task_overrides)
    eval_seed = seed + 3
    eval_env = VecEnv(eval_cfg_local, n_envs=int(cfg["eval"]["episodes"]),
                      task_list=[TaskId.from_name(t) for t in ppo_cfg["tasks"]],
                      seed=eval_seed, level=float(cfg["eval"]["randomization_level"]),
                      noise=bool(cfg["eval"]["noise"]), auto_reset=False)

    T = int(ppo_cfg["rollout_steps"])
    total_steps = int(ppo_cfg["total_steps"])
    steps_per_iter = T * env.n
    n_iters = math.ceil(total_steps / steps_per_iter)
    if max_iterations is not None:
        n_iters = min(n_iters, int(max_iterations))
    full_at = float(ppo_cfg["curriculum_full_at"]) * total_steps

    recent = {int(t): deque(maxlen=200) for t in TaskId}
    recent_returns = deque(maxlen=400)
    metrics = []
    steps_to_sr = math.inf
    eval_sr = 0.0
    t0 = time.time()
    obs, obs_clean = env.reset()
    csv_file = None
    csv_writer = None
    if run_dir:
        csv_file = open(os.path.join(run_dir, "metrics", "metrics.csv"), "w", newline="")
        csv_writer = csv.DictWriter(csv_file, fieldnames=METRIC_FIELDS)
        csv_writer.writeheader()

    steps = 0
    it = 0
    try:
        for it in range(1, n_iters + 1):
            level = min(1.0, steps / full_at) if full_at > 0 else 1.0
            env.set_level(level)
            ro, obs, obs_clean = collect_rollouts(policy, env, T, sample_gen, obs, obs_clean)
            steps += steps_per_iter
            stats = ppo_update(policy, optimizer, ro, ppo_cfg, sample_gen)
            for e in ro.episodes:
                recent[int(TaskId.from_name(e["task"]))].append(e["success"])
                recent_returns.append(e["return"])
            train_sr = 100.0 * float(np.mean([s for d in recent.values() for s in d])) \
                if any(recent.values()) else 0.0

            eval_every = int(ppo_cfg["eval_every"])
            if (eval_every > 0 and it % eval_every == 0) or it == n_iters:
                eval_env.rng = np.random.default_rng(eval_seed)
                eps = run_episode_batch(eval_env, policy_actor(policy),
                                        int(cfg["task"]["horizon"]) + 2)
                eval_sr = 100.0 * float(np.mean([e["success"] for e in eps])) if eps else 0.0
                if stop_at_sr is not None and eval_sr >= stop_at_sr and steps_to_sr == math.inf:
                    steps_to_sr = steps

            row = {
                "iteration": it, "steps": steps, "level": round(level, 4),
                "loss_pi": round(stats.loss_pi, 6), "loss_v": round(stats.loss_v, 6),
                "entropy": round(stats.entropy, 4), "approx_kl": round(stats.approx_kl, 6),
                "clip_frac": round(stats.clip_frac, 4),
                "ep_return": round(float(np.mean(recent_returns)) if recent_returns else 0.0, 2),
                "train_sr": round(train_sr, 2), "eval_sr": round(eval_sr, 2),
                "skipped_minibatches": stats.skipped_minibatches,
                "elapsed_s": round(time.time() - t0, 1),
            }
            metrics.append(row)
            if csv_writer:
                csv_writer.writerow(row)
                csv_file.flush()
            if not quiet:
                print(f"iter {it:4d} steps {steps:8d} level {level:.2f} "
                      f"ret {row['ep_return']:7.2f} train_sr {train_sr:5.1f} "
                      f"eval_sr {eval_sr:5.1f} pi {stats.loss_pi:+.4f} v {stats.loss_v:.4f}")
            if run_dir and it % int(ppo_cfg["checkpoint_every"]) == 0:
                nets.save_checkpoint(
                    os.path.join(run_dir, "checkpoints", f"ckpt_{it:05d}.bin"),
                    policy, cfg, meta={"iteration": it, "steps": steps})
            if steps_to_sr != math.inf and stop_at_sr is not None:
                break
    finally:
        if csv_file:
            csv_file.close()

    ckpt = ""
    if run_dir:
        ckpt = os.path.join(run_dir, "checkpoints", "ckpt_final.bin")
        nets.save_checkpoint(ckpt, policy, cfg,
                             meta={"iteration": it, "steps": steps, "eval_sr": eval_sr})
    result = TrainResult(run_dir=run_dir or "", checkpoint=ckpt, steps=steps,
                         iterations=it, steps_to_sr=steps_to_sr,
                         final_eval_sr=eval_sr, metrics=metrics)
    result.policy = policy  # handy for in-process callers; not part of the dataclass
    return result
