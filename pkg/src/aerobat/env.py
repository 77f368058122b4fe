"""Episode machinery: a batch-parallel training/eval environment and a
single-vehicle session for scripted flight and the live service.

Environments share no mutable state across the batch; everything is stacked
numpy arrays advanced by the broadcast-safe dynamics.
"""

from __future__ import annotations

import math

import numpy as np

from . import dynamics, rewards, tasks
from .dynamics import MavParams, MavState, hover_action, hover_state
from .symmetry import rot_z
from .tasks import (Anchor, Command, Reason, TaskId, TaskProgress, Termination,
                    achieved_attribute, build_observation, check_termination,
                    rel_state, task_targets, update_progress)

OBS_DIM = 27
ACT_DIM = 4


def yaw_of(R: np.ndarray) -> np.ndarray:
    return np.arctan2(R[..., 1, 0], R[..., 0, 0])


def action_bounds(params: MavParams, omega_max: float):
    lo = np.array([0.0, -omega_max, -omega_max, -omega_max])
    hi = np.array([4.0 * params.f_motor_max, omega_max, omega_max, omega_max])
    return lo, hi


def clip_action(a: np.ndarray, params: MavParams, omega_max: float) -> np.ndarray:
    lo, hi = action_bounds(params, omega_max)
    return np.clip(a, lo, hi)


def evaluate_step(cmd: Command, anchor: Anchor, s_prev: MavState, s: MavState,
                  progress: TaskProgress, dt: float, task_cfg: dict):
    """Shared per-step task bookkeeping for a uniform-task batch.

    Returns (progress', targets, rel, breakdown, roll_completed_now).
    """
    prog = update_progress(progress, s_prev, s, cmd, anchor, dt, task_cfg)
    roll_now = np.zeros(np.shape(prog.step), dtype=bool)
    if cmd.task == TaskId.ROLL:
        lim = 2.0 * math.pi * np.abs(np.asarray(cmd.param, dtype=float))
        roll_now = (np.abs(prog.roll_angle) >= lim) & ~(np.abs(progress.roll_angle) >= lim)
    targets = task_targets(cmd, anchor, s, task_cfg, roll_angle=prog.roll_angle)
    rel = rel_state(s, targets)
    a_ach = achieved_attribute(cmd, s, anchor)
    breakdown = rewards.compute_reward(
        cmd, rel, a_ach,
        roll_final=roll_now,
        roll_turns=prog.roll_angle / (2.0 * math.pi),
    )
    if cmd.task == TaskId.ROLL:
        final = tasks.finalize_roll_cmd_dist(prog, cmd)
        prog.cmd_dist = np.where(roll_now, final.cmd_dist, prog.cmd_dist)
    return prog, targets, rel, breakdown, roll_now


def _assign_progress(dst: TaskProgress, idx, src: TaskProgress) -> None:
    for f in ("step", "roll_angle", "pitch_cum", "radius_err_sum",
              "tan_err_sum", "rate_err_sum", "cmd_dist"):
        getattr(dst, f)[idx] = getattr(src, f)


def _select_progress(src: TaskProgress, idx) -> TaskProgress:
    return TaskProgress(*(getattr(src, f)[idx] for f in
                          ("step", "roll_angle", "pitch_cum", "radius_err_sum",
                           "tan_err_sum", "rate_err_sum", "cmd_dist")))


def _assign_state(dst: MavState, idx, src: MavState) -> None:
    dst.p[idx] = src.p
    dst.v[idx] = src.v
    dst.R[idx] = src.R
    dst.omega[idx] = src.omega
    dst.motor_f[idx] = src.motor_f


def _assign_params(dst: MavParams, idx, src: MavParams) -> None:
    dst.mass[idx] = src.mass
    dst.inertia[idx] = src.inertia
    dst.drag[idx] = src.drag
    dst.motor_tc[idx] = src.motor_tc


def sample_command(rng: np.random.Generator, task: TaskId, cfg_block: dict) -> float:
    """Per-episode command attribute for training or eval distributions."""
    if task == TaskId.HOVER:
        return 0.0
    if task == TaskId.ROTATE:
        m = float(cfg_block["rotate_speed_max"])
        return float(rng.uniform(-m, m))
    if task == TaskId.FLIP:
        lo, hi = cfg_block["flip_rate_range"]
        return float(rng.uniform(lo, hi))
    if task == TaskId.ROLL:
        m = int(cfg_block["roll_turns_max"])
        choices = [n for n in range(-m, m + 1) if n != 0]
        return float(rng.choice(choices))
    raise ValueError(f"unknown task {task}")


class VecEnv:
    """Batch of independent task episodes with auto-reset.

    step() returns a dict of stacked arrays; done envs are reset in place and
    the pre-reset clean observation is reported for value bootstrapping.
    """

    def __init__(self, cfg: dict, n_envs: int | None = None,
                 task_list: list[TaskId] | None = None, seed: int = 0,
                 level: float = 0.0, noise: bool | None = None,
                 auto_reset: bool = True, command_cfg: dict | None = None,
                 command_sampler=None):
        self.cfg = cfg
        self.task_cfg = cfg["task"]
        self.n = n_envs or cfg["ppo"]["n_envs"]
        names = task_list or cfg["ppo"]["tasks"]
        self.tasks_enabled = [t if isinstance(t, TaskId) else TaskId.from_name(t)
                              for t in names]
        self.rng = np.random.default_rng(seed)
        self.level = float(level)
        self.noise_cfg = dict(cfg["noise"])
        if noise is not None:
            self.noise_cfg["enabled"] = bool(noise)
        self.auto_reset = auto_reset
        self.command_cfg = command_cfg or cfg["ppo"]
        self.command_sampler = command_sampler
        self.dt = cfg["dynamics"]["dt_physics"] * cfg["dynamics"]["substeps"]
        self.omega_max = float(cfg["task"]["omega_max"])
        self.nominal = MavParams.from_config(cfg["dynamics"])
        self.anchor_cfg = np.array(cfg["task"]["anchor"], dtype=float)

        n = self.n
        self.params = self.nominal.batched(n)
        self.state = hover_state(self.params, np.tile(self.anchor_cfg, (n, 1)))
        self.task = np.zeros(n, dtype=int)
        self.param = np.zeros(n)
        self.anchor_p = np.tile(self.anchor_cfg, (n, 1))
        self.anchor_psi = np.zeros(n)
        self.progress = TaskProgress.zeros((n,))
        self.prev_action = np.zeros((n, ACT_DIM))
        self.done_latch = np.zeros(n, dtype=bool)
        self.ep_return = np.zeros(n)
        self._reset_indices(np.arange(n))

    def set_level(self, level: float) -> None:
        self.level = float(np.clip(level, 0.0, 1.0))

    def _reset_indices(self, idx: np.ndarray) -> None:
        if len(idx) == 0:
            return
        k = len(idx)
        new_tasks = self.rng.choice([int(t) for t in self.tasks_enabled], size=k)
        st, pr, psi0 = dynamics.randomize_init(self.rng, self.level, self.anchor_cfg,
                                               self.cfg["randomization"], self.nominal, n=k)
        anchor_p = np.tile(self.anchor_cfg, (k, 1))
        anchor_psi = psi0.copy()
        for j in range(k):
            if self.command_sampler is not None:
                self.param[idx[j]] = self.command_sampler(self.rng, TaskId(new_tasks[j]))
            else:
                self.param[idx[j]] = sample_command(self.rng, TaskId(new_tasks[j]), self.command_cfg)
        # Rotate episodes start on the circle, facing the center.
        rot_mask = new_tasks == int(TaskId.ROTATE)
        if np.any(rot_mask):
            r = float(self.task_cfg["rotate_radius"])
            beta = self.rng.uniform(-np.pi, np.pi, size=int(rot_mask.sum()))
            u = np.stack([np.cos(beta), np.sin(beta), np.zeros_like(beta)], axis=-1)
            offset = st.p[rot_mask] - self.anchor_cfg
            st.p[rot_mask] = self.anchor_cfg + r * u + offset
            face = beta + np.pi
            jitter = psi0[rot_mask] * 0.1
            st.R[rot_mask] = rot_z(face + jitter) @ (rot_z(-psi0[rot_mask]) @ st.R[rot_mask])
            anchor_psi[rot_mask] = face + jitter
        _assign_state(self.state, idx, st)
        _assign_params(self.params, idx, pr)
        self.task[idx] = new_tasks
        self.anchor_p[idx] = anchor_p
        self.anchor_psi[idx] = anchor_psi
        _assign_progress(self.progress, idx, TaskProgress.zeros((k,)))
        pa = np.zeros((k, ACT_DIM))
        pa[:, 0] = np.asarray(pr.mass) * self.nominal.gravity
        self.prev_action[idx] = pa
        self.done_latch[idx] = False
        self.ep_return[idx] = 0.0

    def _cmd_vec(self) -> np.ndarray:
        out = np.zeros((self.n, 5))
        out[np.arange(self.n), self.task] = 1.0
        out[:, 4] = self.param
        return out

    def _observations(self, with_noise: bool = True):
        obs = np.zeros((self.n, OBS_DIM))
        obs_clean = np.zeros((self.n, OBS_DIM))
        cmd_vec = self._cmd_vec()
        for t in np.unique(self.task):
            idx = np.nonzero(self.task == t)[0]
            cmd = Command(TaskId(int(t)), self.param[idx])
            anchor = Anchor(self.anchor_p[idx], self.anchor_psi[idx])
            sub = self.state.select(idx)
            prog = _select_progress(self.progress, idx)
            targets = task_targets(cmd, anchor, sub, self.task_cfg, roll_angle=prog.roll_angle)
            rel = rel_state(sub, targets)
            sub_par = self._sub_params(idx)
            obs_clean[idx] = build_observation(rel, self.prev_action[idx], cmd_vec[idx], sub_par)
            if with_noise:
                obs[idx] = build_observation(rel, self.prev_action[idx], cmd_vec[idx], sub_par,
                                             self.noise_cfg, self.rng)
        if not with_noise:
            obs = obs_clean
        return obs, obs_clean

    def _sub_params(self, idx) -> MavParams:
        p = self.params
        return MavParams(mass=p.mass[idx], inertia=p.inertia[idx], drag=p.drag[idx],
                         motor_tc=p.motor_tc[idx], f_motor_max=p.f_motor_max,
                         k_tau=p.k_tau, arm_radius=p.arm_radius, gravity=p.gravity,
                         rate_gain=p.rate_gain, dt_physics=p.dt_physics, substeps=p.substeps)

    def reset(self):
        self._reset_indices(np.arange(self.n))
        return self._observations()

    def step(self, actions: np.ndarray) -> dict:
        actions = clip_action(np.asarray(actions, dtype=float), self.nominal, self.omega_max)
        live = ~self.done_latch
        s_prev = self.state.copy()
        if np.any(live):
            idx = np.nonzero(live)[0]
            sub, _info = dynamics.step(self.state.select(idx), actions[idx], self._sub_params(idx))
            _assign_state(self.state, idx, sub)
            self.prev_action[idx] = actions[idx]

        reward = np.zeros(self.n)
        breakdown = {k: np.zeros(self.n) for k in ("r_pos", "r_lin", "r_ang", "r_cmd", "r_task", "total")}
        status = np.zeros(self.n, dtype=int)
        reason = np.zeros(self.n, dtype=int)
        for t in np.unique(self.task[live]):
            idx = np.nonzero((self.task == t) & live)[0]
            cmd = Command(TaskId(int(t)), self.param[idx])
            anchor = Anchor(self.anchor_p[idx], self.anchor_psi[idx])
            prog, targets, rel, bd, _roll_now = evaluate_step(
                cmd, anchor, s_prev.select(idx), self.state.select(idx),
                _select_progress(self.progress, idx), self.dt, self.task_cfg)
            _assign_progress(self.progress, idx, prog)
            st, rs = check_termination(self.state.select(idx), prog, cmd, anchor, self.task_cfg)
            status[idx] = st
            reason[idx] = rs
            reward[idx] = bd.total
            for key, val in bd.as_dict().items():
                breakdown[key][idx] = val
        self.ep_return += reward

        done = (status != Termination.RUNNING) & live
        truncated = done & np.isin(reason, (Reason.TIMEOUT, Reason.HORIZON))
        terminal = done & ~truncated
        success = (status == Termination.SUCCESS) & done
        ep_summary = self._summaries(np.nonzero(done)[0], success, reason)

        _, final_obs_clean = self._observations(with_noise=False)
        task_before = self.task.copy()
        if self.auto_reset:
            self._reset_indices(np.nonzero(done)[0])
        else:
            self.done_latch |= done
        obs, obs_clean = self._observations()
        return {
            "obs": obs, "obs_clean": obs_clean,
            "reward": reward, "breakdown": breakdown,
            "done": done, "terminal": terminal, "truncated": truncated,
            "success": success, "reason": reason, "task": task_before,
            "final_obs_clean": final_obs_clean,
            "episodes": ep_summary,
        }

    def _summaries(self, idx: np.ndarray, success: np.ndarray, reason: np.ndarray) -> list[dict]:
        out = []
        for i in idx:
            t = TaskId(int(self.task[i]))
            cmd = Command(t, float(self.param[i]))
            anchor = Anchor(self.anchor_p[i], float(self.anchor_psi[i]))
            prog = _select_progress(self.progress, int(i))
            final = self.state.select(int(i))
            cmd_dist = float(prog.cmd_dist)
            if t == TaskId.ROLL and reason[i] != Reason.ROLL_COMPLETE:
                cmd_dist = float(tasks.finalize_roll_cmd_dist(prog, cmd).cmd_dist)
            out.append({
                "env": int(i), "task": t.name.lower(), "param": float(self.param[i]),
                "success": bool(success[i]), "reason": Reason(int(reason[i])).name.lower(),
                "steps": int(prog.step), "return": float(self.ep_return[i]),
                "cmd_dist": cmd_dist,
                "primary_error": primary_error(t, final, prog, cmd, anchor),
            })
        return out


def primary_error(task: TaskId, final: MavState, prog: TaskProgress,
                  cmd: Command, anchor: Anchor) -> float:
    """Headline per-task error: Hover final position m; Flip mean rate error
    rad/s; Roll final angle error rad; Rotate mean tangential-speed error m/s."""
    steps = max(int(np.asarray(prog.step)), 1)
    if task == TaskId.HOVER:
        return float(np.linalg.norm(final.p - np.asarray(anchor.p0, dtype=float)))
    if task == TaskId.FLIP:
        return float(np.asarray(prog.rate_err_sum)) / steps
    if task == TaskId.ROLL:
        return float(abs(np.asarray(prog.roll_angle) - 2.0 * math.pi * float(cmd.param)))
    if task == TaskId.ROTATE:
        return float(np.asarray(prog.tan_err_sum)) / steps
    raise ValueError(f"unknown task {task}")


class FlightSession:
    """Single vehicle flown continuously under switchable commands.

    Used by the maneuver composer and the live service. No auto-reset, no
    horizon; termination events are surfaced, not enforced.
    """

    def __init__(self, cfg: dict, seed: int = 0, level: float = 0.0):
        self.cfg = cfg
        self.task_cfg = cfg["task"]
        self.dt = cfg["dynamics"]["dt_physics"] * cfg["dynamics"]["substeps"]
        self.omega_max = float(cfg["task"]["omega_max"])
        self.nominal = MavParams.from_config(cfg["dynamics"])
        self.rng = np.random.default_rng(seed)
        self.seed = seed
        self.noise_cfg = dict(cfg["noise"])
        self.noise_cfg["enabled"] = False
        self.reset(seed)

    def reset(self, seed: int | None = None) -> None:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
            self.seed = seed
        anchor = np.array(self.task_cfg["anchor"], dtype=float)
        self.params = self.nominal
        self.state = hover_state(self.params, anchor)
        self.t = 0.0
        self.step_idx = 0
        self.prev_action = hover_action(self.params)
        self.issue(Command(TaskId.HOVER, 0.0), Anchor(anchor.copy(), 0.0))

    def pose_anchor(self, task: TaskId) -> Anchor:
        """Default anchor at the current pose; Rotate centers one radius ahead."""
        psi = float(yaw_of(self.state.R))
        p = self.state.p.copy()
        if task == TaskId.ROTATE:
            r = float(self.task_cfg["rotate_radius"])
            center = p + r * np.array([math.cos(psi), math.sin(psi), 0.0])
            return Anchor(center, psi)
        return Anchor(p, psi)

    def issue(self, cmd: Command, anchor: Anchor | None = None) -> None:
        self.cmd = cmd
        self.anchor = anchor if anchor is not None else self.pose_anchor(cmd.task)
        self.progress = TaskProgress.zeros(())
        self.issue_step = self.step_idx
        self.roll_completed = False

    def observe(self, noise: bool = False) -> np.ndarray:
        targets = task_targets(self.cmd, self.anchor, self.state, self.task_cfg,
                               roll_angle=self.progress.roll_angle)
        rel = rel_state(self.state, targets)
        ncfg = dict(self.noise_cfg)
        ncfg["enabled"] = noise
        return build_observation(rel, self.prev_action, self.cmd.one_hot(),
                                 self.params, ncfg, self.rng)

    def step(self, action: np.ndarray | None = None,
             inject: MavState | None = None) -> dict:
        """Advance one policy step by action or by direct state injection."""
        s_prev = self.state
        if inject is not None:
            self.state = inject
            applied = self.prev_action
        else:
            applied = clip_action(np.asarray(action, dtype=float), self.params, self.omega_max)
            self.state, _ = dynamics.step(self.state, applied, self.params)
            self.prev_action = applied
        prog, targets, rel, bd, roll_now = evaluate_step(
            self.cmd, self.anchor, s_prev, self.state, self.progress, self.dt, self.task_cfg)
        self.progress = prog
        if bool(roll_now):
            self.roll_completed = True
        self.t += self.dt
        self.step_idx += 1
        return {
            "t": self.t, "step": self.step_idx, "state": self.state,
            "action": applied, "breakdown": bd, "rel": rel,
            "roll_completed_now": bool(roll_now),
            "progress": self.progress,
        }

    def task_done(self) -> bool:
        """Completion notion used by AfterDone triggers."""
        cmd, prog = self.cmd, self.progress
        if cmd.task == TaskId.ROLL:
            return self.roll_completed
        if cmd.task == TaskId.FLIP:
            angle = float(self.cfg["composer"]["flip_done_angle"])
            return float(np.abs(prog.pitch_cum)) >= angle
        if cmd.task == TaskId.HOVER:
            return bool(tasks.task_success(self.state, prog, cmd, self.anchor, self.task_cfg)) \
                and float(np.linalg.norm(self.state.v)) < 0.2
        return False  # Rotate is continuous; sequence it with AfterTime


class OracleController:
    """Perfect-tracking controller: instead of acting through the dynamics it
    injects the exact task state at each step (the eval/composer oracle)."""

    def __init__(self, cfg: dict):
        self.task_cfg = cfg["task"]
        self.params = MavParams.from_config(cfg["dynamics"])
        self.phase = 0.0

    def on_command(self, cmd: Command, anchor: Anchor, state: MavState) -> MavState:
        self.phase = self._initial_phase(cmd, anchor, state)
        return tasks.perfect_state(cmd, anchor, self.phase, self.params, self.task_cfg)

    def _initial_phase(self, cmd: Command, anchor: Anchor, state: MavState) -> float:
        if cmd.task == TaskId.ROTATE:
            d = state.p - np.asarray(anchor.p0, dtype=float)
            if np.linalg.norm(d[:2]) < 1e-9:
                return float(np.asarray(anchor.psi0)) + math.pi
            return float(math.atan2(d[1], d[0]))
        return 0.0

    def next_state(self, cmd: Command, anchor: Anchor, dt: float) -> MavState:
        if cmd.task == TaskId.ROTATE:
            r = float(self.task_cfg["rotate_radius"])
            self.phase -= float(cmd.param) / r * dt
        elif cmd.task == TaskId.FLIP:
            self.phase += float(cmd.param) * dt
        elif cmd.task == TaskId.ROLL:
            sign = math.copysign(1.0, float(cmd.param)) if cmd.param else 1.0
            limit = 2.0 * math.pi * abs(float(cmd.param))
            rate = float(self.task_cfg["roll_rate"]) * sign
            if abs(self.phase) < limit:
                # keep the rate up through the crossing step so the trapezoid
                # accumulator actually reaches 2 pi N, then settle
                self.phase += rate * dt
                st = tasks.perfect_state(cmd, anchor, self.phase, self.params, self.task_cfg)
                st.omega = np.array([rate, 0.0, 0.0])
                return st
            self.phase = math.copysign(limit, self.phase) if self.phase else limit * sign
        return tasks.perfect_state(cmd, anchor, self.phase, self.params, self.task_cfg)
