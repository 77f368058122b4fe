"""Multiplicative tracking reward.

Every factor is a sum of bounded rational kernels H(x;k) = 1/(1+kx) over a
small set of slopes, so each factor lives in (0, max] and the product
r_pos * r_lin * r_ang * r_cmd * r_task peaks at 2*3*3*2*2 = 72 exactly at
the perfect-tracking fixed point. Computed at the policy rate on the clean
(noise-free) relative state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tasks import Command, RelState, TaskId

POS_KS = (1.0, 10.0)
LIN_KS = (1.0, 10.0, 100.0)
ANG_KS = (0.1, 1.0, 10.0)
CMD_KS = (1.0, 10.0)
ROTATE_KS = (0.1, 1.0)
REWARD_MAX = 72.0


def kernel(x, k: float):
    """H(x;k) = 1/(1+kx) on x >= 0 with slope k > 0."""
    if k <= 0:
        raise ValueError(f"kernel slope must be positive, got {k}")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("kernel argument must be non-negative")
    return 1.0 / (1.0 + k * x)


def _ksum(x, ks) -> np.ndarray:
    return sum(kernel(x, k) for k in ks)


@dataclass
class RewardBreakdown:
    r_pos: np.ndarray
    r_lin: np.ndarray
    r_ang: np.ndarray
    r_cmd: np.ndarray
    r_task: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.r_pos * self.r_lin * self.r_ang * self.r_cmd * self.r_task

    def as_dict(self) -> dict:
        return {
            "r_pos": self.r_pos, "r_lin": self.r_lin, "r_ang": self.r_ang,
            "r_cmd": self.r_cmd, "r_task": self.r_task, "total": self.total,
        }


def tracking_terms(rel: RelState):
    """(r_pos, r_lin, r_ang) from squared error norms."""
    r_pos = _ksum(np.sum(rel.p_rel ** 2, axis=-1), POS_KS)
    r_lin = _ksum(np.sum(rel.v_rel ** 2, axis=-1), LIN_KS)
    r_ang = _ksum(np.sum(rel.omega_rel ** 2, axis=-1), ANG_KS)
    return r_pos, r_lin, r_ang


def command_term(a_cmd, a_ach) -> np.ndarray:
    err = np.asarray(a_ach, dtype=float) - np.asarray(a_cmd, dtype=float)
    return _ksum(err ** 2, CMD_KS)


def hover_attitude_angle(rel: RelState) -> np.ndarray:
    """Geodesic angle to the target attitude; equals 2 arccos |q . q_des|."""
    tr = np.trace(rel.R_rel, axis1=-2, axis2=-1)
    return np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0))


def task_term(task: TaskId, rel: RelState) -> np.ndarray:
    """Per-task shaping factor, max 2.

    Hover: attitude geodesic angle (unsquared argument, as specified).
    Rotate: squared body-frame lateral offset of the circle point.
    Roll: alignment of body x with the maneuver-plane x axis; the matrix
    entry is R_rel[0,0] = (R_z(-psi_des) R_bw)[0,0], yaw-anchored.
    Flip: constant (the command factor carries the rate error).
    """
    if task == TaskId.HOVER:
        return _ksum(hover_attitude_angle(rel), CMD_KS)
    if task == TaskId.ROTATE:
        return _ksum(rel.p_rel[..., 1] ** 2, ROTATE_KS)
    if task == TaskId.ROLL:
        return _ksum((1.0 - rel.R_rel[..., 0, 0]) ** 2, CMD_KS)
    if task == TaskId.FLIP:
        base = np.zeros(np.shape(rel.p_rel[..., 0]))
        return base + 2.0
    raise ValueError(f"unknown task {task}")


def compute_reward(cmd: Command, rel: RelState, a_ach,
                   roll_final: np.ndarray | bool = False,
                   roll_turns: np.ndarray | float = 0.0) -> RewardBreakdown:
    """Full reward breakdown for a uniform-task batch.

    Roll's command factor is 2 during execution; at the completion transition
    it is scored once against the achieved number of turns (roll_turns).
    """
    r_pos, r_lin, r_ang = tracking_terms(rel)
    if cmd.task == TaskId.HOVER:
        r_cmd = np.full(np.shape(r_pos), 2.0)
    elif cmd.task == TaskId.ROLL:
        r_cmd = np.where(
            np.asarray(roll_final, dtype=bool),
            command_term(np.asarray(cmd.param, dtype=float), np.asarray(roll_turns, dtype=float)),
            2.0,
        )
    else:
        r_cmd = command_term(np.asarray(cmd.param, dtype=float), a_ach)
    r_task = task_term(cmd.task, rel)
    return RewardBreakdown(np.asarray(r_pos, dtype=float), np.asarray(r_lin, dtype=float),
                           np.asarray(r_ang, dtype=float), np.asarray(r_cmd, dtype=float),
                           np.asarray(r_task, dtype=float))
