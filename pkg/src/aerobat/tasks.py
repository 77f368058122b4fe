"""Aerobatic task MDP pieces: commands, world-frame targets, yaw-invariant
relative state, observations, progress accumulators, termination and success.

Geometry conventions (documented once, used everywhere):

Rotate: the vehicle sits on a circle of radius r around a fixed world center
(the anchor), facing the center, translating tangentially. The world target
p_des is the circle point at the vehicle's current bearing, so p_rel -> 0 at
perfect tracking while the *center* sits at [r,0,0] in the body frame.

Flip: a circular loop of radius r_flip in the vertical plane spanned by the
anchor heading; the loop center sits r_flip above the command position. With
omega_des = +omega about the plane axis (body y at start) and the center
overhead (thrust centripetal), rigid-circle kinematics give a tangential
velocity of -omega*r along body x at the start; the sign pair is forced, the
commanded pitch rate keeps its printed sign.

Roll: rotation about body x at a nominal rate until the commanded number of
signed turns is reached, holding the anchor position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .dynamics import MavState, MavParams, axis_angle, mat_apply
from .symmetry import rot_z

TWO_PI = 2.0 * math.pi
EZ = np.array([0.0, 0.0, 1.0])


class TaskId(IntEnum):
    HOVER = 0
    ROTATE = 1
    FLIP = 2
    ROLL = 3

    @staticmethod
    def from_name(name: str) -> "TaskId":
        try:
            return TaskId[name.upper()]
        except KeyError:
            raise ValueError(f"unknown task {name!r}; expected one of "
                             f"{[t.name.lower() for t in TaskId]}")


class Termination(IntEnum):
    RUNNING = 0
    SUCCESS = 1
    FAILURE = 2


class Reason(IntEnum):
    NONE = 0
    ALTITUDE = 1
    TIMEOUT = 2
    DIVERGED = 3
    ROLL_COMPLETE = 4
    HORIZON = 5


@dataclass
class Command:
    """A task with its single scalar attribute.

    Hover: unused (0). Rotate: tangential speed m/s. Flip: pitch rate rad/s.
    Roll: signed number of turns.
    """

    task: TaskId
    param: float = 0.0

    def one_hot(self) -> np.ndarray:
        out = np.zeros(5)
        out[int(self.task)] = 1.0
        out[4] = float(self.param)
        return out


@dataclass
class Anchor:
    """Pose reference captured when a command is issued."""

    p0: np.ndarray
    psi0: float | np.ndarray = 0.0


@dataclass
class TaskTargets:
    p_des: np.ndarray
    v_des: np.ndarray
    omega_des: np.ndarray   # world frame
    psi_des: float | np.ndarray


@dataclass
class RelState:
    p_rel: np.ndarray
    v_rel: np.ndarray
    omega_rel: np.ndarray
    R_rel: np.ndarray

    def flat(self) -> np.ndarray:
        """18 reals: p_rel, v_rel, omega_rel, then R_rel columns."""
        cols = np.moveaxis(self.R_rel, -1, -2)  # (...,3,3) columns as rows
        flat_R = cols.reshape(cols.shape[:-2] + (9,))
        return np.concatenate([self.p_rel, self.v_rel, self.omega_rel, flat_R], axis=-1)


@dataclass
class TaskProgress:
    """Per-episode accumulators, all trapezoid-integrated at the policy rate."""

    step: np.ndarray
    roll_angle: np.ndarray      # rad about body x, signed, unwrapped
    pitch_cum: np.ndarray       # rad about body y, signed, unwrapped
    radius_err_sum: np.ndarray  # m, Rotate
    tan_err_sum: np.ndarray     # m/s, Rotate
    rate_err_sum: np.ndarray    # rad/s, Flip
    cmd_dist: np.ndarray        # integral |a_ach - a_cmd| dt (C_i)

    @staticmethod
    def zeros(shape=()) -> "TaskProgress":
        z = lambda: np.zeros(shape)
        return TaskProgress(np.zeros(shape, dtype=int), z(), z(), z(), z(), z(), z())

    def copy(self) -> "TaskProgress":
        return TaskProgress(*(getattr(self, f).copy() for f in
                              ("step", "roll_angle", "pitch_cum", "radius_err_sum",
                               "tan_err_sum", "rate_err_sum", "cmd_dist")))


def _planar_unit(d: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    d = d.copy()
    d[..., 2] = 0.0
    n = np.linalg.norm(d, axis=-1, keepdims=True)
    return np.where(n > 1e-9, d / np.maximum(n, 1e-9), fallback)


def task_targets(cmd: Command, anchor: Anchor, state: MavState | None = None,
                 task_cfg: dict | None = None,
                 roll_angle: np.ndarray | float = 0.0) -> TaskTargets:
    """World-frame targets for one task. Rotate and Flip are state-dependent
    (the target point tracks the vehicle's phase on its circle); Roll gates
    omega_des on the accumulated roll angle."""
    from .config import DEFAULTS
    cfg = task_cfg or DEFAULTS["task"]
    p0 = np.asarray(anchor.p0, dtype=float)
    psi0 = np.asarray(anchor.psi0, dtype=float)
    batch = p0.shape[:-1]
    zeros3 = np.zeros(batch + (3,))

    if cmd.task == TaskId.HOVER:
        return TaskTargets(p0.copy(), zeros3, zeros3.copy(), psi0.copy())

    if cmd.task == TaskId.ROTATE:
        if state is None:
            raise ValueError("Rotate targets need the current state")
        r = float(cfg["rotate_radius"])
        v = np.asarray(cmd.param, dtype=float)
        heading = np.stack([np.cos(psi0), np.sin(psi0), np.zeros(batch or ())], axis=-1)
        u_out = _planar_unit(state.p - p0, -heading)
        q = p0 + r * u_out
        x_des = -u_out
        psi_des = np.arctan2(x_des[..., 1], x_des[..., 0])
        # tangent: z x x_des
        tangent = np.stack([-x_des[..., 1], x_des[..., 0], np.zeros(batch or ())], axis=-1)
        v_des = v[..., None] * tangent
        omega_des = np.zeros(batch + (3,))
        omega_des[..., 2] = -v / r
        return TaskTargets(q, v_des, omega_des, psi_des)

    if cmd.task == TaskId.FLIP:
        if state is None:
            raise ValueError("Flip targets need the current state")
        r = float(cfg["flip_radius"])
        w = np.asarray(cmd.param, dtype=float)
        center = p0 + r * EZ
        axis = mat_apply(rot_z(psi0), np.broadcast_to([0.0, 1.0, 0.0], batch + (3,)))
        d = state.p - center
        d_pl = d - np.sum(d * axis, axis=-1, keepdims=True) * axis
        n = np.linalg.norm(d_pl, axis=-1, keepdims=True)
        w_hat = np.where(n > 1e-9, d_pl / np.maximum(n, 1e-9), -EZ)
        p_des = center + r * w_hat
        omega_des = w[..., None] * axis
        v_des = np.cross(omega_des, p_des - center)
        return TaskTargets(p_des, v_des, omega_des, psi0.copy())

    if cmd.task == TaskId.ROLL:
        turns = np.asarray(cmd.param, dtype=float)
        rate = float(cfg["roll_rate"])
        phi = np.asarray(roll_angle, dtype=float)
        active = np.abs(phi) < TWO_PI * np.abs(turns)
        axis = mat_apply(rot_z(psi0), np.broadcast_to([1.0, 0.0, 0.0], batch + (3,)))
        omega_des = np.where(active[..., None], rate * np.sign(turns)[..., None] * axis, 0.0)
        return TaskTargets(p0.copy(), zeros3, omega_des, psi0.copy())

    raise ValueError(f"unknown task {cmd.task}")


def rel_state(state: MavState, targets: TaskTargets) -> RelState:
    """Yaw-invariant relative state.

    omega_rel maps the world-frame target rate into the body frame and
    subtracts the (already body-frame) rate: R^T omega_des - omega. This is
    the form the invariance property forces; see the design notes.
    """
    Rt = np.swapaxes(state.R, -1, -2)
    p_rel = mat_apply(Rt, targets.p_des - state.p)
    v_rel = mat_apply(Rt, targets.v_des - state.v)
    omega_rel = mat_apply(Rt, targets.omega_des) - state.omega
    R_rel = Rt @ rot_z(np.asarray(targets.psi_des, dtype=float))
    return RelState(p_rel, v_rel, omega_rel, R_rel)


def build_observation(rel: RelState, prev_action: np.ndarray, cmd_vec: np.ndarray,
                      params: MavParams, noise_cfg: dict | None = None,
                      rng: np.random.Generator | None = None) -> np.ndarray:
    """27 reals: rel(18) | prev_action(4, thrust normalized by m g) | cmd(5).

    Noise (actor observations only) perturbs the rel components: Gaussian on
    p/v/omega, a random small rotation on R_rel.
    """
    p_rel, v_rel, om_rel, R_rel = rel.p_rel, rel.v_rel, rel.omega_rel, rel.R_rel
    if noise_cfg and noise_cfg.get("enabled") and rng is not None:
        shape = p_rel.shape
        p_rel = p_rel + rng.normal(0.0, noise_cfg["pos"], shape)
        v_rel = v_rel + rng.normal(0.0, noise_cfg["vel"], shape)
        om_rel = om_rel + rng.normal(0.0, noise_cfg["omega"], shape)
        rv = rng.normal(0.0, np.deg2rad(noise_cfg["rot_deg"]), shape)
        R_rel = R_rel @ axis_angle(rv, np.linalg.norm(rv, axis=-1))
    noisy = RelState(p_rel, v_rel, om_rel, R_rel).flat()
    prev = np.asarray(prev_action, dtype=float).copy()
    prev[..., 0] = prev[..., 0] / (np.asarray(params.mass) * params.gravity)
    return np.concatenate([noisy, prev, np.asarray(cmd_vec, dtype=float)], axis=-1)


def rotate_tangential_speed(state: MavState, anchor: Anchor) -> np.ndarray:
    """Signed speed along the Rotate tangent direction (the achieved attribute)."""
    p0 = np.asarray(anchor.p0, dtype=float)
    psi0 = np.asarray(anchor.psi0, dtype=float)
    batch = p0.shape[:-1]
    heading = np.stack([np.cos(psi0), np.sin(psi0), np.zeros(batch or ())], axis=-1)
    u_out = _planar_unit(state.p - p0, -heading)
    tangent = np.stack([u_out[..., 1], -u_out[..., 0], np.zeros(batch or ())], axis=-1)
    return np.sum(state.v * tangent, axis=-1)


def achieved_attribute(cmd: Command, state: MavState, anchor: Anchor) -> np.ndarray:
    """Instantaneous achieved value of the commanded attribute (a_ach)."""
    if cmd.task == TaskId.HOVER:
        return np.zeros(np.shape(np.asarray(anchor.psi0)))
    if cmd.task == TaskId.ROTATE:
        return rotate_tangential_speed(state, anchor)
    if cmd.task == TaskId.FLIP:
        return state.omega[..., 1]
    if cmd.task == TaskId.ROLL:
        return np.zeros(np.shape(np.asarray(anchor.psi0)))
    raise ValueError(f"unknown task {cmd.task}")


def update_progress(progress: TaskProgress, s_prev: MavState, s: MavState,
                    cmd: Command, anchor: Anchor, dt: float,
                    task_cfg: dict | None = None) -> TaskProgress:
    """Advance accumulators by one policy step (trapezoid rule, hence additive
    under trajectory splits)."""
    from .config import DEFAULTS
    cfg = task_cfg or DEFAULTS["task"]
    out = progress.copy()
    out.step = progress.step + 1
    out.roll_angle = progress.roll_angle + 0.5 * (s_prev.omega[..., 0] + s.omega[..., 0]) * dt
    out.pitch_cum = progress.pitch_cum + 0.5 * (s_prev.omega[..., 1] + s.omega[..., 1]) * dt
    if cmd.task == TaskId.ROTATE:
        p0 = np.asarray(anchor.p0, dtype=float)
        radius = np.linalg.norm((s.p - p0)[..., :2], axis=-1)
        out.radius_err_sum = progress.radius_err_sum + np.abs(radius - float(cfg["rotate_radius"]))
        a_ach = rotate_tangential_speed(s, anchor)
        err = np.abs(a_ach - np.asarray(cmd.param))
        out.tan_err_sum = progress.tan_err_sum + err
        out.cmd_dist = progress.cmd_dist + err * dt
    elif cmd.task == TaskId.FLIP:
        err = np.abs(s.omega[..., 1] - np.asarray(cmd.param))
        out.rate_err_sum = progress.rate_err_sum + err
        out.cmd_dist = progress.cmd_dist + err * dt
    # Hover: attribute error is identically zero. Roll: a single final term is
    # added by finalize_roll_cmd_dist at episode end.
    return out


def finalize_roll_cmd_dist(progress: TaskProgress, cmd: Command) -> TaskProgress:
    """Roll's command distance is |achieved turns - commanded turns| once."""
    out = progress.copy()
    out.cmd_dist = progress.cmd_dist + np.abs(progress.roll_angle / TWO_PI - np.asarray(cmd.param))
    return out


def geodesic_angle(R: np.ndarray, R_des: np.ndarray) -> np.ndarray:
    """Rotation angle between attitudes; equals 2 arccos |q . q_des|."""
    M = np.swapaxes(R, -1, -2) @ R_des
    tr = np.trace(M, axis1=-2, axis2=-1)
    return np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0))


def task_success(s: MavState, progress: TaskProgress, cmd: Command,
                 anchor: Anchor, task_cfg: dict | None = None) -> np.ndarray:
    """Strict-inequality success predicates on the final state/accumulators."""
    from .config import DEFAULTS
    cfg = task_cfg or DEFAULTS["task"]
    if cmd.task == TaskId.HOVER:
        pos_err = np.linalg.norm(s.p - np.asarray(anchor.p0, dtype=float), axis=-1)
        ang = geodesic_angle(s.R, rot_z(np.asarray(anchor.psi0, dtype=float)))
        return (pos_err < float(cfg["hover_pos_tol"])) & (ang < np.deg2rad(float(cfg["hover_ang_tol_deg"])))
    if cmd.task == TaskId.FLIP:
        signed = progress.pitch_cum * np.sign(np.asarray(cmd.param))
        return signed >= math.pi
    if cmd.task == TaskId.ROLL:
        return np.abs(progress.roll_angle - TWO_PI * np.asarray(cmd.param)) < float(cfg["roll_tol"])
    if cmd.task == TaskId.ROTATE:
        steps = np.maximum(progress.step, 1)
        return progress.radius_err_sum / steps < float(cfg["rotate_radius_tol"])
    raise ValueError(f"unknown task {cmd.task}")


def check_termination(s: MavState, progress: TaskProgress, cmd: Command,
                      anchor: Anchor, task_cfg: dict | None = None):
    """(status, reason) arrays. Horizon reached resolves to SUCCESS when the
    task's success predicate already holds, else FAILURE(timeout); Roll gets
    its completion transition at |phi| >= 2pi|N|."""
    from .config import DEFAULTS
    cfg = task_cfg or DEFAULTS["task"]
    shape = np.shape(progress.step)
    status = np.zeros(shape, dtype=int)
    reason = np.zeros(shape, dtype=int)

    finite = np.isfinite(s.p).all(axis=-1) & np.isfinite(s.v).all(axis=-1) & \
        np.isfinite(s.omega).all(axis=-1) & np.isfinite(s.R).all(axis=(-2, -1))
    diverged = ~finite | (np.linalg.norm(s.v, axis=-1) > float(cfg["diverge_speed"])) | \
        (np.linalg.norm(s.omega, axis=-1) > 20.0 * TWO_PI)
    low = s.p[..., 2] < float(cfg["z_min"])

    status = np.where(diverged, Termination.FAILURE, status)
    reason = np.where(diverged, Reason.DIVERGED, reason)
    hit = diverged
    sel = ~hit & low
    status = np.where(sel, Termination.FAILURE, status)
    reason = np.where(sel, Reason.ALTITUDE, reason)
    hit = hit | sel

    if cmd.task == TaskId.ROLL:
        done = np.abs(progress.roll_angle) >= TWO_PI * np.abs(np.asarray(cmd.param))
        sel = ~hit & done
        status = np.where(sel, Termination.SUCCESS, status)
        reason = np.where(sel, Reason.ROLL_COMPLETE, reason)
        hit = hit | sel

    horizon = progress.step >= int(cfg["horizon"])
    sel = ~hit & horizon
    if np.any(sel):
        ok = task_success(s, progress, cmd, anchor, cfg)
        status = np.where(sel & ok, Termination.SUCCESS, status)
        reason = np.where(sel & ok, Reason.HORIZON, reason)
        status = np.where(sel & ~ok, Termination.FAILURE, status)
        reason = np.where(sel & ~ok, Reason.TIMEOUT, reason)
    return status, reason


def perfect_state(cmd: Command, anchor: Anchor, phase: float,
                  params: MavParams, task_cfg: dict | None = None) -> MavState:
    """Exact task-tracking state at the given maneuver phase.

    Hover: phase ignored. Rotate: phase = bearing angle on the circle.
    Flip/Roll: phase = rotation angle. All rel components vanish and the
    reward factors sit at their maxima (the perfect-tracking fixed point).
    """
    from .config import DEFAULTS
    from .dynamics import rot_x, rot_y, hover_state
    cfg = task_cfg or DEFAULTS["task"]
    p0 = np.asarray(anchor.p0, dtype=float)
    psi0 = float(np.asarray(anchor.psi0))
    hover = float(np.asarray(params.mass)) * params.gravity / 4.0
    motor = np.full(4, hover)

    if cmd.task == TaskId.HOVER:
        return hover_state(params, p0, psi0)
    if cmd.task == TaskId.ROTATE:
        r = float(cfg["rotate_radius"])
        v = float(cmd.param)
        beta = float(phase)
        u_out = np.array([math.cos(beta), math.sin(beta), 0.0])
        p = p0 + r * u_out
        R = rot_z(beta + math.pi)
        tangent = np.array([u_out[1], -u_out[0], 0.0])
        vel = v * tangent
        omega = np.array([0.0, 0.0, -v / r])
        return MavState(p, vel, R, omega.copy(), motor.copy())
    if cmd.task == TaskId.FLIP:
        # phase is the signed pitch angle (= omega * t for constant tracking)
        r = float(cfg["flip_radius"])
        w = float(cmd.param)
        o = p0 + r * EZ
        R = rot_z(psi0) @ rot_y(float(phase))
        p = o - r * R[:, 2]
        vel = -r * w * R[:, 0]
        omega = np.array([0.0, w, 0.0])
        return MavState(p, vel, R, omega, motor.copy())
    if cmd.task == TaskId.ROLL:
        # phase is the signed roll angle
        sign = np.sign(float(cmd.param)) if cmd.param else 1.0
        rate = float(cfg["roll_rate"]) * sign
        R = rot_z(psi0) @ rot_x(float(phase))
        omega = np.array([rate, 0.0, 0.0])
        if abs(float(phase)) >= TWO_PI * abs(float(cmd.param)):
            omega = np.zeros(3)
        return MavState(p0.copy(), np.zeros(3), R, omega, motor.copy())
    raise ValueError(f"unknown task {cmd.task}")
