"""Quadrotor rigid-body simulation with a 1 kHz inner rate loop.

World frame is z-up, gravity -z. Body frame: x forward, y left, z along
thrust. All functions broadcast over leading batch dimensions so a single
state and a stacked batch of states share one code path.

Rotor layout (X configuration, arm radius L at +-45 deg), motor order and
spin signs are fixed here and documented once: FL(+x,+y,-), FR(+x,-y,+),
BR(-x,-y,-), BL(-x,+y,+). Reaction torque of motor i is s_i * k_tau * f_i
about body z.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

E3 = np.array([0.0, 0.0, 1.0])


def skew(w: np.ndarray) -> np.ndarray:
    """[w]_x such that [w]_x v = w x v. Broadcasts over leading dims."""
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def mat_apply(R: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...j->...i", R, v)


def rot_x(a):
    a = np.asarray(a, dtype=float)
    c, s = np.cos(a), np.sin(a)
    out = np.zeros(a.shape + (3, 3))
    out[..., 0, 0] = 1.0
    out[..., 1, 1] = c
    out[..., 1, 2] = -s
    out[..., 2, 1] = s
    out[..., 2, 2] = c
    return out


def rot_y(a):
    a = np.asarray(a, dtype=float)
    c, s = np.cos(a), np.sin(a)
    out = np.zeros(a.shape + (3, 3))
    out[..., 0, 0] = c
    out[..., 0, 2] = s
    out[..., 1, 1] = 1.0
    out[..., 2, 0] = -s
    out[..., 2, 2] = c
    return out


def axis_angle(axis: np.ndarray, angle) -> np.ndarray:
    """Rodrigues rotation matrix; axis need not be unit length."""
    axis = np.asarray(axis, dtype=float)
    angle = np.asarray(angle, dtype=float)
    n = np.linalg.norm(axis, axis=-1, keepdims=True)
    u = np.where(n > 1e-12, axis / np.maximum(n, 1e-12), E3)
    K = skew(u)
    c = np.cos(angle)[..., None, None]
    s = np.sin(angle)[..., None, None]
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + s * K + (1.0 - c) * (K @ K)


def quat_from_R(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w,x,y,z) with w >= 0. Shepperd's method, batched."""
    R = np.asarray(R, dtype=float)
    batch = R.shape[:-2]
    q = np.zeros(batch + (4,))
    t = np.trace(R, axis1=-2, axis2=-1)
    # Four candidate branches, pick the numerically largest pivot.
    cands = np.stack([
        1.0 + t,
        1.0 + R[..., 0, 0] - R[..., 1, 1] - R[..., 2, 2],
        1.0 - R[..., 0, 0] + R[..., 1, 1] - R[..., 2, 2],
        1.0 - R[..., 0, 0] - R[..., 1, 1] + R[..., 2, 2],
    ], axis=-1)
    best = np.argmax(cands, axis=-1)
    s = 2.0 * np.sqrt(np.maximum(np.take_along_axis(cands, best[..., None], -1)[..., 0], 1e-12))
    w0 = 0.25 * s
    x0 = (R[..., 2, 1] - R[..., 1, 2]) / s
    y0 = (R[..., 0, 2] - R[..., 2, 0]) / s
    z0 = (R[..., 1, 0] - R[..., 0, 1]) / s
    q0 = np.stack([w0, x0, y0, z0], axis=-1)
    w1 = (R[..., 2, 1] - R[..., 1, 2]) / s
    x1 = 0.25 * s
    y1 = (R[..., 0, 1] + R[..., 1, 0]) / s
    z1 = (R[..., 0, 2] + R[..., 2, 0]) / s
    q1 = np.stack([w1, x1, y1, z1], axis=-1)
    w2 = (R[..., 0, 2] - R[..., 2, 0]) / s
    x2 = (R[..., 0, 1] + R[..., 1, 0]) / s
    y2 = 0.25 * s
    z2 = (R[..., 1, 2] + R[..., 2, 1]) / s
    q2 = np.stack([w2, x2, y2, z2], axis=-1)
    w3 = (R[..., 1, 0] - R[..., 0, 1]) / s
    x3 = (R[..., 0, 2] + R[..., 2, 0]) / s
    y3 = (R[..., 1, 2] + R[..., 2, 1]) / s
    z3 = 0.25 * s
    q3 = np.stack([w3, x3, y3, z3], axis=-1)
    allq = np.stack([q0, q1, q2, q3], axis=-2)
    q = np.take_along_axis(allq, best[..., None, None], -2)[..., 0, :]
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    flip = np.where(q[..., 0:1] < 0.0, -1.0, 1.0)
    return q * flip


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Gram-Schmidt on columns; third column from the cross product."""
    c0 = R[..., :, 0]
    c1 = R[..., :, 1]
    c0 = c0 / np.linalg.norm(c0, axis=-1, keepdims=True)
    c1 = c1 - np.sum(c0 * c1, axis=-1, keepdims=True) * c0
    c1 = c1 / np.linalg.norm(c1, axis=-1, keepdims=True)
    c2 = np.cross(c0, c1)
    return np.stack([c0, c1, c2], axis=-1)


# Motor order FL, FR, BR, BL; positions at +-45 deg, spins alternate.
_MOTOR_DIRS = np.array([
    [1.0, 1.0, 0.0],
    [1.0, -1.0, 0.0],
    [-1.0, -1.0, 0.0],
    [-1.0, 1.0, 0.0],
]) / np.sqrt(2.0)
_SPINS = np.array([-1.0, 1.0, -1.0, 1.0])


@dataclass
class MavParams:
    """Physical parameters. Fields may carry leading batch dims."""

    mass: Any
    inertia: Any          # (...,3) diagonal
    drag: Any             # (...,3) world-frame linear drag diagonal
    motor_tc: Any
    f_motor_max: float    # fixed hardware limit (from nominal mass)
    k_tau: float
    arm_radius: float
    gravity: float
    rate_gain: np.ndarray  # (3,) s^-1; K_rate = inertia * rate_gain
    dt_physics: float = 0.001
    substeps: int = 10
    torque_map: np.ndarray = field(init=False)   # (3,4): tau = torque_map @ f
    mix_inv: np.ndarray = field(init=False)      # (4,4)

    def __post_init__(self):
        r = _MOTOR_DIRS * self.arm_radius
        # tau_x = sum y_i f_i, tau_y = -sum x_i f_i, tau_z = sum s_i k_tau f_i
        self.torque_map = np.stack([r[:, 1], -r[:, 0], _SPINS * self.k_tau])
        mix = np.vstack([np.ones(4), self.torque_map])
        self.mix_inv = np.linalg.inv(mix)

    @property
    def g_vec(self) -> np.ndarray:
        return np.array([0.0, 0.0, -self.gravity])

    @property
    def k_rate(self) -> np.ndarray:
        return np.asarray(self.inertia) * self.rate_gain

    @property
    def hover_thrust(self) -> Any:
        return np.asarray(self.mass) * self.gravity

    @classmethod
    def from_config(cls, dyn_cfg: dict) -> "MavParams":
        m = float(dyn_cfg["mass"])
        g = float(dyn_cfg["gravity"])
        return cls(
            mass=m,
            inertia=np.array(dyn_cfg["inertia"], dtype=float),
            drag=np.array(dyn_cfg["drag"], dtype=float),
            motor_tc=float(dyn_cfg["motor_tc"]),
            f_motor_max=float(dyn_cfg["thrust_to_weight"]) * m * g / 4.0,
            k_tau=float(dyn_cfg["k_tau"]),
            arm_radius=float(dyn_cfg["arm_radius"]),
            gravity=g,
            rate_gain=np.array(dyn_cfg["rate_gain"], dtype=float),
            dt_physics=float(dyn_cfg["dt_physics"]),
            substeps=int(dyn_cfg["substeps"]),
        )

    def batched(self, n: int) -> "MavParams":
        """Tile per-vehicle fields to a batch; shared geometry stays scalar."""
        return MavParams(
            mass=np.full(n, float(np.asarray(self.mass))),
            inertia=np.tile(np.asarray(self.inertia, dtype=float), (n, 1)),
            drag=np.tile(np.asarray(self.drag, dtype=float), (n, 1)),
            motor_tc=np.full(n, float(np.asarray(self.motor_tc))),
            f_motor_max=self.f_motor_max,
            k_tau=self.k_tau,
            arm_radius=self.arm_radius,
            gravity=self.gravity,
            rate_gain=self.rate_gain,
            dt_physics=self.dt_physics,
            substeps=self.substeps,
        )


@dataclass
class MavState:
    """Kinematic state plus per-motor thrust (first-order lag state)."""

    p: np.ndarray        # (...,3) m
    v: np.ndarray        # (...,3) m/s world
    R: np.ndarray        # (...,3,3) body->world
    omega: np.ndarray    # (...,3) rad/s body
    motor_f: np.ndarray  # (...,4) N

    def copy(self) -> "MavState":
        return MavState(self.p.copy(), self.v.copy(), self.R.copy(),
                        self.omega.copy(), self.motor_f.copy())

    def select(self, idx) -> "MavState":
        return MavState(self.p[idx], self.v[idx], self.R[idx],
                        self.omega[idx], self.motor_f[idx])


def hover_state(params: MavParams, p: np.ndarray | None = None, psi: float = 0.0) -> MavState:
    """Exact hover equilibrium at position p with yaw psi."""
    if p is None:
        p = np.zeros(3)
    p = np.asarray(p, dtype=float)
    from .symmetry import rot_z  # local import; symmetry has no dynamics dep at import time
    R = rot_z(psi)
    hover = np.asarray(params.mass) * params.gravity / 4.0
    motor = np.broadcast_to(np.asarray(hover)[..., None], p.shape[:-1] + (4,)).copy()
    return MavState(
        p=p.copy(),
        v=np.zeros_like(p),
        R=np.broadcast_to(R, p.shape[:-1] + (3, 3)).copy(),
        omega=np.zeros_like(p),
        motor_f=motor,
    )


def hover_action(params: MavParams) -> np.ndarray:
    a = np.zeros(np.shape(np.asarray(params.mass)) + (4,))
    a[..., 0] = np.asarray(params.mass) * params.gravity
    return a


def derivative(state: MavState, thrusts: np.ndarray, params: MavParams):
    """Rigid-body derivatives under the given per-motor thrusts.

    Returns (p_dot, v_dot, R_dot, omega_dot). Drag acts on the world-frame
    velocity; rotor reaction torques alternate sign with spin direction.
    """
    thrusts = np.asarray(thrusts, dtype=float)
    f_sigma = thrusts.sum(axis=-1)
    tau = np.einsum("ij,...j->...i", params.torque_map, thrusts)
    m = np.asarray(params.mass)
    body_z = state.R[..., :, 2]
    v_dot = params.g_vec + (body_z * f_sigma[..., None] - np.asarray(params.drag) * state.v) / m[..., None]
    R_dot = state.R @ skew(state.omega)
    J = np.asarray(params.inertia)
    omega_dot = (tau - np.cross(state.omega, J * state.omega)) / J
    return state.v, v_dot, R_dot, omega_dot


def rate_controller(omega_cmd: np.ndarray, omega: np.ndarray, params: MavParams,
                    k_rate: np.ndarray | None = None) -> np.ndarray:
    """Feedback-linearizing P law: tau = K_rate (cmd - omega) + omega x J omega."""
    if k_rate is None:
        k_rate = params.k_rate
    J = np.asarray(params.inertia)
    return np.asarray(k_rate) * (omega_cmd - omega) + np.cross(omega, J * omega)


def mix(f_sigma: np.ndarray, tau: np.ndarray, params: MavParams):
    """Allocate per-motor thrusts for (f_sigma, tau).

    On saturation the yaw torque is scaled down first (total thrust and
    roll/pitch keep priority); anything still infeasible is clamped.
    Returns (thrusts, saturated_flag).
    """
    f_sigma = np.asarray(f_sigma, dtype=float)
    tau = np.asarray(tau, dtype=float)
    wrench0 = np.stack([f_sigma, tau[..., 0], tau[..., 1], np.zeros_like(f_sigma)], axis=-1)
    t0 = np.einsum("ij,...j->...i", params.mix_inv, wrench0)
    ty = params.mix_inv[:, 3] * tau[..., 2:3]
    fmax = params.f_motor_max
    # Largest kappa in [0,1] keeping t0 + kappa*ty inside [0, fmax].
    with np.errstate(divide="ignore", invalid="ignore"):
        ub_hi = np.where(ty > 0, (fmax - t0) / np.where(ty == 0, 1.0, ty), np.inf)
        ub_lo = np.where(ty < 0, -t0 / np.where(ty == 0, 1.0, ty), np.inf)
    kappa = np.minimum(np.min(np.minimum(ub_hi, ub_lo), axis=-1), 1.0)
    kappa = np.clip(kappa, 0.0, 1.0)
    t = t0 + kappa[..., None] * ty
    clipped = np.clip(t, 0.0, fmax)
    saturated = (kappa < 1.0) | np.any(np.abs(clipped - t) > 1e-12, axis=-1)
    return clipped, saturated


def _aug_deriv(p, v, R, omega, motor_f, setpoints, params: MavParams):
    st = MavState(p, v, R, omega, motor_f)
    p_dot, v_dot, R_dot, omega_dot = derivative(st, motor_f, params)
    tc = np.asarray(params.motor_tc)
    mf_dot = (setpoints - motor_f) / tc[..., None]
    return p_dot, v_dot, R_dot, omega_dot, mf_dot


def step(state: MavState, action: np.ndarray, params: MavParams):
    """Advance one policy step (substeps x dt_physics) under action [f_sigma, omega_cmd].

    Each substep runs the rate controller and mixer once, then RK4-integrates
    position, velocity, attitude, body rates and motor thrusts together; R is
    re-orthonormalized after every substep. Returns (next_state, info) where
    info carries the saturation fraction and last motor setpoints.
    """
    action = np.asarray(action, dtype=float)
    f_cmd = action[..., 0]
    omega_cmd = action[..., 1:4]
    dt = params.dt_physics
    p, v, R, om, mf = state.p, state.v, state.R, state.omega, state.motor_f
    sat_count = 0.0
    setpoints = mf
    for _ in range(params.substeps):
        tau_des = rate_controller(omega_cmd, om, params)
        setpoints, sat = mix(f_cmd, tau_des, params)
        sat_count = sat_count + np.asarray(sat, dtype=float)
        k1 = _aug_deriv(p, v, R, om, mf, setpoints, params)
        k2 = _aug_deriv(p + 0.5 * dt * k1[0], v + 0.5 * dt * k1[1], R + 0.5 * dt * k1[2],
                        om + 0.5 * dt * k1[3], mf + 0.5 * dt * k1[4], setpoints, params)
        k3 = _aug_deriv(p + 0.5 * dt * k2[0], v + 0.5 * dt * k2[1], R + 0.5 * dt * k2[2],
                        om + 0.5 * dt * k2[3], mf + 0.5 * dt * k2[4], setpoints, params)
        k4 = _aug_deriv(p + dt * k3[0], v + dt * k3[1], R + dt * k3[2],
                        om + dt * k3[3], mf + dt * k3[4], setpoints, params)
        p = p + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        v = v + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        R = R + dt / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        om = om + dt / 6.0 * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
        mf = mf + dt / 6.0 * (k1[4] + 2 * k2[4] + 2 * k3[4] + k4[4])
        mf = np.clip(mf, 0.0, params.f_motor_max)
        R = orthonormalize(R)
    info = {
        "saturation": sat_count / params.substeps,
        "setpoints": setpoints,
    }
    return MavState(p, v, R, om, mf), info


def randomize_init(rng: np.random.Generator, level: float, anchor: np.ndarray,
                   rand_cfg: dict, params: MavParams, n: int | None = None):
    """Sample initial state(s) and perturbed params at a curriculum level.

    level 0 is the exact nominal hover state at the anchor; level 1 spans the
    full configured ranges. Returns (state, params, psi0) with psi0 the
    sampled yaw (the episode's heading anchor).
    """
    from .symmetry import rot_z

    level = float(np.clip(level, 0.0, 1.0))
    shape = () if n is None else (n,)
    nb = params if n is None else params.batched(n)

    def u(lo, hi, extra=()):
        return rng.uniform(lo, hi, size=shape + extra)

    pct = lambda width, extra=(): 1.0 + u(-width * level, width * level, extra) if width > 0 and level > 0 else np.ones(shape + extra)
    mass = np.asarray(nb.mass) * pct(rand_cfg["mass_pct"])
    inertia = np.asarray(nb.inertia) * pct(rand_cfg["inertia_pct"], (3,))
    drag = np.asarray(nb.drag) * pct(rand_cfg["drag_pct"], (3,))
    motor_tc = np.asarray(nb.motor_tc) * pct(rand_cfg["motor_tc_pct"])
    out = MavParams(
        mass=mass, inertia=inertia, drag=drag, motor_tc=motor_tc,
        f_motor_max=params.f_motor_max, k_tau=params.k_tau,
        arm_radius=params.arm_radius, gravity=params.gravity,
        rate_gain=params.rate_gain, dt_physics=params.dt_physics,
        substeps=params.substeps,
    )

    anchor = np.asarray(anchor, dtype=float)
    pos_range = np.asarray(rand_cfg["pos"], dtype=float) * level
    p = anchor + u(-1.0, 1.0, (3,)) * pos_range
    psi0 = u(-rand_cfg["yaw_rad"] * level, rand_cfg["yaw_rad"] * level) if level > 0 else np.zeros(shape)
    tilt_max = np.deg2rad(rand_cfg["tilt_deg"]) * level
    tilt_angle = u(0.0, tilt_max) if tilt_max > 0 else np.zeros(shape)
    tilt_dir = u(-np.pi, np.pi)
    axis = np.stack([np.cos(tilt_dir), np.sin(tilt_dir), np.zeros(shape)], axis=-1)
    R = rot_z(psi0) @ axis_angle(axis, tilt_angle)
    v = u(-rand_cfg["vel"] * level, rand_cfg["vel"] * level, (3,)) if level > 0 else np.zeros(shape + (3,))
    om = u(-rand_cfg["rate"] * level, rand_cfg["rate"] * level, (3,)) if level > 0 else np.zeros(shape + (3,))
    hover = (mass * params.gravity / 4.0)[..., None]
    motor = hover * pct(rand_cfg["motor_pct"], (4,))
    state = MavState(p=p, v=v, R=R, omega=om, motor_f=np.clip(motor, 0.0, params.f_motor_max))
    return state, out, psi0
