"""SO(2) machinery: yaw group action, feature layouts, representation
matrices and equivariance checkers.

The group acts on world quantities by rotation about world z:
g . (p, v, R, omega) = (Rz p, Rz v, Rz R, omega). Body-frame quantities are
untouched. Feature vectors are structured by a FeatureLayout into planar
VecPair channels (rotating under the 2x2 rotation block) and invariant
Scalar channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class GroupElement:
    """Rotation about world z by theta, normalized to [0, 2pi)."""

    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", float(self.theta) % TWO_PI)

    def compose(self, other: "GroupElement") -> "GroupElement":
        return GroupElement(self.theta + other.theta)

    def inverse(self) -> "GroupElement":
        return GroupElement(-self.theta)

    @property
    def matrix(self) -> np.ndarray:
        return rot_z(self.theta)


def rot_z(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    out = np.zeros(theta.shape + (3, 3))
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    out[..., 2, 2] = 1.0
    return out


def rot2(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def act_on_state(g: GroupElement | float, state):
    """Rotate a MavState about world z. Body rates and motor thrusts are fixed."""
    from .dynamics import MavState

    theta = g.theta if isinstance(g, GroupElement) else float(g)
    Rz = rot_z(theta)
    return MavState(
        p=np.einsum("ij,...j->...i", Rz, state.p),
        v=np.einsum("ij,...j->...i", Rz, state.v),
        R=Rz @ state.R,
        omega=state.omega.copy(),
        motor_f=state.motor_f.copy(),
    )


def act_on_targets(g: GroupElement | float, targets):
    """Rotate task targets: (Rz p_des, Rz v_des, Rz omega_des, psi_des + theta)."""
    from .tasks import TaskTargets

    theta = g.theta if isinstance(g, GroupElement) else float(g)
    Rz = rot_z(theta)
    return TaskTargets(
        p_des=np.einsum("ij,...j->...i", Rz, targets.p_des),
        v_des=np.einsum("ij,...j->...i", Rz, targets.v_des),
        omega_des=np.einsum("ij,...j->...i", Rz, targets.omega_des),
        psi_des=targets.psi_des + theta,
    )


@dataclass(frozen=True)
class VecPair:
    ix: int
    iy: int


@dataclass(frozen=True)
class Scalar:
    i: int


@dataclass(frozen=True)
class FeatureLayout:
    """Partition of a feature vector into VecPair and Scalar channels.

    Indices must cover 0..dim-1 exactly once; rep_matrix places a 2x2
    rotation block on every pair and 1 on every scalar.
    """

    channels: tuple
    dim: int = field(init=False)

    def __post_init__(self):
        seen = []
        for ch in self.channels:
            if isinstance(ch, VecPair):
                seen += [ch.ix, ch.iy]
            elif isinstance(ch, Scalar):
                seen.append(ch.i)
            else:
                raise TypeError(f"layout channel must be VecPair or Scalar, got {type(ch).__name__}")
        if sorted(seen) != list(range(len(seen))):
            raise ValueError(f"layout indices must partition 0..{len(seen) - 1} exactly: {sorted(seen)}")
        object.__setattr__(self, "dim", len(seen))

    @property
    def pairs(self) -> list[VecPair]:
        return [c for c in self.channels if isinstance(c, VecPair)]

    @property
    def scalars(self) -> list[Scalar]:
        return [c for c in self.channels if isinstance(c, Scalar)]

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    @property
    def n_scalars(self) -> int:
        return len(self.scalars)

    @staticmethod
    def make(n_pairs: int, n_scalars: int) -> "FeatureLayout":
        """Canonical layout: pairs at (2i, 2i+1), scalars after."""
        chans = [VecPair(2 * i, 2 * i + 1) for i in range(n_pairs)]
        base = 2 * n_pairs
        chans += [Scalar(base + j) for j in range(n_scalars)]
        return FeatureLayout(tuple(chans))


def rep_matrix(layout: FeatureLayout, g: GroupElement | float) -> np.ndarray:
    theta = g.theta if isinstance(g, GroupElement) else float(g)
    c, s = math.cos(theta), math.sin(theta)
    out = np.zeros((layout.dim, layout.dim))
    for ch in layout.channels:
        if isinstance(ch, VecPair):
            out[ch.ix, ch.ix] = c
            out[ch.ix, ch.iy] = -s
            out[ch.iy, ch.ix] = s
            out[ch.iy, ch.iy] = c
        else:
            out[ch.i, ch.i] = 1.0
    return out


def theta_samples(n: int) -> np.ndarray:
    """Deterministic test angles: golden-ratio sequence plus axis-aligned specials."""
    special = np.array([0.0, 0.5 * math.pi, math.pi, 1.5 * math.pi])
    if n <= len(special):
        return special[:n]
    golden = (np.arange(1, n - len(special) + 1) * 0.6180339887498949) % 1.0
    return np.concatenate([special, golden * TWO_PI])


@dataclass
class EquivarianceReport:
    max_violation: float
    tol: float
    trials: int

    @property
    def passed(self) -> bool:
        return bool(self.max_violation < self.tol)


def check_equivariance(fn: Callable[[np.ndarray], np.ndarray],
                       layout_in: FeatureLayout,
                       layout_out: FeatureLayout,
                       n_trials: int = 100,
                       tol: float = 1e-6,
                       rng: np.random.Generator | None = None) -> EquivarianceReport:
    """max_x,theta || f(rho_in x) - rho_out f(x) ||_inf over random probes."""
    rng = rng or np.random.default_rng(0)
    thetas = theta_samples(n_trials)
    worst = 0.0
    for theta in thetas:
        x = rng.normal(size=layout_in.dim)
        rho_in = rep_matrix(layout_in, theta)
        rho_out = rep_matrix(layout_out, theta)
        lhs = fn(rho_in @ x)
        rhs = rho_out @ fn(x)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return EquivarianceReport(worst, tol, len(thetas))


def check_relstate_invariance(state, cmd, anchor, theta: float) -> float:
    """Max abs change of the 18-dim relative state under a joint rotation
    of state and anchor by theta. Zero (to float precision) by construction."""
    from . import tasks

    g = GroupElement(theta)
    t1 = tasks.task_targets(cmd, anchor, state)
    r1 = tasks.rel_state(state, t1).flat()
    rot_anchor = tasks.Anchor(
        p0=np.einsum("ij,...j->...i", rot_z(g.theta), anchor.p0),
        psi0=anchor.psi0 + g.theta,
    )
    s2 = act_on_state(g, state)
    t2 = tasks.task_targets(cmd, rot_anchor, s2)
    r2 = tasks.rel_state(s2, t2).flat()
    return float(np.max(np.abs(r1 - r2)))


def check_dynamics_equivariance(params, n_trials: int = 1000,
                                tol: float = 1e-9,
                                rng: np.random.Generator | None = None,
                                n_steps: int = 1) -> EquivarianceReport:
    """Property check: step(g.s, a) == g.step(s, a) for random states/actions.

    Holds exactly when drag is isotropic in x,y (and inertia z-symmetric);
    an anisotropic drag matrix must break it, which the tests assert.
    """
    from . import dynamics

    rng = rng or np.random.default_rng(0)
    thetas = theta_samples(n_trials)
    n = len(thetas)
    hover = float(np.asarray(params.mass)) * params.gravity / 4.0
    st = dynamics.MavState(
        p=rng.uniform(-2, 2, (n, 3)),
        v=rng.uniform(-3, 3, (n, 3)),
        R=dynamics.axis_angle(rng.normal(size=(n, 3)), rng.uniform(0, np.pi, n)),
        omega=rng.uniform(-4, 4, (n, 3)),
        motor_f=rng.uniform(0.2, 1.8, (n, 4)) * hover,
    )
    a = np.concatenate([rng.uniform(0, 4 * params.f_motor_max, (n, 1)),
                        rng.uniform(-6, 6, (n, 3))], axis=1)
    Rz = rot_z(thetas)

    def rotated(s):
        return dynamics.MavState(
            p=np.einsum("nij,nj->ni", Rz, s.p),
            v=np.einsum("nij,nj->ni", Rz, s.v),
            R=Rz @ s.R,
            omega=s.omega.copy(),
            motor_f=s.motor_f.copy(),
        )

    batched = params.batched(n)
    s1, s2 = st, rotated(st)
    for _ in range(n_steps):
        s1, _ = dynamics.step(s1, a, batched)
        s2, _ = dynamics.step(s2, a, batched)
    s1r = rotated(s1)
    worst = max(
        float(np.max(np.abs(s1r.p - s2.p))),
        float(np.max(np.abs(s1r.v - s2.v))),
        float(np.max(np.abs(s1r.R - s2.R))),
        float(np.max(np.abs(s1r.omega - s2.omega))),
        float(np.max(np.abs(s1r.motor_f - s2.motor_f))),
    )
    return EquivarianceReport(worst, tol, n)
