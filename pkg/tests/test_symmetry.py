"""Group machinery: representation correctness, detector sensitivity, and
the simulator's planar-rotation commutation property."""

import numpy as np
import pytest

from aerobat.dynamics import MavParams, MavState, axis_angle, hover_state
from aerobat.symmetry import (FeatureLayout, GroupElement, Scalar, VecPair,
                              act_on_state, check_dynamics_equivariance,
                              check_equivariance, rep_matrix, rot_z,
                              theta_samples)


def test_group_axioms():
    g1, g2 = GroupElement(0.7), GroupElement(2.2)
    assert g1.compose(g2).theta == pytest.approx((0.7 + 2.2) % (2 * np.pi))
    gi = g1.compose(g1.inverse())
    assert gi.theta == pytest.approx(0.0, abs=1e-15)
    assert np.allclose(g1.matrix @ g2.matrix, g1.compose(g2).matrix, atol=1e-15)
    assert np.allclose(GroupElement(0.0).matrix, np.eye(3), atol=0)


def test_rot_z_batched():
    a = np.array([0.0, 0.5, -1.0])
    Rs = rot_z(a)
    assert Rs.shape == (3, 3, 3)
    for i in range(3):
        assert np.allclose(Rs[i], rot_z(float(a[i])), atol=0)


def test_layout_validation():
    FeatureLayout((VecPair(0, 1), Scalar(2)))
    with pytest.raises(ValueError):
        FeatureLayout((VecPair(0, 1), Scalar(1)))   # overlap
    with pytest.raises(ValueError):
        FeatureLayout((VecPair(0, 2),))             # gap at 1
    lay = FeatureLayout.make(3, 2)
    assert lay.n_pairs == 3 and lay.n_scalars == 2 and lay.dim == 8
    assert [(p.ix, p.iy) for p in lay.pairs] == [(0, 1), (2, 3), (4, 5)]
    assert [s.i for s in lay.scalars] == [6, 7]


def test_rep_matrix_structure_and_homomorphism(rng):
    lay = FeatureLayout((VecPair(0, 1), Scalar(2), VecPair(3, 4)))
    th = 0.9
    rho = rep_matrix(lay, th)
    c, s = np.cos(th), np.sin(th)
    expect = np.zeros((5, 5))
    expect[0, 0] = expect[1, 1] = c
    expect[0, 1], expect[1, 0] = -s, s
    expect[2, 2] = 1.0
    expect[3, 3] = expect[4, 4] = c
    expect[3, 4], expect[4, 3] = -s, s
    assert np.allclose(rho, expect, atol=1e-15)

    for _ in range(50):
        a, b = rng.uniform(0, 2 * np.pi, 2)
        lhs = rep_matrix(lay, a) @ rep_matrix(lay, b)
        rhs = rep_matrix(lay, GroupElement(a).compose(GroupElement(b)))
        assert np.abs(lhs - rhs).max() < 1e-12
        rho = rep_matrix(lay, a)
        assert np.abs(rho @ rho.T - np.eye(5)).max() < 1e-12   # orthogonal


def test_theta_samples_cover_specials():
    th = theta_samples(100)
    assert len(th) == 100
    for want in (0.0, np.pi / 2, np.pi, 1.5 * np.pi):
        assert np.min(np.abs(th - want)) < 1e-12
    assert np.all((th >= 0.0) & (th < 2 * np.pi))
    assert len(np.unique(np.round(th, 12))) == 100   # no collisions


def test_act_on_state_geometry(params):
    st = hover_state(params, p=np.array([1.0, 0.0, 2.0]))
    st.v = np.array([1.0, 1.0, 0.0])
    st.omega = np.array([0.1, 0.2, 0.3])
    g = GroupElement(np.pi / 2)
    out = act_on_state(g, st)
    assert np.allclose(out.p, [0.0, 1.0, 2.0], atol=1e-12)
    assert np.allclose(out.v, [-1.0, 1.0, 0.0], atol=1e-12)
    assert np.allclose(out.R, rot_z(np.pi / 2) @ st.R, atol=0)
    assert np.array_equal(out.omega, st.omega)      # body frame: untouched
    assert np.array_equal(out.motor_f, st.motor_f)


def test_check_equivariance_accepts_equivariant_map(rng):
    lay_in = FeatureLayout.make(2, 3)
    lay_out = FeatureLayout.make(1, 2)
    a, b = 0.8, -0.4
    W_s = rng.normal(size=(2, 3))

    def fn(x):
        p0, p1 = x[0:2], x[2:4]
        pair = a * p0 + b * np.array([-p0[1], p0[0]]) + 0.3 * p1
        return np.concatenate([pair, W_s @ x[4:7]])

    rep = check_equivariance(fn, lay_in, lay_out, n_trials=64, tol=1e-9, rng=rng)
    assert rep.passed, rep.max_violation


def test_check_equivariance_rejects_broken_map(rng):
    lay_in = FeatureLayout.make(1, 1)
    lay_out = FeatureLayout.make(1, 1)

    def broken(x):
        return np.array([x[0], 0.5 * x[1], x[2]])   # anisotropic pair scaling

    rep = check_equivariance(broken, lay_in, lay_out, n_trials=64, tol=1e-9, rng=rng)
    assert not rep.passed
    assert rep.max_violation > 1e-2


def test_dynamics_equivariance_isotropic(params):
    rep = check_dynamics_equivariance(params, n_trials=200)
    assert rep.passed
    assert rep.max_violation < 1e-9


def test_dynamics_equivariance_breaks_with_anisotropic_drag(params):
    drag = np.asarray(params.drag).copy()
    drag[0] *= 1.5
    aniso = MavParams(
        mass=params.mass, inertia=np.asarray(params.inertia).copy(), drag=drag,
        motor_tc=params.motor_tc, f_motor_max=params.f_motor_max,
        k_tau=params.k_tau, arm_radius=params.arm_radius,
        gravity=params.gravity, rate_gain=params.rate_gain,
        dt_physics=params.dt_physics, substeps=params.substeps)
    rep = check_dynamics_equivariance(aniso, n_trials=100)
    assert not rep.passed
    assert rep.max_violation > 1e-3


def test_dynamics_equivariance_multi_step(params):
    rep = check_dynamics_equivariance(params, n_trials=25, n_steps=5)
    assert rep.max_violation < 1e-9
