"""Task target geometry, relative state, accumulators and termination
against hand-computed cases."""

import numpy as np
import pytest

from aerobat.dynamics import MavState, axis_angle, hover_state, rot_x, rot_y
from aerobat.symmetry import rot_z
from aerobat.tasks import (Anchor, Command, Reason, RelState, TaskId,
                           TaskProgress, Termination, achieved_attribute,
                           build_observation, check_termination,
                           finalize_roll_cmd_dist, geodesic_angle,
                           perfect_state, rel_state, rotate_tangential_speed,
                           task_success, task_targets, update_progress)


def mk_state(p, v=(0, 0, 0), R=None, omega=(0, 0, 0)):
    return MavState(np.asarray(p, float), np.asarray(v, float),
                    np.eye(3) if R is None else R,
                    np.asarray(omega, float), np.zeros(4))


ANCHOR = Anchor(np.array([1.0, 2.0, 1.5]), 0.4)


def test_hover_targets(cfg):
    t = task_targets(Command(TaskId.HOVER, 0.0), ANCHOR, task_cfg=cfg["task"])
    assert np.array_equal(t.p_des, ANCHOR.p0)
    assert np.all(t.v_des == 0.0) and np.all(t.omega_des == 0.0)
    assert t.psi_des == ANCHOR.psi0


def test_rotate_targets_hand_case(cfg):
    # vehicle due +x of the center: outward unit is exactly (1, 0, 0)
    st = mk_state(ANCHOR.p0 + np.array([2.4, 0.0, 0.3]))
    t = task_targets(Command(TaskId.ROTATE, 3.0), ANCHOR, st, cfg["task"])
    r = cfg["task"]["rotate_radius"]
    assert np.allclose(t.p_des, ANCHOR.p0 + [r, 0, 0], atol=1e-12)
    assert abs(t.psi_des) == pytest.approx(np.pi)            # facing the center
    assert np.allclose(t.v_des, [0.0, -3.0, 0.0], atol=1e-12)  # clockwise
    assert np.allclose(t.omega_des, [0.0, 0.0, -3.0 / r], atol=1e-12)


def test_rotate_targets_consistent_with_circle_kinematics(cfg, rng):
    # v_des must equal d/dt of the circle point at bearing rate -v/r
    r = cfg["task"]["rotate_radius"]
    v = -2.2
    for _ in range(20):
        beta = rng.uniform(-np.pi, np.pi)
        u = np.array([np.cos(beta), np.sin(beta), 0.0])
        st = mk_state(ANCHOR.p0 + 1.7 * u)
        t = task_targets(Command(TaskId.ROTATE, v), ANCHOR, st, cfg["task"])
        beta_dot = -v / r
        dpdt = r * beta_dot * np.array([-np.sin(beta), np.cos(beta), 0.0])
        assert np.allclose(t.v_des, dpdt, atol=1e-12)
        assert np.allclose(t.p_des, ANCHOR.p0 + r * u, atol=1e-12)


def test_rotate_targets_degenerate_center(cfg):
    st = mk_state(ANCHOR.p0)   # directly on the axis: fall back to heading
    t = task_targets(Command(TaskId.ROTATE, 3.0), ANCHOR, st, cfg["task"])
    assert np.isfinite(t.p_des).all() and np.isfinite(t.v_des).all()
    u = -np.array([np.cos(ANCHOR.psi0), np.sin(ANCHOR.psi0), 0.0])
    assert np.allclose(t.p_des, ANCHOR.p0 + cfg["task"]["rotate_radius"] * u, atol=1e-12)


def test_flip_targets_hand_case(cfg):
    anchor = Anchor(np.array([0.0, 0.0, 1.5]), 0.0)
    r = cfg["task"]["flip_radius"]
    st = mk_state([0.0, 0.0, 1.5])
    t = task_targets(Command(TaskId.FLIP, 5.0), anchor, st, cfg["task"])
    assert np.allclose(t.p_des, [0, 0, 1.5], atol=1e-12)     # bottom of the loop
    assert np.allclose(t.omega_des, [0, 5.0, 0], atol=1e-12)  # about body/world y
    assert np.allclose(t.v_des, [-2.5, 0, 0], atol=1e-12)    # w x (-r z)
    assert t.psi_des == 0.0

    # off-circle point projects radially within the loop plane
    st = mk_state([0.7, 0.0, 1.8])
    t = task_targets(Command(TaskId.FLIP, 5.0), anchor, st, cfg["task"])
    center = np.array([0, 0, 1.5 + r])
    d = st.p - center
    w_hat = d / np.linalg.norm(d)
    assert np.allclose(t.p_des, center + r * w_hat, atol=1e-12)
    assert np.allclose(t.v_des, np.cross([0, 5.0, 0], t.p_des - center), atol=1e-12)


def test_flip_loop_plane_follows_anchor_yaw(cfg):
    anchor = Anchor(np.array([0.0, 0.0, 1.5]), np.pi / 2)
    st = mk_state([0.0, 0.7, 1.8])
    t = task_targets(Command(TaskId.FLIP, 5.0), anchor, st, cfg["task"])
    assert np.allclose(t.omega_des, [-5.0, 0.0, 0.0], atol=1e-12)  # axis = Rz(psi0) y


def test_roll_targets_gate_on_accumulated_angle(cfg):
    anchor = Anchor(np.array([0.0, 0.0, 1.5]), np.pi / 2)
    cmd = Command(TaskId.ROLL, -2.0)
    rate = cfg["task"]["roll_rate"]
    t = task_targets(cmd, anchor, task_cfg=cfg["task"], roll_angle=-3.0)
    assert np.allclose(t.omega_des, rate * -1.0 * np.array([0.0, 1.0, 0.0]), atol=1e-12)
    assert np.array_equal(t.p_des, anchor.p0)
    t = task_targets(cmd, anchor, task_cfg=cfg["task"], roll_angle=-4.0 * np.pi)
    assert np.all(t.omega_des == 0.0)   # |phi| reached 2 pi |N|


def test_rel_state_hand_case():
    st = mk_state([1.0, 0.0, 2.0], v=[0.5, 0.0, 0.0], R=rot_z(0.3),
                  omega=[0.1, 0.2, 0.3])
    from aerobat.tasks import TaskTargets
    tg = TaskTargets(p_des=np.array([2.0, 0.0, 2.0]),
                     v_des=np.array([0.0, 1.0, 0.0]),
                     omega_des=np.array([0.0, 0.0, -2.5]),
                     psi_des=np.array(0.5))
    rel = rel_state(st, tg)
    Rt = rot_z(0.3).T
    assert np.allclose(rel.p_rel, Rt @ [1.0, 0.0, 0.0], atol=1e-12)
    assert np.allclose(rel.v_rel, Rt @ [-0.5, 1.0, 0.0], atol=1e-12)
    assert np.allclose(rel.omega_rel, Rt @ [0, 0, -2.5] - [0.1, 0.2, 0.3], atol=1e-12)
    assert np.allclose(rel.R_rel, rot_z(0.2), atol=1e-12)


def test_rel_state_flat_layout():
    rel = RelState(np.array([1., 2, 3]), np.array([4., 5, 6]),
                   np.array([7., 8, 9]), np.arange(9.0).reshape(3, 3))
    f = rel.flat()
    assert f.shape == (18,)
    assert np.array_equal(f[:9], [1, 2, 3, 4, 5, 6, 7, 8, 9])
    # rotation entries appear column-major so each column is a planar pair + z
    assert np.array_equal(f[9:12], [0, 3, 6])
    assert np.array_equal(f[12:15], [1, 4, 7])
    assert np.array_equal(f[15:18], [2, 5, 8])


def test_rel_state_invariance_all_tasks(cfg, params, rng):
    from aerobat.symmetry import check_relstate_invariance
    worst = 0.0
    for _ in range(100):
        task = TaskId(int(rng.integers(0, 4)))
        cmd = Command(task, float(rng.uniform(-4, 4)) if task != TaskId.HOVER else 0.0)
        anchor = Anchor(rng.uniform(-2, 2, 3) + [0, 0, 3], float(rng.uniform(-np.pi, np.pi)))
        st = MavState(
            p=anchor.p0 + rng.uniform(-1, 1, 3),
            v=rng.uniform(-2, 2, 3),
            R=axis_angle(rng.normal(size=3), rng.uniform(0, np.pi)),
            omega=rng.uniform(-3, 3, 3),
            motor_f=rng.uniform(0, 2, 4))
        worst = max(worst, check_relstate_invariance(
            st, cmd, anchor, float(rng.uniform(0, 2 * np.pi))))
    assert worst < 1e-9


def test_observation_layout_and_normalization(cfg, params):
    st = mk_state([1.0, 2.0, 1.5])
    tg = task_targets(Command(TaskId.HOVER, 0.0), ANCHOR, task_cfg=cfg["task"])
    rel = rel_state(st, tg)
    prev = np.array([params.hover_thrust, 0.3, -0.2, 0.1])
    cmd_vec = np.array([1.0, 0, 0, 0, 0.0])
    obs = build_observation(rel, prev, cmd_vec, params)
    assert obs.shape == (27,)
    assert np.allclose(obs[:18], rel.flat(), atol=0)
    assert obs[18] == pytest.approx(1.0)      # hover thrust normalizes to 1
    assert np.allclose(obs[19:22], [0.3, -0.2, 0.1], atol=0)
    assert np.allclose(obs[22:27], cmd_vec, atol=0)


def test_observation_noise_gating(cfg, params):
    st = mk_state([1.1, 2.0, 1.4], v=[0.2, 0, 0])
    tg = task_targets(Command(TaskId.HOVER, 0.0), ANCHOR, task_cfg=cfg["task"])
    rel = rel_state(st, tg)
    prev = np.zeros(4)
    cmd_vec = np.array([1.0, 0, 0, 0, 0.0])
    clean = build_observation(rel, prev, cmd_vec, params)
    noisy1 = build_observation(rel, prev, cmd_vec, params, cfg["noise"],
                               np.random.default_rng(5))
    noisy2 = build_observation(rel, prev, cmd_vec, params, cfg["noise"],
                               np.random.default_rng(5))
    assert np.array_equal(noisy1, noisy2)          # seed-deterministic
    assert np.abs(noisy1[:18] - clean[:18]).max() > 0.0
    assert np.array_equal(noisy1[18:], clean[18:])   # only rel part perturbed
    off = dict(cfg["noise"], enabled=False)
    same = build_observation(rel, prev, cmd_vec, params, off, np.random.default_rng(5))
    assert np.array_equal(same, clean)


def test_update_progress_matches_trapezoid_oracle(cfg, rng):
    dt = 0.01
    anchor = Anchor(np.array([0.0, 0.0, 1.5]), 0.0)
    cmd = Command(TaskId.ROLL, 2.0)
    omegas = rng.uniform(-6, 6, size=(40, 3))
    states = [mk_state([0, 0, 1.5], omega=om) for om in omegas]
    prog = TaskProgress.zeros(())
    for i in range(1, 40):
        prog = update_progress(prog, states[i - 1], states[i], cmd, anchor, dt,
                               cfg["task"])
    expect_roll = sum(0.5 * (omegas[i - 1][0] + omegas[i][0]) * dt for i in range(1, 40))
    expect_pitch = sum(0.5 * (omegas[i - 1][1] + omegas[i][1]) * dt for i in range(1, 40))
    assert prog.roll_angle == pytest.approx(expect_roll, abs=1e-12)
    assert prog.pitch_cum == pytest.approx(expect_pitch, abs=1e-12)
    assert prog.step == 39


def test_rotate_progress_accumulators(cfg):
    dt = 0.01
    anchor = Anchor(np.array([0.0, 0.0, 1.5]), 0.0)
    cmd = Command(TaskId.ROTATE, 3.0)
    r = cfg["task"]["rotate_radius"]
    # on-circle, perfect tangential speed: zero errors accumulate
    st = perfect_state(cmd, anchor, 0.8, __import__("aerobat.dynamics", fromlist=["MavParams"]).MavParams.from_config(cfg["dynamics"]), cfg["task"])
    prog = update_progress(TaskProgress.zeros(()), st, st, cmd, anchor, dt, cfg["task"])
    assert prog.radius_err_sum == pytest.approx(0.0, abs=1e-12)
    assert prog.tan_err_sum == pytest.approx(0.0, abs=1e-12)
    # off-circle at wrong speed accumulates the hand value
    st2 = mk_state(anchor.p0 + [r + 0.3, 0, 0], v=[0, -1.0, 0])
    prog2 = update_progress(TaskProgress.zeros(()), st2, st2, cmd, anchor, dt, cfg["task"])
    assert prog2.radius_err_sum == pytest.approx(0.3, abs=1e-12)
    assert prog2.tan_err_sum == pytest.approx(abs(1.0 - 3.0), abs=1e-12)
    assert prog2.cmd_dist == pytest.approx(2.0 * dt, abs=1e-12)


def test_achieved_attribute(cfg):
    anchor = Anchor(np.array([0.0, 0.0, 1.5]), 0.0)
    st = mk_state([1.2, 0, 1.5], v=[0.0, -2.0, 0.0], omega=[0.4, 3.3, 0.1])
    # tangent at +x bearing is (0,-1,0): signed speed +2
    assert achieved_attribute(Command(TaskId.ROTATE, 3.0), st, anchor) == pytest.approx(2.0)
    assert achieved_attribute(Command(TaskId.FLIP, 5.0), st, anchor) == pytest.approx(3.3)
    assert achieved_attribute(Command(TaskId.HOVER, 0.0), st, anchor) == 0.0
    assert achieved_attribute(Command(TaskId.ROLL, 1.0), st, anchor) == 0.0


def test_finalize_roll_cmd_dist():
    prog = TaskProgress.zeros(())
    prog.roll_angle = np.asarray(1.5 * 2 * np.pi)
    out = finalize_roll_cmd_dist(prog, Command(TaskId.ROLL, 2.0))
    assert out.cmd_dist == pytest.approx(0.5)


def test_geodesic_angle(rng):
    for _ in range(50):
        u = rng.normal(size=3)
        th = rng.uniform(-np.pi, np.pi)
        R = axis_angle(u, th)
        assert geodesic_angle(R, np.eye(3)) == pytest.approx(abs(th), abs=1e-9)
    base = rot_z(0.7)
    assert geodesic_angle(base, base) == pytest.approx(0.0, abs=1e-7)


def test_task_success_predicates(cfg, params):
    tc = cfg["task"]
    anchor = Anchor(np.array([0.0, 0.0, 1.5]), 0.0)
    near = mk_state([0.05, 0.0, 1.5], R=rot_z(np.deg2rad(5)))
    far = mk_state([0.3, 0.0, 1.5])
    prog = TaskProgress.zeros(())
    assert task_success(near, prog, Command(TaskId.HOVER, 0.0), anchor, tc)
    assert not task_success(far, prog, Command(TaskId.HOVER, 0.0), anchor, tc)
    tilted = mk_state([0.0, 0.0, 1.5], R=rot_x(np.deg2rad(20)))
    assert not task_success(tilted, prog, Command(TaskId.HOVER, 0.0), anchor, tc)

    p = TaskProgress.zeros(())
    p.pitch_cum = np.asarray(3.2)
    assert task_success(near, p, Command(TaskId.FLIP, 5.0), anchor, tc)
    p.pitch_cum = np.asarray(-3.2)
    assert task_success(near, p, Command(TaskId.FLIP, -5.0), anchor, tc)
    assert not task_success(near, p, Command(TaskId.FLIP, 5.0), anchor, tc)

    p = TaskProgress.zeros(())
    p.roll_angle = np.asarray(2 * np.pi * 2 + 0.1)
    assert task_success(near, p, Command(TaskId.ROLL, 2.0), anchor, tc)
    p.roll_angle = np.asarray(2 * np.pi * 2 + 0.5)
    assert not task_success(near, p, Command(TaskId.ROLL, 2.0), anchor, tc)

    p = TaskProgress.zeros(())
    p.step = np.asarray(100)
    p.radius_err_sum = np.asarray(100 * 0.05)
    assert task_success(near, p, Command(TaskId.ROTATE, 3.0), anchor, tc)
    p.radius_err_sum = np.asarray(100 * 0.15)
    assert not task_success(near, p, Command(TaskId.ROTATE, 3.0), anchor, tc)


def test_termination_precedence_and_reasons(cfg):
    tc = cfg["task"]
    anchor = Anchor(np.array([0.0, 0.0, 1.5]), 0.0)
    cmd = Command(TaskId.ROLL, 1.0)
    prog = TaskProgress.zeros(())

    ok = mk_state([0, 0, 1.5])
    s, r = check_termination(ok, prog, cmd, anchor, tc)
    assert int(s) == Termination.RUNNING and int(r) == Reason.NONE

    low = mk_state([0, 0, 0.05])
    s, r = check_termination(low, prog, cmd, anchor, tc)
    assert int(s) == Termination.FAILURE and int(r) == Reason.ALTITUDE

    fast = mk_state([0, 0, 1.5], v=[60, 0, 0])
    s, r = check_termination(fast, prog, cmd, anchor, tc)
    assert int(s) == Termination.FAILURE and int(r) == Reason.DIVERGED

    nan = mk_state([np.nan, 0, 0.05])   # divergence outranks altitude
    s, r = check_termination(nan, prog, cmd, anchor, tc)
    assert int(s) == Termination.FAILURE and int(r) == Reason.DIVERGED

    done = TaskProgress.zeros(())
    done.roll_angle = np.asarray(2 * np.pi + 0.01)
    s, r = check_termination(ok, done, cmd, anchor, tc)
    assert int(s) == Termination.SUCCESS and int(r) == Reason.ROLL_COMPLETE
    # altitude still outranks completion
    s, r = check_termination(low, done, cmd, anchor, tc)
    assert int(s) == Termination.FAILURE and int(r) == Reason.ALTITUDE

    # horizon: success iff the task predicate holds at the final step
    h = TaskProgress.zeros(())
    h.step = np.asarray(tc["horizon"])
    hover_cmd = Command(TaskId.HOVER, 0.0)
    s, r = check_termination(mk_state([0.01, 0, 1.5]), h, hover_cmd, anchor, tc)
    assert int(s) == Termination.SUCCESS and int(r) == Reason.HORIZON
    s, r = check_termination(mk_state([0.5, 0, 1.5]), h, hover_cmd, anchor, tc)
    assert int(s) == Termination.FAILURE and int(r) == Reason.TIMEOUT


def test_perfect_state_has_zero_rel_errors(cfg, params):
    anchor = Anchor(np.array([0.5, -1.0, 2.0]), 0.7)
    cases = [
        (Command(TaskId.HOVER, 0.0), [0.0]),
        (Command(TaskId.ROTATE, 3.0), np.linspace(-3, 3, 7)),
        (Command(TaskId.ROTATE, -2.0), [0.3]),
        (Command(TaskId.FLIP, 5.0), np.linspace(0, 2 * np.pi, 9)),
        (Command(TaskId.ROLL, 2.0), np.linspace(0, 4 * np.pi - 0.1, 9)),
    ]
    for cmd, phases in cases:
        for ph in phases:
            st = perfect_state(cmd, anchor, float(ph), params, cfg["task"])
            tg = task_targets(cmd, anchor, st, cfg["task"], roll_angle=float(ph))
            rel = rel_state(st, tg)
            assert np.abs(rel.p_rel).max() < 1e-9, (cmd.task, ph)
            assert np.abs(rel.v_rel).max() < 1e-9, (cmd.task, ph)
            assert np.abs(rel.omega_rel).max() < 1e-9, (cmd.task, ph)
