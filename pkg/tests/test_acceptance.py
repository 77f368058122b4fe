"""Release gates. One test per shipped guarantee, each with its own budget.

Every numeric bound in here is a contract: loosening one is an interface
change, not a test fix. The tests are self-contained on purpose and rebuild
their oracles from scratch (forward discounted sums, dense-matrix gradients,
hand-counted metrics) rather than importing helpers from the unit suites.

The cockpit gates (connect, frame rate, all command kinds, reconnect after a
service restart) live in frontend/ and run under vitest; nothing in this file
touches that directory, and this suite must pass with frontend/ absent.

The hover training proxy (test_08, defined last) trains six policies to 80%
success and dominates the suite runtime at roughly twenty minutes.
"""

import math
import time

import numpy as np
import torch

from aerobat.composer import load_script, run_script
from aerobat.config import load_config
from aerobat.dynamics import MavParams, MavState, axis_angle, randomize_init
from aerobat.env import sample_command
from aerobat.evaluation import scd, success_rate
from aerobat.nets import (DTYPE, EquivLinear, build_policy, restore_policy,
                          save_checkpoint)
from aerobat.rewards import REWARD_MAX, RewardBreakdown, compute_reward
from aerobat.symmetry import (check_dynamics_equivariance,
                              check_relstate_invariance, rep_matrix, rot_z)
from aerobat.tasks import (Anchor, Command, RelState, TaskId,
                           achieved_attribute, perfect_state, rel_state,
                           task_targets)
from aerobat.trainer import gae, train

FACTORS = ("r_pos", "r_lin", "r_ang", "r_cmd", "r_task")


def _report(line: str) -> None:
    print(f"[acceptance] {line}", flush=True)


def test_01_actor_equivariance(cfg):
    """Every equivariant stage commutes with the planar rotation rep, and the
    composed actor (FiLM at its identity init) maps rotated observations to
    rotated actions."""
    t0 = time.perf_counter()
    policy = build_policy(cfg, seed=0)
    reports = policy.actor.equivariance_reports(n_trials=100)
    assert "actor_composed" in reports and "action_head" in reports
    for name, rep in reports.items():
        assert rep.trials == 100
        tol = 1e-6 if name == "actor_composed" else 1e-9
        assert rep.passed and rep.max_violation < tol, (name, rep.max_violation)

    # Materialized form: W rho_in(theta) == rho_out(theta) W for each linear
    # stage, 100 random angles apiece.
    rng = np.random.default_rng(3)
    worst_mat = 0.0
    for lin in (m for m in policy.actor.modules() if isinstance(m, EquivLinear)):
        W = lin.materialize().detach().numpy()
        for theta in rng.uniform(-np.pi, np.pi, 100):
            gap = W @ rep_matrix(lin.layout_in, theta) - rep_matrix(lin.layout_out, theta) @ W
            worst_mat = max(worst_mat, float(np.max(np.abs(gap))))
    assert worst_mat < 1e-9

    # Invariant-action variant: the whole map must be rotation-invariant.
    pol_inv = build_policy(load_config(overrides={"network.invariant_action": True}), seed=0)
    rep_inv = pol_inv.actor.equivariance_reports(n_trials=100)["actor_composed"]
    assert rep_inv.passed and rep_inv.max_violation < 1e-6

    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    _report(f"01 actor equivariance: worst layer {worst_mat:.2e}, "
            f"composed {reports['actor_composed'].max_violation:.2e}, {elapsed:.1f}s")


def test_02_dynamics_equivariance(cfg):
    """Rotating state and action commutes with one physics step when planar
    drag is isotropic, and measurably fails to when it is not."""
    t0 = time.perf_counter()
    params = MavParams.from_config(cfg["dynamics"])
    good = check_dynamics_equivariance(params, n_trials=1000,
                                       rng=np.random.default_rng(7))
    assert good.passed and good.max_violation < 1e-9

    # Same drag matrix with K_xx raised 50% over K_yy: the symmetry must break.
    skewed = dict(cfg["dynamics"])
    skewed["drag"] = [0.075, 0.05, 0.08]
    bad = check_dynamics_equivariance(MavParams.from_config(skewed), n_trials=1000,
                                      rng=np.random.default_rng(7))
    assert bad.max_violation > 1e-3

    elapsed = time.perf_counter() - t0
    assert elapsed < 5.0
    _report(f"02 dynamics equivariance: isotropic {good.max_violation:.2e}, "
            f"anisotropic {bad.max_violation:.2e}, {elapsed:.1f}s")


def test_03_relstate_invariance(cfg, params):
    """The 18-dim relative state is unchanged, component by component, when
    state and task anchor are rotated together. 1000 draws across all tasks."""
    rng = np.random.default_rng(11)
    anchor_p = np.asarray(cfg["task"]["anchor"], dtype=float)
    worst = 0.0
    for task in TaskId:
        for _ in range(250):
            st, _, psi0 = randomize_init(rng, 1.0, anchor_p,
                                         cfg["randomization"], params)
            anchor = Anchor(anchor_p + rng.uniform(-1.0, 1.0, 3), float(psi0))
            cmd = Command(task, sample_command(rng, task, cfg["eval"]))
            theta = float(rng.uniform(-np.pi, np.pi))
            worst = max(worst, check_relstate_invariance(st, cmd, anchor, theta))
    assert worst < 1e-9
    _report(f"03 relative-state invariance: worst component {worst:.2e}")


def test_04_reward_contract(cfg, params):
    """Perfect tracking scores exactly 72 on every task, the flip ceiling
    decomposes as 2*3*3*2*2, any single enlarged error never raises the
    reward, and joint yaw rotation changes no factor."""
    anchor = Anchor(np.array([0.0, 0.0, 1.5]), 0.3)
    cases = [
        (Command(TaskId.HOVER, 0.0), 0.0, False, 0.0),
        (Command(TaskId.ROTATE, 3.0), 1.1, False, 0.0),
        (Command(TaskId.FLIP, 5.0), 2.0, False, 0.0),
        (Command(TaskId.ROLL, 2.0), 1.0, False, 0.0),
        (Command(TaskId.ROLL, 2.0), 4 * np.pi, True, 2.0),
    ]
    for cmd, phase, roll_final, turns in cases:
        st = perfect_state(cmd, anchor, phase, params, cfg["task"])
        tg = task_targets(cmd, anchor, st, cfg["task"], roll_angle=phase)
        bd = compute_reward(cmd, rel_state(st, tg),
                            achieved_attribute(cmd, st, anchor),
                            roll_final=roll_final, roll_turns=turns)
        assert float(bd.total) == REWARD_MAX, cmd.task

    cmd = Command(TaskId.FLIP, 5.0)
    st = perfect_state(cmd, anchor, 1.3, params, cfg["task"])
    tg = task_targets(cmd, anchor, st, cfg["task"])
    bd = compute_reward(cmd, rel_state(st, tg), achieved_attribute(cmd, st, anchor))
    assert tuple(float(getattr(bd, f)) for f in FACTORS) == (2.0, 3.0, 3.0, 2.0, 2.0)

    # Monotonicity: 1000 pairs, one error channel each, larger magnitude.
    rng = np.random.default_rng(13)
    for _ in range(1000):
        task = TaskId(int(rng.integers(0, 4)))
        pcmd = Command(task, 3.0 if task != TaskId.HOVER else 0.0)
        small = float(rng.uniform(0.01, 1.0))
        large = small * float(rng.uniform(1.5, 4.0))
        channel = int(rng.integers(0, 5))
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)

        def perturbed(mag):
            zero = np.zeros(3)
            rel = RelState(zero, zero, zero, np.eye(3))
            a_ach = float(pcmd.param)
            if channel == 0:
                rel = RelState(mag * direction, zero, zero, np.eye(3))
            elif channel == 1:
                rel = RelState(zero, mag * direction, zero, np.eye(3))
            elif channel == 2:
                rel = RelState(zero, zero, mag * direction, np.eye(3))
            elif channel == 3:
                rel = RelState(zero, zero, zero,
                               axis_angle(direction, min(mag, np.pi)))
            else:
                a_ach += mag
            # roll_final so the command factor is live for Roll as well
            return compute_reward(pcmd, rel, a_ach, roll_final=True, roll_turns=a_ach)

        assert float(perturbed(large).total) <= float(perturbed(small).total) + 1e-12

    # Yaw invariance: every factor, all four tasks, random states.
    worst = 0.0
    for _ in range(1000):
        task = TaskId(int(rng.integers(0, 4)))
        ycmd = Command(task, float(rng.choice([-3.0, 2.0, 5.0])))
        anc = Anchor(rng.uniform(-1, 1, 3) + np.array([0.0, 0.0, 2.0]),
                     float(rng.uniform(-np.pi, np.pi)))
        st = MavState(p=anc.p0 + rng.uniform(-0.5, 0.5, 3),
                      v=rng.uniform(-1, 1, 3),
                      R=axis_angle(rng.normal(size=3), float(rng.uniform(0, 2.5))),
                      omega=rng.uniform(-3, 3, 3),
                      motor_f=np.zeros(4))
        phi = float(rng.uniform(-2, 2))
        theta = float(rng.uniform(0, 2 * np.pi))
        tg1 = task_targets(ycmd, anc, st, cfg["task"], roll_angle=phi)
        bd1 = compute_reward(ycmd, rel_state(st, tg1),
                             achieved_attribute(ycmd, st, anc))
        anc2 = Anchor(rot_z(theta) @ anc.p0, anc.psi0 + theta)
        st2 = MavState(p=rot_z(theta) @ st.p, v=rot_z(theta) @ st.v,
                       R=rot_z(theta) @ st.R, omega=st.omega,
                       motor_f=st.motor_f)
        tg2 = task_targets(ycmd, anc2, st2, cfg["task"], roll_angle=phi)
        bd2 = compute_reward(ycmd, rel_state(st2, tg2),
                             achieved_attribute(ycmd, st2, anc2))
        for f in FACTORS:
            worst = max(worst, abs(float(getattr(bd1, f)) - float(getattr(bd2, f))))
    assert worst < 1e-9
    _report(f"04 reward contract: ceiling exact, factors (2,3,3,2,2), "
            f"monotone x1000, yaw gap {worst:.2e}")


def test_05_gradient_check():
    """Central finite differences agree with reverse-mode gradients for every
    parameterized stage of both backbones, on both the policy and value
    losses, in 64-bit."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    obs = torch.as_tensor(rng.normal(size=(6, 27)), dtype=DTYPE)
    actions = torch.as_tensor(rng.normal(size=(6, 4)), dtype=DTYPE)
    returns = torch.as_tensor(rng.normal(size=6), dtype=DTYPE)
    task_ids = torch.as_tensor([0, 1, 2, 3, 0, 1])   # touch every value head
    worst = 0.0
    checked = 0

    for backbone in ("emlp", "mlp"):
        policy = build_policy(load_config(overrides={
            "network.backbone": backbone,
            "network.hidden_pairs": 5, "network.hidden_scalars": 7,
            "network.film_hidden": 6, "network.mlp_widths": [24, 24],
        }), seed=1)

        def loss_pi():
            mean, log_std = policy.distribution_params(obs)
            return policy.log_prob(mean, log_std, actions).mean()

        def loss_v():
            v = policy.critic.value_for(obs, task_ids)
            return 0.5 * ((v - returns) ** 2).mean()

        for loss_fn, module in ((loss_pi, policy.actor), (loss_v, policy.critic)):
            policy.zero_grad(set_to_none=True)
            loss_fn().backward()
            for name, p in module.named_parameters():
                if p.grad is None:
                    continue
                grad = p.grad.detach().view(-1).clone()
                flat = p.data.view(-1)
                n = flat.numel()
                for i in {0, n // 2, n - 1}:
                    old = flat[i].item()
                    h = 1e-6 * max(1.0, abs(old))
                    with torch.no_grad():
                        flat[i] = old + h
                        f_plus = float(loss_fn())
                        flat[i] = old - h
                        f_minus = float(loss_fn())
                        flat[i] = old
                    fd = (f_plus - f_minus) / (2.0 * h)
                    gv = float(grad[i])
                    rel = abs(fd - gv) / max(abs(fd), abs(gv), 1e-8)
                    assert rel < 1e-4, (backbone, name, i, fd, gv)
                    worst = max(worst, rel)
                    checked += 1

    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    _report(f"05 gradient check: {checked} entries, worst rel err {worst:.2e}, "
            f"{elapsed:.1f}s")


def test_06_gae_matches_discounted_sums():
    """With lambda=1 the advantage estimator must reproduce plain discounted
    return-minus-value, computed here by independent forward sums, across 100+
    synthetic episodes with terminal, truncated, and buffer-edge endings."""
    rng = np.random.default_rng(23)
    T, N, gamma = 50, 24, 0.97
    rewards = rng.normal(size=(T, N))
    values = rng.normal(size=(T, N))
    dones = rng.random((T, N)) < 0.12
    truncated = dones & (rng.random((T, N)) < 0.35)
    bootstrap = rng.normal(size=(T, N))
    last_values = rng.normal(size=N)

    adv, ret = gae(rewards, values, dones, truncated, bootstrap,
                   last_values, gamma, 1.0)

    expected = np.zeros((T, N))
    n_episodes = 0
    for j in range(N):
        t = 0
        while t < T:
            e = t
            while e < T and not dones[e, j]:
                e += 1
            if e == T:                       # buffer edge: bootstrap last value
                tail, end = last_values[j], T - 1
            elif truncated[e, j]:            # horizon cut: stored state value
                tail, end, n_episodes = bootstrap[e, j], e, n_episodes + 1
            else:                            # true terminal
                tail, end, n_episodes = 0.0, e, n_episodes + 1
            G = tail
            for k in range(end, t - 1, -1):
                G = rewards[k, j] + gamma * G
                expected[k, j] = G
            t = end + 1
    assert n_episodes >= 100

    gap_ret = float(np.max(np.abs(ret - expected)))
    gap_adv = float(np.max(np.abs(adv - (expected - values))))
    assert gap_ret < 1e-12 and gap_adv < 1e-12
    _report(f"06 GAE vs discounted sums: {n_episodes} episodes, "
            f"returns gap {gap_ret:.2e}, adv gap {gap_adv:.2e}")


def test_07_metrics_match_hand_counts():
    """SR and SCD equal hand-counted values on a 50-episode fixture, and SCD
    is zero exactly when every episode succeeded."""
    rng = np.random.default_rng(31)
    # Command distances on a 1/16 grid: every partial sum is exact in binary,
    # so the equality below is order-independent and genuinely exact.
    n = 50
    succ = [bool(rng.random() < 0.6) for _ in range(n)]
    dists = [float(rng.integers(1, 48)) / 16.0 for _ in range(n)]

    n_succ = sum(1 for s in succ if s)
    assert success_rate(succ) == 100.0 * (n_succ / n)
    hand = sum((0.0 if s else 1.0) * c for s, c in zip(succ, dists)) / n
    assert scd(succ, dists) == hand
    assert any(succ) and not all(succ) and hand > 0.0

    assert scd([True] * n, dists) == 0.0
    for k in range(1, 6):
        flags = [i >= k for i in range(n)]    # first k episodes fail
        assert scd(flags, dists) > 0.0
    assert success_rate([]) == 0.0 and scd([], []) == 0.0
    _report(f"07 SR/SCD vs hand counts: sr {success_rate(succ):.1f}%, scd {hand:.4f}")


def test_09_ablation_grid_checkpoint_roundtrip(tmp_path):
    """All eight backbone x FiLM x multihead variants build, survive one PPO
    iteration, and round-trip through the checkpoint format bit-exactly."""
    grid = [(bk, film, mh)
            for bk in ("mlp", "emlp")
            for film, mh in ((False, False), (True, False), (False, True), (True, True))]
    for bk, film, mh in grid:
        cfg_r = load_config(overrides={
            "ppo.n_envs": 8, "ppo.rollout_steps": 8, "ppo.minibatches": 2,
            "ppo.epochs": 1, "ppo.total_steps": 64, "ppo.eval_every": 0,
            "network.backbone": bk, "network.film": film, "network.multihead": mh,
            "network.hidden_pairs": 4, "network.hidden_scalars": 6,
            "network.film_hidden": 8, "network.mlp_widths": [16, 16],
            "eval.episodes": 2,
        })
        tag = f"{bk}_f{int(film)}_m{int(mh)}"
        res = train(cfg_r, out_dir=str(tmp_path / tag), seed=0,
                    max_iterations=1, quiet=True)
        assert res.iterations == 1 and res.steps == 64

        p1, man1 = restore_policy(res.checkpoint)
        again = str(tmp_path / f"{tag}_rt.ckpt")
        save_checkpoint(again, p1, man1["config"], meta=man1.get("meta"))
        p2, _ = restore_policy(again)
        d1 = dict(p1.named_parameters())
        d2 = dict(p2.named_parameters())
        assert set(d1) == set(d2)
        for k in d1:
            assert torch.equal(d1[k], d2[k]), (tag, k)
    _report(f"09 ablation grid: {len(grid)} variants trained and "
            f"round-tripped bit-exact")


def test_10_builtin_scripts(cfg, tmp_path):
    """The four builtin scripts fire at their exact step indices under the
    oracle, and run against an arbitrary checkpoint without error."""
    fire_steps = {
        "combo": [0, 10, 70, 170],
        "snap_rotate": [0, 50, 155, 355],
        "spiral_flip": [0, 63, 126],
        "power_loop": [0, 63],
    }
    for name, steps in fire_steps.items():
        res = run_script(cfg, load_script(name), oracle=True)
        assert [f["step"] for f in res["firings"]] == steps, name
        assert not res["aborted"]
        assert res["steps"] == steps[-1] + 100   # 1 s settle after last firing

    tiny = load_config(overrides={"network.hidden_pairs": 4,
                                  "network.hidden_scalars": 6,
                                  "network.film_hidden": 8})
    ck = str(tmp_path / "untrained.ckpt")
    save_checkpoint(ck, build_policy(tiny, seed=0), tiny)
    restored, _ = restore_policy(ck)
    for name in fire_steps:
        # An untrained policy may crash the vehicle; the run must still
        # complete cleanly with the abort recorded, never raise.
        res = run_script(cfg, load_script(name), policy=restored, max_duration=4.0)
        assert res["steps"] > 0
    _report("10 builtin scripts: firing steps exact under oracle, "
            "checkpoint runs clean")


def test_08_hover_training_proxy(tmp_path):
    """Trains the full stack and a plain-MLP baseline to 80% hover success
    under relaxed tolerances (0.2 m, 15 deg), three seeds each. The full
    stack must get there within 2M steps and an hour per seed, and in no
    more steps (median) than the baseline."""
    relaxed = {"hover_pos_tol": 0.2, "hover_ang_tol_deg": 15.0}
    variants = {
        "emlp": {},
        "mlp": {"network.backbone": "mlp", "network.film": False,
                "network.multihead": False},
    }
    medians = {}
    for label, net_over in variants.items():
        per_seed = []
        for seed in (0, 1, 2):
            cfg_r = load_config(overrides={"ppo.tasks": ["hover"], **net_over})
            t0 = time.perf_counter()
            res = train(cfg_r, out_dir=str(tmp_path / f"{label}_s{seed}"),
                        seed=seed, stop_at_sr=80.0, quiet=True,
                        eval_task_overrides=relaxed)
            wall = time.perf_counter() - t0
            per_seed.append(res.steps_to_sr)
            _report(f"08 proxy {label} seed {seed}: steps_to_sr="
                    f"{res.steps_to_sr} wall={wall / 60:.1f}min "
                    f"final_sr={res.final_eval_sr:.1f}")
            if label == "emlp":
                assert res.steps_to_sr <= 2_000_000, (seed, res.steps_to_sr)
                assert wall < 3600.0
        medians[label] = sorted(per_seed)[1]
    assert medians["emlp"] <= medians["mlp"], medians
    _report(f"08 hover proxy: median steps to 80% SR emlp={medians['emlp']} "
            f"mlp={medians['mlp']}")
