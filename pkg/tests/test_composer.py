"""Script schema, trigger timing, and end-to-end sequence execution.

The builtin-script firing steps asserted here are frozen oracle-run
constants: a flip at 5 rad/s crosses pi pitch in 63 steps, a single roll at
6 rad/s crosses 2 pi in 105 steps, and after_time delays convert to steps at
dt = 0.01."""

import json

import numpy as np
import pytest

from aerobat.composer import (Script, ScriptError, ScriptRuntime,
                              builtin_scripts, load_script, parse_script,
                              run_script, script_to_dict)
from aerobat.env import FlightSession, OracleController
from aerobat.tasks import TaskId

GOOD_DOC = {
    "name": "demo",
    "steps": [
        {"trigger": {"kind": "after_time", "seconds": 0.5}, "task": "flip",
         "param": 5.0},
        {"trigger": {"kind": "after_done"}, "task": "hover", "param": 0.0,
         "anchor": {"p0": [0.0, 0.0, 2.0], "psi0": 0.25}},
    ],
}


def test_parse_round_trip():
    script = parse_script(json.dumps(GOOD_DOC))
    assert script.name == "demo" and len(script.steps) == 2
    assert script.steps[0].task == TaskId.FLIP
    assert script.steps[0].trigger.seconds == 0.5
    assert script.steps[1].anchor == ((0.0, 0.0, 2.0), 0.25)
    again = parse_script(script_to_dict(script))
    assert again == script


@pytest.mark.parametrize("mutate,needle", [
    (lambda d: d.pop("name"), "script.name"),
    (lambda d: d.update(name=""), "script.name"),
    (lambda d: d.update(steps=[]), "script.steps"),
    (lambda d: d.update(extra=1), "unknown field"),
    (lambda d: d["steps"].__setitem__(0, "nope"), "steps[0]"),
    (lambda d: d["steps"][1]["trigger"].update(kind="on_mood"), "steps[1].trigger.kind"),
    (lambda d: d["steps"][0]["trigger"].update(seconds=-1), "steps[0].trigger.seconds"),
    (lambda d: d["steps"][1]["trigger"].update(seconds=1.0), "only valid for after_time"),
    (lambda d: d["steps"][0].update(task="cartwheel"), "steps[0].task"),
    (lambda d: d["steps"][0].update(param=True), "steps[0].param"),
    (lambda d: d["steps"][1].update(anchor={"p0": [1, 2]}), "anchor.p0"),
    (lambda d: d["steps"][1].update(anchor={"p0": [1, 2, 3], "bad": 0}), "unknown field"),
])
def test_parse_rejects_bad_documents(mutate, needle):
    doc = json.loads(json.dumps(GOOD_DOC))
    mutate(doc)
    with pytest.raises(ScriptError) as err:
        parse_script(doc)
    assert needle in str(err.value)


def test_parse_rejects_bad_json_text():
    with pytest.raises(ScriptError, match="invalid JSON"):
        parse_script("{nope")
    with pytest.raises(ScriptError, match="JSON object"):
        parse_script("[1, 2]")


def test_load_script_builtin_file_and_missing(tmp_path):
    assert load_script("combo").name == "combo"
    p = tmp_path / "s.json"
    p.write_text(json.dumps(GOOD_DOC))
    assert load_script(str(p)).name == "demo"
    with pytest.raises(ScriptError, match="neither a builtin"):
        load_script("no_such_script")


def test_builtin_scripts_complete():
    b = builtin_scripts()
    assert set(b) == {"combo", "snap_rotate", "spiral_flip", "power_loop"}
    for s in b.values():
        assert s.steps[0].trigger.kind == "after_time"
        assert s.steps[0].trigger.seconds == 0.0


BUILTIN_FIRE_STEPS = {
    "combo": [0, 10, 70, 170],
    "snap_rotate": [0, 50, 155, 355],
    "spiral_flip": [0, 63, 126],
    "power_loop": [0, 63],
}


@pytest.mark.parametrize("name", sorted(BUILTIN_FIRE_STEPS))
def test_builtin_firing_steps_under_oracle(cfg, name):
    res = run_script(cfg, load_script(name), oracle=True, seed=0)
    assert res["finished"] and res["aborted"] is None
    assert [f["step"] for f in res["firings"]] == BUILTIN_FIRE_STEPS[name]
    assert [f["index"] for f in res["firings"]] == list(range(len(res["firings"])))
    # one settle second after the last firing
    assert res["steps"] == BUILTIN_FIRE_STEPS[name][-1] + 100


def test_firing_records_fields(cfg):
    res = run_script(cfg, load_script("power_loop"), oracle=True, seed=0)
    f0 = res["firings"][0]
    assert f0 == {"index": 0, "task": "flip", "param": 5.0,
                  "trigger": "after_time", "step": 0, "t": 0.0}
    f1 = res["firings"][1]
    assert f1["task"] == "hover" and f1["trigger"] == "after_done"
    assert f1["t"] == pytest.approx(0.63)


def test_manual_trigger_fires_on_injection(cfg):
    doc = {"name": "wait_for_me", "steps": [
        {"trigger": {"kind": "after_time", "seconds": 0.0}, "task": "rotate",
         "param": 2.0},
        {"trigger": {"kind": "manual"}, "task": "hover"},
    ]}
    script = parse_script(doc)
    res = run_script(cfg, script, oracle=True, seed=0,
                     manual_schedule={30: 1})
    assert [f["step"] for f in res["firings"]] == [0, 30]
    assert res["firings"][1]["trigger"] == "manual"
    # without the injection the manual step never fires and the cap ends it
    res2 = run_script(cfg, script, oracle=True, seed=0, max_duration=1.0)
    assert not res2["finished"] and res2["steps"] == 100


def test_runtime_fires_between_steps_only(cfg):
    sess = FlightSession(cfg, seed=0)
    ctrl = OracleController(cfg)
    rt = ScriptRuntime(load_script("power_loop"), sess, ctrl)
    fired = rt.maybe_fire()
    assert fired is not None and fired.index == 0
    assert rt.maybe_fire() is None      # flip not done yet, nothing to fire
    for _ in range(62):
        sess.step(inject=ctrl.next_state(sess.cmd, sess.anchor, sess.dt))
        assert rt.maybe_fire() is None
    sess.step(inject=ctrl.next_state(sess.cmd, sess.anchor, sess.dt))
    second = rt.maybe_fire()
    assert second is not None and second.step == 63
    assert rt.finished()


def test_run_script_writes_trajectory_and_summary(cfg, tmp_path):
    out = str(tmp_path)
    res = run_script(cfg, load_script("power_loop"), oracle=True, seed=0,
                     out_dir=out)
    with open(res["log_path"]) as f:
        recs = [json.loads(line) for line in f]
    assert len(recs) == res["steps"]
    keys = {"t", "step", "p", "q", "v", "omega", "task", "param", "reward",
            "roll_angle", "pitch_cum", "action"}
    assert set(recs[0]) == keys
    assert set(recs[0]["reward"]) == {"r_pos", "r_lin", "r_ang", "r_cmd",
                                      "r_task", "total"}
    assert recs[0]["task"] == "flip" and recs[-1]["task"] == "hover"
    assert len(recs[0]["q"]) == 4 and abs(np.linalg.norm(recs[0]["q"]) - 1) < 1e-6
    with open(f"{out}/power_loop_summary.json") as f:
        summary = json.load(f)
    assert summary["firings"] == res["firings"]
    assert summary["finished"] is True


def test_run_script_needs_actor(cfg):
    with pytest.raises(ValueError):
        run_script(cfg, load_script("combo"))
