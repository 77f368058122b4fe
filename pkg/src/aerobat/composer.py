"""Maneuver composition: scripts of (trigger, command) steps driven over a
FlightSession, either by a trained policy or by the perfect-tracking oracle.

Trigger semantics: AfterTime fires a fixed delay after the previous command
was issued (the first step measures from script start); AfterDone fires on
the active task's completion transition; Manual fires on an injected event.
Handoffs happen between policy steps, never mid-step.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .dynamics import quat_from_R
from .env import FlightSession, OracleController
from .tasks import Anchor, Command, TaskId

TRIGGER_KINDS = ("after_time", "after_done", "manual")


class ScriptError(Exception):
    """Script schema violation."""


@dataclass(frozen=True)
class Trigger:
    kind: str
    seconds: float = 0.0


@dataclass(frozen=True)
class ScriptStep:
    trigger: Trigger
    task: TaskId
    param: float = 0.0
    anchor: tuple | None = None   # ((x, y, z), psi) or None for pose-at-fire


@dataclass(frozen=True)
class Script:
    name: str
    steps: tuple


def _reject_unknown(obj: dict, allowed: set, where: str) -> None:
    extra = set(obj) - allowed
    if extra:
        raise ScriptError(f"{where}: unknown field(s) {sorted(extra)}")


def parse_script(text: str | dict) -> Script:
    """Parse and validate a JSON script document."""
    if isinstance(text, str):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise ScriptError(f"invalid JSON: {e}")
    else:
        doc = text
    if not isinstance(doc, dict):
        raise ScriptError("script must be a JSON object")
    _reject_unknown(doc, {"name", "steps"}, "script")
    name = doc.get("name")
    if not isinstance(name, str) or not name:
        raise ScriptError("script.name: non-empty string required")
    raw_steps = doc.get("steps")
    if not isinstance(raw_steps, list) or not raw_steps:
        raise ScriptError("script.steps: non-empty list required")
    steps = []
    for i, s in enumerate(raw_steps):
        where = f"steps[{i}]"
        if not isinstance(s, dict):
            raise ScriptError(f"{where}: object required")
        _reject_unknown(s, {"trigger", "task", "param", "anchor"}, where)
        trig = s.get("trigger")
        if not isinstance(trig, dict):
            raise ScriptError(f"{where}.trigger: object required")
        _reject_unknown(trig, {"kind", "seconds"}, f"{where}.trigger")
        kind = trig.get("kind")
        if kind not in TRIGGER_KINDS:
            raise ScriptError(f"{where}.trigger.kind: expected one of {TRIGGER_KINDS}, got {kind!r}")
        seconds = 0.0
        if kind == "after_time":
            seconds = trig.get("seconds", None)
            if not isinstance(seconds, (int, float)) or isinstance(seconds, bool) or seconds < 0:
                raise ScriptError(f"{where}.trigger.seconds: non-negative number required")
        elif "seconds" in trig:
            raise ScriptError(f"{where}.trigger.seconds: only valid for after_time")
        try:
            task = TaskId.from_name(str(s.get("task")))
        except ValueError as e:
            raise ScriptError(f"{where}.task: {e}")
        param = s.get("param", 0.0)
        if not isinstance(param, (int, float)) or isinstance(param, bool):
            raise ScriptError(f"{where}.param: number required")
        anchor = None
        if "anchor" in s:
            a = s["anchor"]
            if not isinstance(a, dict):
                raise ScriptError(f"{where}.anchor: object required")
            _reject_unknown(a, {"p0", "psi0"}, f"{where}.anchor")
            p0 = a.get("p0")
            if (not isinstance(p0, list) or len(p0) != 3
                    or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in p0)):
                raise ScriptError(f"{where}.anchor.p0: list of 3 numbers required")
            psi0 = a.get("psi0", 0.0)
            if not isinstance(psi0, (int, float)) or isinstance(psi0, bool):
                raise ScriptError(f"{where}.anchor.psi0: number required")
            anchor = (tuple(float(x) for x in p0), float(psi0))
        steps.append(ScriptStep(Trigger(kind, float(seconds)), task, float(param), anchor))
    return Script(name, tuple(steps))


def script_to_dict(script: Script) -> dict:
    steps = []
    for s in script.steps:
        trig = {"kind": s.trigger.kind}
        if s.trigger.kind == "after_time":
            trig["seconds"] = s.trigger.seconds
        d = {"trigger": trig, "task": s.task.name.lower(), "param": s.param}
        if s.anchor is not None:
            d["anchor"] = {"p0": list(s.anchor[0]), "psi0": s.anchor[1]}
        steps.append(d)
    return {"name": script.name, "steps": steps}


def _step(kind: str, task: str, param: float = 0.0, seconds: float = 0.0) -> ScriptStep:
    return ScriptStep(Trigger(kind, seconds), TaskId.from_name(task), param)


def builtin_scripts() -> dict[str, Script]:
    """The four demo sequences: exact command orders and trigger delays."""
    return {
        "combo": Script("combo", (
            _step("after_time", "roll", 1.0, 0.0),
            _step("after_time", "flip", 5.0, 0.1),
            _step("after_time", "rotate", 3.0, 0.6),
            _step("after_time", "hover", 0.0, 1.0),
        )),
        "snap_rotate": Script("snap_rotate", (
            _step("after_time", "rotate", 3.0, 0.0),
            _step("after_time", "roll", 1.0, 0.5),
            _step("after_done", "rotate", 3.0),
            _step("after_time", "hover", 0.0, 2.0),
        )),
        "spiral_flip": Script("spiral_flip", (
            _step("after_time", "flip", 5.0, 0.0),
            _step("after_done", "flip", 5.0),
            _step("after_done", "hover", 0.0),
        )),
        "power_loop": Script("power_loop", (
            _step("after_time", "flip", 5.0, 0.0),
            _step("after_done", "hover", 0.0),
        )),
    }


def load_script(name_or_path: str) -> Script:
    """Resolve a builtin name or a JSON file path."""
    builtins = builtin_scripts()
    if name_or_path in builtins:
        return builtins[name_or_path]
    if os.path.exists(name_or_path):
        with open(name_or_path) as f:
            return parse_script(f.read())
    raise ScriptError(f"{name_or_path!r} is neither a builtin "
                      f"({sorted(builtins)}) nor a script file")


@dataclass
class Firing:
    index: int
    task: str
    param: float
    trigger: str
    step: int
    t: float


class ScriptRuntime:
    """Advances a script over a FlightSession; shared by run_script and the
    live service. Call maybe_fire() between policy steps."""

    def __init__(self, script: Script, session: FlightSession,
                 oracle: OracleController | None = None):
        self.script = script
        self.session = session
        self.oracle = oracle
        self.next_index = 0
        self.base_step = session.step_idx   # issue step of the previous command
        self.manual_events = 0
        self.firings: list[Firing] = []

    def finished(self) -> bool:
        return self.next_index >= len(self.script.steps)

    def inject_manual(self) -> None:
        self.manual_events += 1

    def _should_fire(self, step: ScriptStep) -> bool:
        trig = step.trigger
        if trig.kind == "after_time":
            delay = int(round(trig.seconds / self.session.dt))
            return self.session.step_idx >= self.base_step + delay
        if trig.kind == "after_done":
            return self.session.task_done()
        if trig.kind == "manual":
            if self.manual_events > 0:
                self.manual_events -= 1
                return True
            return False
        raise ScriptError(f"unknown trigger kind {trig.kind}")

    def maybe_fire(self) -> Firing | None:
        if self.finished():
            return None
        step = self.script.steps[self.next_index]
        if not self._should_fire(step):
            return None
        sess = self.session
        cmd = Command(step.task, step.param)
        anchor = None
        if step.anchor is not None:
            anchor = Anchor(np.array(step.anchor[0], dtype=float), float(step.anchor[1]))
        sess.issue(cmd, anchor)
        if self.oracle is not None:
            sess.state = self.oracle.on_command(cmd, sess.anchor, sess.state)
        fired = Firing(self.next_index, step.task.name.lower(), step.param,
                       step.trigger.kind, sess.step_idx, sess.t)
        self.firings.append(fired)
        self.base_step = sess.step_idx
        self.next_index += 1
        return fired


def run_script(cfg: dict, script: Script, policy=None, oracle: bool = False,
               seed: int = 0, out_dir: str | None = None,
               max_duration: float | None = None,
               settle: float = 1.0,
               manual_schedule: dict[int, int] | None = None) -> dict:
    """Execute a script end to end.

    Returns {"firings", "steps", "aborted", "log_path"}; writes a JSONL
    trajectory (with the reward breakdown) and a firing summary when out_dir
    is given. manual_schedule maps absolute step index -> number of manual
    events to inject before that step.
    """
    if policy is None and not oracle:
        raise ValueError("run_script needs a policy or oracle=True")
    session = FlightSession(cfg, seed=seed)
    ctrl = OracleController(cfg) if oracle else None
    runtime = ScriptRuntime(script, session, ctrl)
    cap = float(max_duration if max_duration is not None else cfg["composer"]["max_duration"])
    max_steps = int(round(cap / session.dt))
    settle_steps = int(round(settle / session.dt))
    act_fn = None
    if policy is not None:
        from .evaluation import policy_actor
        act_fn = policy_actor(policy)

    log_f = None
    log_path = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        log_path = os.path.join(out_dir, f"{script.name}_trajectory.jsonl")
        log_f = open(log_path, "w")
    aborted = None
    last_fire_step = 0
    try:
        for k in range(max_steps):
            if manual_schedule and k in manual_schedule:
                for _ in range(manual_schedule[k]):
                    runtime.inject_manual()
            while True:
                fired = runtime.maybe_fire()
                if fired is None:
                    break
                last_fire_step = fired.step
            if runtime.finished() and session.step_idx >= last_fire_step + settle_steps:
                break
            if oracle:
                out = session.step(inject=ctrl.next_state(session.cmd, session.anchor, session.dt))
            else:
                obs = session.observe()
                a = act_fn(obs[None], obs[None], np.array([int(session.cmd.task)]))[0]
                out = session.step(a)
            if log_f:
                st = session.state
                bd = out["breakdown"].as_dict()
                rec = {
                    "t": round(session.t, 6), "step": session.step_idx,
                    "p": [round(float(x), 6) for x in st.p],
                    "q": [round(float(x), 9) for x in quat_from_R(st.R)],
                    "v": [round(float(x), 6) for x in st.v],
                    "omega": [round(float(x), 6) for x in st.omega],
                    "task": session.cmd.task.name.lower(),
                    "param": float(session.cmd.param),
                    "reward": {key: round(float(val), 6) for key, val in bd.items()},
                    "roll_angle": round(float(session.progress.roll_angle), 6),
                    "pitch_cum": round(float(session.progress.pitch_cum), 6),
                    "action": [round(float(x), 6) for x in np.atleast_1d(out["action"]).ravel()],
                }
                log_f.write(json.dumps(rec) + "\n")
            st = session.state
            bad = (not np.isfinite(st.p).all() or not np.isfinite(st.v).all()
                   or float(st.p[2]) < 0.0
                   or float(np.linalg.norm(st.v)) > float(cfg["task"]["diverge_speed"]))
            if bad:
                aborted = "diverged"
                break
    finally:
        if log_f:
            log_f.close()

    firings = [vars(f) for f in runtime.firings]
    result = {
        "script": script.name, "seed": seed, "oracle": oracle,
        "firings": firings, "steps": session.step_idx,
        "aborted": aborted, "log_path": log_path,
        "finished": runtime.finished(),
    }
    if out_dir:
        with open(os.path.join(out_dir, f"{script.name}_summary.json"), "w") as f:
            json.dump(result, f, indent=2)
    return result
