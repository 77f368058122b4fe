"""Live simulator service: one authoritative 100 Hz sim loop behind a
WebSocket endpoint speaking newline-delimited JSON.

Clients mutate the simulation only through the command queue, drained once
per policy step. Telemetry is broadcast at a fixed wall-clock rate through
bounded per-client queues; a slow client loses its own oldest frames and
never stalls the loop. Malformed messages earn an error frame and the
connection stays open.
"""

from __future__ import annotations

import asyncio
import json
import time

import numpy as np
from aiohttp import WSMsgType, web

from . import nets
from .composer import ScriptError, ScriptRuntime, builtin_scripts, parse_script
from .config import config_hash, network_hash
from .dynamics import quat_from_R
from .env import FlightSession, OracleController
from .tasks import Anchor, Command, TaskId

PROTOCOL_VERSION = 1

MESSAGE_KINDS = ("command", "run_script", "pause", "resume", "reset",
                 "set_time_scale", "manual_trigger")


class MessageError(Exception):
    pass


def decode_message(text: str) -> dict:
    """Parse and validate one client message line."""
    try:
        msg = json.loads(text)
    except json.JSONDecodeError as e:
        raise MessageError(f"invalid JSON: {e}")
    if not isinstance(msg, dict) or "kind" not in msg:
        raise MessageError("message must be an object with a 'kind' field")
    kind = msg["kind"]
    if kind not in MESSAGE_KINDS:
        raise MessageError(f"unknown message kind {kind!r}")
    if kind == "command":
        extra = set(msg) - {"kind", "task", "param", "anchor"}
        if extra:
            raise MessageError(f"command: unknown field(s) {sorted(extra)}")
        try:
            TaskId.from_name(str(msg.get("task")))
        except ValueError as e:
            raise MessageError(str(e))
        param = msg.get("param", 0.0)
        if not isinstance(param, (int, float)) or isinstance(param, bool):
            raise MessageError("command.param: number required")
        if "anchor" in msg:
            a = msg["anchor"]
            ok = (isinstance(a, dict) and set(a) <= {"p0", "psi0"}
                  and isinstance(a.get("p0"), list) and len(a["p0"]) == 3
                  and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in a["p0"])
                  and isinstance(a.get("psi0", 0.0), (int, float)))
            if not ok:
                raise MessageError("command.anchor: {p0: [x,y,z], psi0?: number} required")
    elif kind == "run_script":
        extra = set(msg) - {"kind", "name", "script"}
        if extra:
            raise MessageError(f"run_script: unknown field(s) {sorted(extra)}")
        if ("name" in msg) == ("script" in msg):
            raise MessageError("run_script: exactly one of 'name' or 'script' required")
        if "name" in msg and msg["name"] not in builtin_scripts():
            raise MessageError(f"run_script.name: unknown builtin {msg['name']!r}")
        if "script" in msg:
            try:
                parse_script(msg["script"])
            except ScriptError as e:
                raise MessageError(f"run_script.script: {e}")
    elif kind == "set_time_scale":
        extra = set(msg) - {"kind", "factor"}
        if extra:
            raise MessageError(f"set_time_scale: unknown field(s) {sorted(extra)}")
        f = msg.get("factor")
        if not isinstance(f, (int, float)) or isinstance(f, bool) or not (0.0 < f <= 4.0):
            raise MessageError("set_time_scale.factor: number in (0, 4] required")
    else:
        if set(msg) != {"kind"}:
            raise MessageError(f"{kind}: no extra fields allowed")
    return msg


def encode_frame(frame: dict) -> str:
    return json.dumps(frame, separators=(",", ":")) + "\n"


class SimService:
    def __init__(self, cfg: dict, policy: nets.ActorCritic | None = None,
                 oracle: bool = False, seed: int = 0):
        if policy is None and not oracle:
            raise ValueError("service needs a policy checkpoint or oracle mode")
        self.cfg = cfg
        self.policy = policy
        self.oracle = oracle
        self.seed = seed
        self.session = FlightSession(cfg, seed=seed)
        self.ctrl = OracleController(cfg) if oracle else None
        self.act_fn = None
        if policy is not None:
            from .evaluation import policy_actor
            self.act_fn = policy_actor(policy)
        self.runtime: ScriptRuntime | None = None
        self.paused = False
        self.timescale = float(cfg["service"]["timescale"])
        self.telemetry_dt = 1.0 / float(cfg["service"]["telemetry_hz"])
        self.queue_size = int(cfg["service"]["queue_size"])
        self.commands: asyncio.Queue = asyncio.Queue(maxsize=1024)
        self.clients: dict = {}
        self._stop = asyncio.Event()
        self._loop_task = None

    # -- frames ------------------------------------------------------------

    def hello_frame(self) -> dict:
        return {
            "kind": "hello",
            "protocol": PROTOCOL_VERSION,
            "config_hash": config_hash(self.cfg),
            "network_hash": network_hash(self.cfg),
            "tasks": [t.name.lower() for t in TaskId],
            "timescale": self.timescale,
            "oracle": self.oracle,
        }

    def telemetry_frame(self) -> dict:
        s = self.session
        st = s.state
        bd = self._last_breakdown or {k: 0.0 for k in
                                      ("r_pos", "r_lin", "r_ang", "r_cmd", "r_task", "total")}
        return {
            "kind": "telemetry",
            "t": round(s.t, 6),
            "step": s.step_idx,
            "p": [round(float(x), 6) for x in st.p],
            "q": [round(float(x), 9) for x in quat_from_R(st.R)],
            "v": [round(float(x), 6) for x in st.v],
            "omega": [round(float(x), 6) for x in st.omega],
            "task": s.cmd.task.name.lower(),
            "param": float(s.cmd.param),
            "reward": {k: round(float(v), 6) for k, v in bd.items()},
            "progress": {
                "roll_angle": round(float(s.progress.roll_angle), 6),
                "pitch_cum": round(float(s.progress.pitch_cum), 6),
            },
            "paused": self.paused,
            "timescale": self.timescale,
        }

    _last_breakdown: dict | None = None

    def _broadcast(self, frame: dict) -> None:
        line = encode_frame(frame)
        for q in self.clients.values():
            if q.full():
                try:
                    q.get_nowait()   # drop this client's oldest frame
                except asyncio.QueueEmpty:
                    pass
            q.put_nowait(line)

    # -- mutations (sim-loop context only) ----------------------------------

    def _apply(self, msg: dict) -> None:
        kind = msg["kind"]
        if kind == "command":
            cmd = Command(TaskId.from_name(msg["task"]), float(msg.get("param", 0.0)))
            anchor = None
            if "anchor" in msg:
                a = msg["anchor"]
                anchor = Anchor(np.array(a["p0"], dtype=float), float(a.get("psi0", 0.0)))
            self.runtime = None   # direct command preempts any running script
            self.session.issue(cmd, anchor)
            if self.ctrl is not None:
                self.session.state = self.ctrl.on_command(cmd, self.session.anchor,
                                                          self.session.state)
            self._broadcast({"kind": "event", "event": "command",
                             "task": msg["task"], "param": float(msg.get("param", 0.0)),
                             "step": self.session.step_idx})
        elif kind == "run_script":
            script = builtin_scripts()[msg["name"]] if "name" in msg else parse_script(msg["script"])
            self.runtime = ScriptRuntime(script, self.session, self.ctrl)
            self._broadcast({"kind": "event", "event": "script_started",
                             "script": script.name, "step": self.session.step_idx})
        elif kind == "pause":
            self.paused = True
        elif kind == "resume":
            self.paused = False
        elif kind == "reset":
            self.session.reset(self.seed)
            self.runtime = None
            self._last_breakdown = None
            self._broadcast({"kind": "event", "event": "reset", "step": 0})
        elif kind == "set_time_scale":
            self.timescale = float(msg["factor"])
        elif kind == "manual_trigger":
            if self.runtime is not None:
                self.runtime.inject_manual()

    def _sim_step(self) -> None:
        if self.runtime is not None:
            while True:
                fired = self.runtime.maybe_fire()
                if fired is None:
                    break
                self._broadcast({"kind": "event", "event": "script_fired",
                                 "index": fired.index, "task": fired.task,
                                 "param": fired.param, "step": fired.step,
                                 "t": round(fired.t, 6)})
        s = self.session
        if self.oracle:
            out = s.step(inject=self.ctrl.next_state(s.cmd, s.anchor, s.dt))
        else:
            obs = s.observe()
            a = self.act_fn(obs[None], obs[None], np.array([int(s.cmd.task)]))[0]
            out = s.step(a)
        self._last_breakdown = {k: float(v) for k, v in out["breakdown"].as_dict().items()}
        st = s.state
        if (not np.isfinite(st.p).all() or not np.isfinite(st.v).all()
                or float(np.linalg.norm(st.v)) > float(self.cfg["task"]["diverge_speed"])):
            self.session.reset(self.seed)
            self.runtime = None
            self._last_breakdown = None
            self._broadcast({"kind": "event", "event": "reset",
                             "reason": "diverged", "step": 0})

    async def _sim_loop(self) -> None:
        dt = self.session.dt
        sim_ahead = 0.0           # sim seconds not yet paid for in wall time
        last_wall = time.monotonic()
        next_emit = last_wall
        while not self._stop.is_set():
            while not self.commands.empty():
                try:
                    self._apply(self.commands.get_nowait())
                except Exception as e:   # a bad mutation must not kill the loop
                    self._broadcast({"kind": "error", "message": f"command failed: {e}"})
            now = time.monotonic()
            if not self.paused:
                sim_ahead -= (now - last_wall) * self.timescale
                last_wall = now
                stepped = 0
                while sim_ahead <= 0.0 and stepped < 50:
                    self._sim_step()
                    sim_ahead += dt
                    stepped += 1
                if stepped >= 50:
                    sim_ahead = 0.0   # fell behind; drop the debt
            else:
                last_wall = now
            if now >= next_emit:
                self._broadcast(self.telemetry_frame())
                next_emit = max(next_emit + self.telemetry_dt, now)
            sleep_for = min(next_emit - time.monotonic(),
                            (sim_ahead / self.timescale) if not self.paused else 0.02)
            await asyncio.sleep(max(sleep_for, 0.0005))

    # -- connections ---------------------------------------------------------

    async def ws_handler(self, request: web.Request) -> web.WebSocketResponse:
        ws = web.WebSocketResponse(heartbeat=30.0)
        await ws.prepare(request)
        q: asyncio.Queue = asyncio.Queue(maxsize=self.queue_size)
        self.clients[ws] = q
        sender = asyncio.create_task(self._sender(ws, q))
        try:
            await ws.send_str(encode_frame(self.hello_frame()))
            async for msg in ws:
                if msg.type == WSMsgType.TEXT:
                    for line in msg.data.splitlines():
                        if not line.strip():
                            continue
                        try:
                            parsed = decode_message(line)
                        except MessageError as e:
                            await ws.send_str(encode_frame({"kind": "error", "message": str(e)}))
                            continue
                        try:
                            self.commands.put_nowait(parsed)
                        except asyncio.QueueFull:
                            await ws.send_str(encode_frame(
                                {"kind": "error", "message": "command queue full"}))
                elif msg.type == WSMsgType.ERROR:
                    break
        finally:
            self.clients.pop(ws, None)
            sender.cancel()
        return ws

    async def _sender(self, ws: web.WebSocketResponse, q: asyncio.Queue) -> None:
        try:
            while True:
                line = await q.get()
                await ws.send_str(line)
        except (asyncio.CancelledError, ConnectionResetError):
            pass

    def make_app(self, static_dir: str | None = None) -> web.Application:
        app = web.Application()
        app.router.add_get("/ws", self.ws_handler)
        if static_dir:
            app.router.add_static("/app", static_dir, show_index=True)

        async def index(_request):
            return web.json_response({"service": "aerobat-sim",
                                      "protocol": PROTOCOL_VERSION, "ws": "/ws"})

        app.router.add_get("/", index)
        return app

    async def start(self, host: str = "127.0.0.1", port: int = 0,
                    static_dir: str | None = None):
        """Start server + sim loop; returns (runner, actual_port)."""
        app = self.make_app(static_dir)
        runner = web.AppRunner(app)
        await runner.setup()
        site = web.TCPSite(runner, host, port)
        await site.start()
        self._loop_task = asyncio.create_task(self._sim_loop())
        actual = runner.addresses[0][1] if runner.addresses else port
        return runner, actual

    async def stop(self, runner) -> None:
        self._stop.set()
        if self._loop_task is not None:
            await self._loop_task
        await runner.cleanup()


def serve_forever(cfg: dict, policy: nets.ActorCritic | None, oracle: bool,
                  host: str, port: int, seed: int = 0,
                  static_dir: str | None = None, timescale: float | None = None) -> None:
    """Blocking entry point used by the CLI."""
    svc = SimService(cfg, policy=policy, oracle=oracle, seed=seed)
    if timescale is not None:
        if not (0.0 < timescale <= 4.0):
            raise ValueError("timescale must be in (0, 4]")
        svc.timescale = float(timescale)

    async def main():
        runner, actual = await svc.start(host, port, static_dir)
        print(f"sim service listening on ws://{host}:{actual}/ws "
              f"({'oracle' if oracle else 'policy'} mode, timescale {svc.timescale})")
        try:
            await asyncio.Event().wait()
        finally:
            await svc.stop(runner)

    try:
        asyncio.run(main())
    except KeyboardInterrupt:
        pass
