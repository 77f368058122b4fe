/** Wire protocol for the simulator service: newline-delimited JSON over a
 * WebSocket at /ws. This module is the single place that knows frame shapes;
 * everything outbound is validated here before it touches the socket, and
 * everything inbound is decoded here before it touches the model.
 *
 * The telemetry field set is pinned by the server (additions bump
 * `PROTOCOL_VERSION`), so decoding is strict: wrong types are errors, not
 * best-effort coercions. Unknown extra fields on inbound frames are ignored
 * for forward compatibility with a newer server; outbound messages carry
 * exactly the documented fields.
 */

export const PROTOCOL_VERSION = 1;

export const TASKS = ["hover", "rotate", "flip", "roll"] as const;
export type TaskName = (typeof TASKS)[number];

export const BUILTIN_SCRIPTS = ["combo", "snap_rotate", "spiral_flip", "power_loop"] as const;

export type Vec3 = [number, number, number];
export type Quat = [number, number, number, number];

export interface RewardBreakdown {
  r_pos: number;
  r_lin: number;
  r_ang: number;
  r_cmd: number;
  r_task: number;
  total: number;
}

export interface HelloFrame {
  kind: "hello";
  protocol: number;
  config_hash: string;
  network_hash: string;
  tasks: string[];
  timescale: number;
  oracle: boolean;
}

export interface TelemetryFrame {
  kind: "telemetry";
  t: number;
  step: number;
  p: Vec3;
  q: Quat;
  v: Vec3;
  omega: Vec3;
  task: TaskName;
  param: number;
  reward: RewardBreakdown;
  progress: { roll_angle: number; pitch_cum: number };
  paused: boolean;
  timescale: number;
}

export interface EventFrame {
  kind: "event";
  event: string;
  task?: string;
  param?: number;
  step?: number;
  script?: string;
  index?: number;
  t?: number;
  reason?: string;
}

export interface ErrorFrame {
  kind: "error";
  message: string;
}

export type ServerFrame = HelloFrame | TelemetryFrame | EventFrame | ErrorFrame;

export class ProtocolError extends Error {}

function fail(path: string, want: string, got: unknown): never {
  throw new ProtocolError(`${path}: expected ${want}, got ${JSON.stringify(got)}`);
}

function obj(x: unknown, path: string): Record<string, unknown> {
  if (typeof x !== "object" || x === null || Array.isArray(x)) fail(path, "object", x);
  return x as Record<string, unknown>;
}

function num(x: unknown, path: string): number {
  if (typeof x !== "number" || !Number.isFinite(x)) fail(path, "finite number", x);
  return x;
}

function str(x: unknown, path: string): string {
  if (typeof x !== "string") fail(path, "string", x);
  return x;
}

function bool(x: unknown, path: string): boolean {
  if (typeof x !== "boolean") fail(path, "boolean", x);
  return x;
}

function vecN<N extends number>(x: unknown, n: N, path: string): number[] {
  if (!Array.isArray(x) || x.length !== n) fail(path, `array of ${n} numbers`, x);
  return x.map((e, i) => num(e, `${path}[${i}]`));
}

function taskName(x: unknown, path: string): TaskName {
  const s = str(x, path);
  if (!(TASKS as readonly string[]).includes(s)) fail(path, `one of ${TASKS.join("|")}`, s);
  return s as TaskName;
}

const REWARD_KEYS: (keyof RewardBreakdown)[] = ["r_pos", "r_lin", "r_ang", "r_cmd", "r_task", "total"];

function reward(x: unknown, path: string): RewardBreakdown {
  const o = obj(x, path);
  const out = {} as RewardBreakdown;
  for (const k of REWARD_KEYS) out[k] = num(o[k], `${path}.${k}`);
  return out;
}

/** Decode one server frame line. Throws ProtocolError on anything that does
 * not match the wire contract; the caller decides whether that is fatal
 * (it never is for the cockpit: bad frames are logged and dropped). */
export function decodeFrame(line: string): ServerFrame {
  let raw: unknown;
  try {
    raw = JSON.parse(line);
  } catch (e) {
    throw new ProtocolError(`not JSON: ${(e as Error).message}`);
  }
  const o = obj(raw, "frame");
  const kind = str(o.kind, "frame.kind");
  if (kind === "hello") {
    return {
      kind,
      protocol: num(o.protocol, "hello.protocol"),
      config_hash: str(o.config_hash, "hello.config_hash"),
      network_hash: str(o.network_hash, "hello.network_hash"),
      tasks: (Array.isArray(o.tasks) ? o.tasks : fail("hello.tasks", "array", o.tasks))
        .map((t, i) => str(t, `hello.tasks[${i}]`)),
      timescale: num(o.timescale, "hello.timescale"),
      oracle: bool(o.oracle, "hello.oracle"),
    };
  }
  if (kind === "telemetry") {
    const prog = obj(o.progress, "telemetry.progress");
    return {
      kind,
      t: num(o.t, "telemetry.t"),
      step: num(o.step, "telemetry.step"),
      p: vecN(o.p, 3, "telemetry.p") as Vec3,
      q: vecN(o.q, 4, "telemetry.q") as Quat,
      v: vecN(o.v, 3, "telemetry.v") as Vec3,
      omega: vecN(o.omega, 3, "telemetry.omega") as Vec3,
      task: taskName(o.task, "telemetry.task"),
      param: num(o.param, "telemetry.param"),
      reward: reward(o.reward, "telemetry.reward"),
      progress: {
        roll_angle: num(prog.roll_angle, "telemetry.progress.roll_angle"),
        pitch_cum: num(prog.pitch_cum, "telemetry.progress.pitch_cum"),
      },
      paused: bool(o.paused, "telemetry.paused"),
      timescale: num(o.timescale, "telemetry.timescale"),
    };
  }
  if (kind === "event") {
    const out: EventFrame = { kind, event: str(o.event, "event.event") };
    if (o.task !== undefined) out.task = str(o.task, "event.task");
    if (o.param !== undefined) out.param = num(o.param, "event.param");
    if (o.step !== undefined) out.step = num(o.step, "event.step");
    if (o.script !== undefined) out.script = str(o.script, "event.script");
    if (o.index !== undefined) out.index = num(o.index, "event.index");
    if (o.t !== undefined) out.t = num(o.t, "event.t");
    if (o.reason !== undefined) out.reason = str(o.reason, "event.reason");
    return out;
  }
  if (kind === "error") {
    return { kind, message: str(o.message, "error.message") };
  }
  fail("frame.kind", "hello|telemetry|event|error", kind);
}

/** Split a WebSocket text payload into frames (the server may batch several
 * newline-terminated frames in one message). */
export function splitFrames(data: string): string[] {
  return data.split("\n").filter((l) => l.trim().length > 0);
}

// ---------------------------------------------------------------------------
// Client -> server

export interface AnchorSpec {
  p0: Vec3;
  psi0?: number;
}

export type ClientMessage =
  | { kind: "command"; task: TaskName; param?: number; anchor?: AnchorSpec }
  | { kind: "run_script"; name?: string; script?: unknown }
  | { kind: "pause" }
  | { kind: "resume" }
  | { kind: "reset" }
  | { kind: "set_time_scale"; factor: number }
  | { kind: "manual_trigger" };

/** Validate and serialize an outbound message to one wire line. Throws
 * ProtocolError for anything the server would reject; sending invalid
 * messages is a cockpit bug, not a user error. */
export function encodeMessage(msg: ClientMessage): string {
  switch (msg.kind) {
    case "command": {
      taskName(msg.task, "command.task");
      if (msg.param !== undefined) num(msg.param, "command.param");
      if (msg.anchor !== undefined) {
        vecN(msg.anchor.p0, 3, "command.anchor.p0");
        if (msg.anchor.psi0 !== undefined) num(msg.anchor.psi0, "command.anchor.psi0");
      }
      break;
    }
    case "run_script": {
      const hasName = msg.name !== undefined;
      const hasInline = msg.script !== undefined;
      if (hasName === hasInline) {
        throw new ProtocolError("run_script: exactly one of name|script required");
      }
      if (hasName && str(msg.name, "run_script.name").length === 0) {
        fail("run_script.name", "non-empty string", msg.name);
      }
      if (hasInline) obj(msg.script, "run_script.script");
      break;
    }
    case "set_time_scale": {
      const f = num(msg.factor, "set_time_scale.factor");
      if (f <= 0 || f > 4) fail("set_time_scale.factor", "number in (0, 4]", f);
      break;
    }
    case "pause":
    case "resume":
    case "reset":
    case "manual_trigger":
      break;
    default:
      fail("message.kind", "a known client message kind", (msg as { kind: string }).kind);
  }
  return JSON.stringify(msg) + "\n";
}

// ---------------------------------------------------------------------------
// Command ranges for the cockpit sliders. The full slider span is the eval
// sweep; the inner band is the training distribution and everything outside
// it renders as the marked out-of-distribution zone.

export interface SliderRange {
  min: number;
  max: number;
  step: number;
  /** training-distribution band [lo, hi] on |param| or on the raw value */
  inner: [number, number];
}

export const SLIDER_RANGES: Record<TaskName, SliderRange> = {
  hover: { min: 0, max: 0, step: 1, inner: [0, 0] },
  rotate: { min: -6, max: 6, step: 0.1, inner: [-4, 4] },
  flip: { min: 2, max: 8, step: 0.1, inner: [4, 6] },
  roll: { min: -5, max: 5, step: 1, inner: [-3, 3] },
};

/** True when the parameter lies outside the training distribution:
 * |v| > 4 for rotate, |N| > 3 for roll, rate outside [4, 6] for flip. */
export function isOod(task: TaskName, param: number): boolean {
  const r = SLIDER_RANGES[task];
  return param < r.inner[0] || param > r.inner[1];
}
