/** Session state and the connection controller.
 *
 * Everything the UI shows derives from one SessionModel, and every change to
 * it flows through reduce(): network frames, socket lifecycle, and user form
 * edits all arrive as SessionEvents on the single UI loop. The controller
 * owns the WebSocket and the reconnect schedule; it is constructed with the
 * socket factory and timer functions injected so tests can run it against a
 * fake clock or a node ws client.
 *
 * The cockpit holds no simulation truth: closing it, or letting it crash,
 * changes nothing server-side. Reconnect is automatic with bounded backoff
 * (250 ms doubling to a 2 s ceiling), so a service restart is picked up well
 * inside 5 s once the port is listening again.
 */

import {
  decodeFrame,
  encodeMessage,
  splitFrames,
  type ClientMessage,
  type EventFrame,
  type HelloFrame,
  type ServerFrame,
  type TaskName,
  type TelemetryFrame,
} from "./protocol.js";
import { TelemetryRing } from "./ring.js";

export type ConnectionState = "idle" | "connecting" | "open" | "closed";

export interface ScriptState {
  name: string;
  startedStep: number;
  firings: EventFrame[];
}

export interface SessionModel {
  connection: ConnectionState;
  attempts: number;            // reconnect attempts since the last open socket
  hello: HelloFrame | null;
  latest: TelemetryFrame | null;
  ring: TelemetryRing;
  script: ScriptState | null;
  form: { task: TaskName; param: number };
  events: EventFrame[];        // most recent last, bounded
  log: string[];               // errors + notices, most recent last, bounded
}

export type SessionEvent =
  | { type: "connecting" }
  | { type: "open" }
  | { type: "closed" }
  | { type: "frame"; frame: ServerFrame }
  | { type: "bad_frame"; error: string }
  | { type: "sent"; message: ClientMessage }
  | { type: "form"; task: TaskName; param: number };

const EVENT_CAP = 50;
const LOG_CAP = 50;

export function initialModel(): SessionModel {
  return {
    connection: "idle",
    attempts: 0,
    hello: null,
    latest: null,
    ring: new TelemetryRing(),
    script: null,
    form: { task: "flip", param: 5 },
    events: [],
    log: [],
  };
}

function pushCapped<T>(arr: T[], item: T, cap: number): T[] {
  const out = arr.length >= cap ? arr.slice(arr.length - cap + 1) : arr.slice();
  out.push(item);
  return out;
}

export function reduce(m: SessionModel, ev: SessionEvent): SessionModel {
  switch (ev.type) {
    case "connecting":
      return { ...m, connection: "connecting", attempts: m.attempts + 1 };
    case "open":
      return { ...m, connection: "open", attempts: 0 };
    case "closed":
      return { ...m, connection: "closed" };
    case "form":
      return { ...m, form: { task: ev.task, param: ev.param } };
    case "bad_frame":
      return { ...m, log: pushCapped(m.log, `bad frame: ${ev.error}`, LOG_CAP) };
    case "sent":
      return { ...m, log: pushCapped(m.log, `sent ${ev.message.kind}`, LOG_CAP) };
    case "frame":
      return applyFrame(m, ev.frame);
  }
}

function applyFrame(m: SessionModel, f: ServerFrame): SessionModel {
  switch (f.kind) {
    case "hello":
      // A fresh hello means a fresh server process: script state is gone.
      return {
        ...m,
        hello: f,
        script: null,
        log: pushCapped(m.log, `hello: config ${f.config_hash.slice(0, 12)}`, LOG_CAP),
      };
    case "telemetry":
      m.ring.push(f);
      return { ...m, latest: f };
    case "error":
      return { ...m, log: pushCapped(m.log, `server error: ${f.message}`, LOG_CAP) };
    case "event":
      return applyEvent({ ...m, events: pushCapped(m.events, f, EVENT_CAP) }, f);
  }
}

function applyEvent(m: SessionModel, f: EventFrame): SessionModel {
  switch (f.event) {
    case "script_started":
      return { ...m, script: { name: f.script ?? "?", startedStep: f.step ?? 0, firings: [] } };
    case "script_fired":
      if (!m.script) return m;
      return { ...m, script: { ...m.script, firings: [...m.script.firings, f] } };
    case "command":   // a direct command preempts any running script
    case "reset":
      return { ...m, script: null };
    default:
      return m;
  }
}

// ---------------------------------------------------------------------------

/** The browser WebSocket surface the controller needs; node's `ws` client
 * exposes the same handler properties, so tests pass it in directly. */
export interface SocketLike {
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  send(data: string): void;
  close(): void;
}

export interface ControllerOptions {
  url: string;
  makeSocket: (url: string) => SocketLike;
  setTimer?: (fn: () => void, ms: number) => unknown;
  clearTimer?: (handle: unknown) => void;
  onChange?: (model: SessionModel) => void;
}

const BACKOFF_MS = [250, 500, 1000, 2000];

export function backoffDelay(attempts: number): number {
  return BACKOFF_MS[Math.min(attempts, BACKOFF_MS.length - 1)];
}

export class SessionController {
  model: SessionModel = initialModel();

  private sock: SocketLike | null = null;
  private timer: unknown = null;
  private stopped = false;
  private readonly opts: Required<Omit<ControllerOptions, "onChange">> &
    Pick<ControllerOptions, "onChange">;

  constructor(opts: ControllerOptions) {
    this.opts = {
      setTimer: (fn, ms) => setTimeout(fn, ms),
      clearTimer: (h) => clearTimeout(h as ReturnType<typeof setTimeout>),
      ...opts,
    };
  }

  connect(): void {
    this.stopped = false;
    this.open();
  }

  /** Intentional shutdown; stops the reconnect loop. */
  close(): void {
    this.stopped = true;
    if (this.timer !== null) {
      this.opts.clearTimer(this.timer);
      this.timer = null;
    }
    this.sock?.close();
    this.sock = null;
  }

  /** Validate and send. Returns false (and logs) when not connected; throws
   * ProtocolError when the message itself is malformed, since that is a
   * cockpit bug rather than an operator error. */
  send(msg: ClientMessage): boolean {
    const line = encodeMessage(msg);
    if (this.model.connection !== "open" || !this.sock) {
      this.dispatch({ type: "bad_frame", error: `cannot send ${msg.kind}: not connected` });
      return false;
    }
    this.sock.send(line);
    this.dispatch({ type: "sent", message: msg });
    return true;
  }

  dispatch(ev: SessionEvent): void {
    this.model = reduce(this.model, ev);
    this.opts.onChange?.(this.model);
  }

  private open(): void {
    this.dispatch({ type: "connecting" });
    let sock: SocketLike;
    try {
      sock = this.opts.makeSocket(this.opts.url);
    } catch (e) {
      this.dispatch({ type: "bad_frame", error: `connect failed: ${(e as Error).message}` });
      this.dispatch({ type: "closed" });
      this.scheduleReconnect();
      return;
    }
    this.sock = sock;
    sock.onopen = () => this.dispatch({ type: "open" });
    sock.onerror = () => {};   // the close handler owns recovery
    sock.onclose = () => {
      if (this.sock !== sock) return;   // superseded socket
      this.sock = null;
      this.dispatch({ type: "closed" });
      this.scheduleReconnect();
    };
    sock.onmessage = (ev) => {
      for (const line of splitFrames(String(ev.data))) {
        try {
          this.dispatch({ type: "frame", frame: decodeFrame(line) });
        } catch (e) {
          // Malformed frame: log it, stay live.
          this.dispatch({ type: "bad_frame", error: (e as Error).message });
        }
      }
    };
  }

  private scheduleReconnect(): void {
    if (this.stopped || this.timer !== null) return;
    const delay = backoffDelay(this.model.attempts);
    this.timer = this.opts.setTimer(() => {
      this.timer = null;
      if (!this.stopped) this.open();
    }, delay);
  }
}
