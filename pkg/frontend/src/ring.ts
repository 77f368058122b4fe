import type { TelemetryFrame } from "./protocol.js";

/** Rolling telemetry window. Bounded two ways: frames older than
 * `windowSeconds` of sim time fall off the back, and a hard frame cap
 * protects against pathological streams (e.g. long pauses, where sim time
 * stands still and the window test alone would never evict). A frame that
 * repeats the previous sim step (paused stream) replaces the tail instead of
 * growing the buffer. */
export class TelemetryRing {
  private buf: TelemetryFrame[] = [];

  constructor(
    readonly windowSeconds: number = 10,
    readonly cap: number = 600,
  ) {}

  push(frame: TelemetryFrame): void {
    const last = this.buf[this.buf.length - 1];
    if (last && frame.t < last.t) {
      this.buf = [];   // sim time went backwards: server reset, old trace is stale
    } else if (last && frame.step === last.step && frame.t === last.t) {
      this.buf[this.buf.length - 1] = frame;
      return;
    }
    this.buf.push(frame);
    const cutoff = frame.t - this.windowSeconds;
    while (this.buf.length > 0 && this.buf[0].t < cutoff) this.buf.shift();
    while (this.buf.length > this.cap) this.buf.shift();
  }

  frames(): readonly TelemetryFrame[] {
    return this.buf;
  }

  latest(): TelemetryFrame | null {
    return this.buf.length ? this.buf[this.buf.length - 1] : null;
  }

  /** Sim-time span currently held, in seconds. */
  span(): number {
    if (this.buf.length < 2) return 0;
    return this.buf[this.buf.length - 1].t - this.buf[0].t;
  }

  clear(): void {
    this.buf = [];
  }
}
