/** Strip charts over the telemetry ring: body rates and the reward
 * breakdown. Each chart draws its full 10 s window every frame; at ~300
 * points per series this is far below canvas budget, so there is no
 * incremental path to keep consistent. */

import type { TelemetryFrame } from "./protocol.js";

interface Series {
  label: string;
  color: string;
  value: (f: TelemetryFrame) => number;
}

const OMEGA_SERIES: Series[] = [
  { label: "wx", color: "#e57", value: (f) => f.omega[0] },
  { label: "wy", color: "#5c7", value: (f) => f.omega[1] },
  { label: "wz", color: "#59e", value: (f) => f.omega[2] },
];

const REWARD_SERIES: Series[] = [
  { label: "total", color: "#fc6", value: (f) => f.reward.total },
  { label: "pos", color: "#e57", value: (f) => f.reward.r_pos },
  { label: "lin", color: "#5c7", value: (f) => f.reward.r_lin },
  { label: "ang", color: "#59e", value: (f) => f.reward.r_ang },
  { label: "cmd", color: "#b7e", value: (f) => f.reward.r_cmd },
  { label: "task", color: "#7cc", value: (f) => f.reward.r_task },
];

export function drawOmegaPlot(canvas: HTMLCanvasElement, frames: readonly TelemetryFrame[], windowSeconds: number): void {
  drawStrip(canvas, frames, OMEGA_SERIES, windowSeconds, true);
}

export function drawRewardPlot(canvas: HTMLCanvasElement, frames: readonly TelemetryFrame[], windowSeconds: number): void {
  drawStrip(canvas, frames, REWARD_SERIES, windowSeconds, false);
}

function drawStrip(
  canvas: HTMLCanvasElement,
  frames: readonly TelemetryFrame[],
  series: Series[],
  windowSeconds: number,
  symmetric: boolean,
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  if (frames.length === 0) return;

  const t1 = frames[frames.length - 1].t;
  const t0 = t1 - windowSeconds;
  let lo = Infinity;
  let hi = -Infinity;
  for (const s of series) {
    for (const f of frames) {
      const v = s.value(f);
      lo = Math.min(lo, v);
      hi = Math.max(hi, v);
    }
  }
  if (symmetric) {
    const m = Math.max(Math.abs(lo), Math.abs(hi), 1);
    lo = -m;
    hi = m;
  } else {
    lo = Math.min(lo, 0);
    hi = Math.max(hi, 1);
  }
  const pad = (hi - lo) * 0.08;
  lo -= pad;
  hi += pad;

  const X = (t: number): number => ((t - t0) / windowSeconds) * w;
  const Y = (v: number): number => h - ((v - lo) / (hi - lo)) * h;

  // zero line
  if (lo < 0 && hi > 0) {
    ctx.strokeStyle = "#3a4048";
    ctx.beginPath();
    ctx.moveTo(0, Y(0));
    ctx.lineTo(w, Y(0));
    ctx.stroke();
  }

  for (const s of series) {
    ctx.strokeStyle = s.color;
    ctx.lineWidth = s.label === "total" ? 2 : 1.2;
    ctx.beginPath();
    let started = false;
    for (const f of frames) {
      if (f.t < t0) continue;
      const x = X(f.t);
      const y = Y(s.value(f));
      if (!started) {
        ctx.moveTo(x, y);
        started = true;
      } else {
        ctx.lineTo(x, y);
      }
    }
    ctx.stroke();
  }

  // legend
  let lx = 6;
  for (const s of series) {
    ctx.fillStyle = s.color;
    ctx.fillText(s.label, lx, 12);
    lx += ctx.measureText(s.label).width + 10;
  }
  ctx.fillStyle = "#788";
  ctx.fillText(hi.toFixed(1), w - 30, 12);
  ctx.fillText(lo.toFixed(1), w - 30, h - 4);
}
