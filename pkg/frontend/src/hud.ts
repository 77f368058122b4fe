/** Canvas renderers: 3D attitude indicator and trajectory traces.
 * Hand-projected orthographic wireframe; no scene graph, no dependencies.
 * All drawing reads the model and writes pixels, nothing else. */

import type { Quat, TelemetryFrame, Vec3 } from "./protocol.js";

type Mat3 = [Vec3, Vec3, Vec3];

/** World-from-body rotation matrix from a [w,x,y,z] unit quaternion. */
export function quatToMatrix(q: Quat): Mat3 {
  const [w, x, y, z] = q;
  return [
    [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
    [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
    [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
  ];
}

function mul(R: Mat3, v: Vec3): Vec3 {
  return [
    R[0][0] * v[0] + R[0][1] * v[1] + R[0][2] * v[2],
    R[1][0] * v[0] + R[1][1] * v[1] + R[1][2] * v[2],
    R[2][0] * v[0] + R[2][1] * v[1] + R[2][2] * v[2],
  ];
}

// Fixed camera: looking down at ~35 deg from the +x+y quadrant, z up on
// screen. Orthographic, so a point maps to (screen_x, screen_y) by two dot
// products with the camera's right/up axes.
const CAM_RIGHT: Vec3 = [0.7071, -0.7071, 0];
const CAM_UP: Vec3 = [-0.4082, -0.4082, 0.8165];

function project(v: Vec3, cx: number, cy: number, scale: number): [number, number] {
  const sx = CAM_RIGHT[0] * v[0] + CAM_RIGHT[1] * v[1] + CAM_RIGHT[2] * v[2];
  const sy = CAM_UP[0] * v[0] + CAM_UP[1] * v[1] + CAM_UP[2] * v[2];
  return [cx + sx * scale, cy - sy * scale];
}

// Body-frame wireframe of the vehicle: four arms in X configuration, a nose
// marker on +x, and a stub of body z so flips read unambiguously.
const ARM = 0.75;
const WIREFRAME: [Vec3, Vec3, string][] = [
  [[0, 0, 0], [ARM, ARM, 0], "#8b8"],
  [[0, 0, 0], [ARM, -ARM, 0], "#8b8"],
  [[0, 0, 0], [-ARM, -ARM, 0], "#676"],
  [[0, 0, 0], [-ARM, ARM, 0], "#676"],
  [[0, 0, 0], [1.1, 0, 0], "#e55"],          // nose (+x, red)
  [[0, 0, 0], [0, 0, 0.55], "#59e"],         // body z (blue)
];

export function drawAttitude(canvas: HTMLCanvasElement, frame: TelemetryFrame | null): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  const cx = w / 2;
  const cy = h / 2;
  const scale = Math.min(w, h) * 0.38;

  // Ground reference: a world-frame ring with tick marks, fixed on screen.
  ctx.strokeStyle = "#3a4048";
  ctx.lineWidth = 1;
  ctx.beginPath();
  const RING = 1.15;
  for (let i = 0; i <= 48; i++) {
    const a = (i / 48) * 2 * Math.PI;
    const [px, py] = project([RING * Math.cos(a), RING * Math.sin(a), 0], cx, cy, scale);
    if (i === 0) ctx.moveTo(px, py);
    else ctx.lineTo(px, py);
  }
  ctx.stroke();
  const [nx, ny] = project([RING, 0, 0], cx, cy, scale);
  ctx.fillStyle = "#3a4048";
  ctx.fillText("x", nx + 4, ny);

  if (!frame) return;
  const R = quatToMatrix(frame.q);
  ctx.lineWidth = 3;
  ctx.lineCap = "round";
  for (const [a, b, color] of WIREFRAME) {
    const [x1, y1] = project(mul(R, a), cx, cy, scale);
    const [x2, y2] = project(mul(R, b), cx, cy, scale);
    ctx.strokeStyle = color;
    ctx.beginPath();
    ctx.moveTo(x1, y1);
    ctx.lineTo(x2, y2);
    ctx.stroke();
  }
  // Rotor disks at the arm tips.
  ctx.lineWidth = 1.5;
  ctx.strokeStyle = "#aca";
  for (const sx of [ARM, -ARM]) {
    for (const sy of [ARM, -ARM]) {
      const tip = mul(R, [sx, sy, 0]);
      const [px, py] = project(tip, cx, cy, scale);
      ctx.beginPath();
      ctx.arc(px, py, scale * 0.08, 0, 2 * Math.PI);
      ctx.stroke();
    }
  }
}

/** Top-down (x,y) and side (x,z) position traces from the telemetry ring,
 * auto-scaled to the data with a minimum half-meter view. */
export function drawTraces(canvas: HTMLCanvasElement, frames: readonly TelemetryFrame[]): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  if (frames.length === 0) return;
  const half = w / 2;
  drawTrace(ctx, frames, 0, 1, 0, 0, half, h, "top (x,y)");
  drawTrace(ctx, frames, 0, 2, half, 0, half, h, "side (x,z)");
  ctx.strokeStyle = "#3a4048";
  ctx.beginPath();
  ctx.moveTo(half, 0);
  ctx.lineTo(half, h);
  ctx.stroke();
}

function drawTrace(
  ctx: CanvasRenderingContext2D,
  frames: readonly TelemetryFrame[],
  ix: number,
  iy: number,
  x0: number,
  y0: number,
  w: number,
  h: number,
  label: string,
): void {
  let lo0 = Infinity, hi0 = -Infinity, lo1 = Infinity, hi1 = -Infinity;
  for (const f of frames) {
    lo0 = Math.min(lo0, f.p[ix]); hi0 = Math.max(hi0, f.p[ix]);
    lo1 = Math.min(lo1, f.p[iy]); hi1 = Math.max(hi1, f.p[iy]);
  }
  const c0 = (lo0 + hi0) / 2;
  const c1 = (lo1 + hi1) / 2;
  const span = Math.max(hi0 - lo0, hi1 - lo1, 1.0) * 1.2;
  const s = Math.min(w, h) / span;
  const px = (f: TelemetryFrame): [number, number] => [
    x0 + w / 2 + (f.p[ix] - c0) * s,
    y0 + h / 2 - (f.p[iy] - c1) * s,
  ];

  ctx.strokeStyle = "#5a9";
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  frames.forEach((f, i) => {
    const [x, y] = px(f);
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  ctx.stroke();

  const [hx, hy] = px(frames[frames.length - 1]);
  ctx.fillStyle = "#fc6";
  ctx.beginPath();
  ctx.arc(hx, hy, 3.5, 0, 2 * Math.PI);
  ctx.fill();

  ctx.fillStyle = "#788";
  ctx.fillText(label, x0 + 6, y0 + 12);
}
