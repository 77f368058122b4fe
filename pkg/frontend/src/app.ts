/** Cockpit entry point. One controller, one render loop.
 *
 * Telemetry arrives at the service rate (30 Hz default) and is folded into
 * the model immediately; drawing happens on requestAnimationFrame and always
 * renders the latest model, so a fast stream is decimated to the display
 * refresh instead of queuing. */

import { mountControls } from "./controls.js";
import { drawAttitude, drawTraces } from "./hud.js";
import { drawOmegaPlot, drawRewardPlot } from "./plots.js";
import { isOod } from "./protocol.js";
import { SessionController, type SocketLike } from "./session.js";

function canvas(id: string): HTMLCanvasElement {
  const c = document.getElementById(id);
  if (!(c instanceof HTMLCanvasElement)) throw new Error(`missing canvas #${id}`);
  return c;
}

function text(id: string): HTMLElement {
  const n = document.getElementById(id);
  if (!n) throw new Error(`missing element #${id}`);
  return n;
}

const wsUrl = `ws://${location.host}/ws`;
const ctrl = new SessionController({
  url: wsUrl,
  // the browser socket satisfies SocketLike at runtime; its handler params
  // are just declared narrower (Event vs unknown), hence the cast
  makeSocket: (url) => new WebSocket(url) as unknown as SocketLike,
});

const attitude = canvas("attitude");
const traces = canvas("traces");
const omegaPlot = canvas("omega-plot");
const rewardPlot = canvas("reward-plot");
const connBadge = text("conn");
const taskBadge = text("task-badge");
const scriptBadge = text("script-badge");
const helloLine = text("hello-line");
const logBox = text("log");

const updateControls = mountControls(text("controls"), ctrl);

let dirty = true;
ctrl.connect();
const origDispatch = ctrl.dispatch.bind(ctrl);
ctrl.dispatch = (ev) => {
  origDispatch(ev);
  dirty = true;
};

function render(): void {
  requestAnimationFrame(render);
  if (!dirty) return;
  dirty = false;
  const m = ctrl.model;

  connBadge.textContent = m.connection;
  connBadge.className = `badge ${m.connection}`;
  const f = m.latest;
  if (f) {
    const param = f.task === "hover" ? "" : ` ${f.param.toFixed(1)}`;
    const ood = f.task !== "hover" && isOod(f.task, f.param) ? " [OOD]" : "";
    taskBadge.textContent = `${f.task}${param}${ood}  t=${f.t.toFixed(2)}s  step ${f.step}` +
      (f.paused ? "  [paused]" : "") + (f.timescale !== 1 ? `  ${f.timescale}x` : "");
  }
  scriptBadge.textContent = m.script
    ? `script ${m.script.name}: ${m.script.firings.length} fired`
    : "";
  helloLine.textContent = m.hello
    ? `config ${m.hello.config_hash.slice(0, 12)}  net ${m.hello.network_hash.slice(0, 12)}` +
      (m.hello.oracle ? "  oracle" : "")
    : "";
  logBox.textContent = m.log.slice(-8).join("\n");

  drawAttitude(attitude, f);
  drawTraces(traces, m.ring.frames());
  drawOmegaPlot(omegaPlot, m.ring.frames(), m.ring.windowSeconds);
  drawRewardPlot(rewardPlot, m.ring.frames(), m.ring.windowSeconds);
  updateControls(m);
}

requestAnimationFrame(render);
