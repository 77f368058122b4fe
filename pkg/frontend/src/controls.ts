/** Operator controls: command buttons with parameter sliders, the script
 * launcher, and transport controls. Pure DOM, wired to the controller; the
 * OOD zones on each slider are the region outside the training distribution
 * and are shading only, never a clamp (flying there is the point). */

import { BUILTIN_SCRIPTS, SLIDER_RANGES, TASKS, isOod, type TaskName } from "./protocol.js";
import type { SessionController, SessionModel } from "./session.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  cls?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (cls) node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

/** Slider track background with the in-distribution band highlighted and
 * everything else tinted as OOD. */
function sliderTrack(task: TaskName): string {
  const r = SLIDER_RANGES[task];
  if (r.max === r.min) return "#2c3136";
  const pct = (v: number): number => (100 * (v - r.min)) / (r.max - r.min);
  const a = pct(r.inner[0]);
  const b = pct(r.inner[1]);
  return (
    `linear-gradient(to right, #7a4b52 0%, #7a4b52 ${a}%, ` +
    `#3d5a46 ${a}%, #3d5a46 ${b}%, #7a4b52 ${b}%, #7a4b52 100%)`
  );
}

export function mountControls(root: HTMLElement, ctrl: SessionController): (m: SessionModel) => void {
  const taskButtons = new Map<TaskName, HTMLButtonElement>();
  const sliders = new Map<TaskName, HTMLInputElement>();
  const valueLabels = new Map<TaskName, HTMLSpanElement>();

  const commands = el("div", "panel");
  commands.appendChild(el("h2", undefined, "commands"));
  for (const task of TASKS) {
    const row = el("div", "cmd-row");
    const btn = el("button", "cmd", task);
    const range = SLIDER_RANGES[task];
    const slider = el("input") as HTMLInputElement;
    slider.type = "range";
    slider.min = String(range.min);
    slider.max = String(range.max);
    slider.step = String(range.step);
    slider.value = String(task === "flip" ? 5 : range.max > 0 ? Math.min(3, range.max) : 0);
    slider.style.background = sliderTrack(task);
    slider.disabled = range.max === range.min;
    const val = el("span", "val");

    const refresh = (): void => {
      const p = sliderParam(task, slider);
      val.textContent = task === "hover" ? "" : p.toFixed(task === "roll" ? 0 : 1);
      val.classList.toggle("ood", isOod(task, p));
    };
    slider.addEventListener("input", refresh);
    refresh();

    btn.addEventListener("click", () => {
      const param = sliderParam(task, slider);
      ctrl.dispatch({ type: "form", task, param });
      ctrl.send({ kind: "command", task, param });
    });

    row.append(btn, slider, val);
    commands.appendChild(row);
    taskButtons.set(task, btn);
    sliders.set(task, slider);
    valueLabels.set(task, val);
  }

  const scripts = el("div", "panel");
  scripts.appendChild(el("h2", undefined, "scripts"));
  const scriptButtons: HTMLButtonElement[] = [];
  for (const name of BUILTIN_SCRIPTS) {
    const btn = el("button", "script", name);
    btn.addEventListener("click", () => ctrl.send({ kind: "run_script", name }));
    scripts.appendChild(btn);
    scriptButtons.push(btn);
  }
  const manual = el("button", "script", "manual trigger");
  manual.addEventListener("click", () => ctrl.send({ kind: "manual_trigger" }));
  scripts.appendChild(manual);
  scriptButtons.push(manual);

  const transport = el("div", "panel");
  transport.appendChild(el("h2", undefined, "sim"));
  const pauseBtn = el("button", "transport", "pause");
  const resetBtn = el("button", "transport", "reset");
  pauseBtn.addEventListener("click", () => {
    const paused = ctrl.model.latest?.paused ?? false;
    ctrl.send({ kind: paused ? "resume" : "pause" });
  });
  resetBtn.addEventListener("click", () => ctrl.send({ kind: "reset" }));
  const speed = el("select") as HTMLSelectElement;
  for (const f of [0.25, 0.5, 1, 2, 4]) {
    const opt = el("option", undefined, `${f}x`) as HTMLOptionElement;
    opt.value = String(f);
    if (f === 1) opt.selected = true;
    speed.appendChild(opt);
  }
  speed.addEventListener("change", () => ctrl.send({ kind: "set_time_scale", factor: Number(speed.value) }));
  transport.append(pauseBtn, resetBtn, speed);

  root.append(commands, scripts, transport);

  const allButtons = [...taskButtons.values(), ...scriptButtons, pauseBtn, resetBtn];
  return (m: SessionModel): void => {
    const connected = m.connection === "open";
    for (const b of allButtons) b.disabled = !connected;
    speed.disabled = !connected;
    pauseBtn.textContent = m.latest?.paused ? "resume" : "pause";
  };
}

/** Roll commands are whole turns and zero turns is not a command; snap away
 * from 0 toward the slider's sign (defaulting to +1). */
function sliderParam(task: TaskName, slider: HTMLInputElement): number {
  let p = Number(slider.value);
  if (task === "roll") {
    p = Math.round(p);
    if (p === 0) p = 1;
  }
  if (task === "hover") p = 0;
  return p;
}
