import { DragController } from "./drag.js";
import { drawScene } from "./render.js";
import { SessionClient } from "./session.js";
import { ViewState } from "./state.js";
import { Viewport } from "./view.js";
import { commandMessage, energyMessage } from "./wire.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

const canvas = el<HTMLCanvasElement>("mesh");
const banner = el<HTMLDivElement>("banner");
const bannerText = el<HTMLSpanElement>("banner-text");
const retryButton = el<HTMLButtonElement>("retry");
const readout = el<HTMLSpanElement>("readout");
const warningLine = el<HTMLSpanElement>("warning");
const flipToggle = el<HTMLInputElement>("toggle-flips");
const energyToggle = el<HTMLInputElement>("toggle-energy");
const energySelect = el<HTMLSelectElement>("energy-kind");

const params = new URLSearchParams(location.search);
const url = params.get("server") ?? `ws://${location.hostname}:8787/session`;

const state = new ViewState();
const view = new Viewport();
const session = new SessionClient(url);
const drag = new DragController(state, view, (payload) => session.send(payload));

function resize(): void {
  const rect = canvas.getBoundingClientRect();
  const dpr = window.devicePixelRatio || 1;
  canvas.width = Math.max(1, Math.round(rect.width * dpr));
  canvas.height = Math.max(1, Math.round(rect.height * dpr));
  const hadMesh = view.width > 1 && state.hasMesh;
  view.resize(rect.width, rect.height);
  if (!hadMesh && state.hasMesh) view.fitTo(state.rest);
}

function pointerPos(ev: PointerEvent | WheelEvent): [number, number] {
  const rect = canvas.getBoundingClientRect();
  return [ev.clientX - rect.left, ev.clientY - rect.top];
}

canvas.addEventListener("pointerdown", (ev) => {
  canvas.setPointerCapture(ev.pointerId);
  const [sx, sy] = pointerPos(ev);
  drag.pointerDown(sx, sy, ev.shiftKey || ev.ctrlKey || ev.metaKey);
  ev.preventDefault();
});
canvas.addEventListener("pointermove", (ev) => {
  const [sx, sy] = pointerPos(ev);
  drag.pointerMove(sx, sy);
});
canvas.addEventListener("pointerup", () => drag.pointerUp());
canvas.addEventListener("pointercancel", () => drag.pointerUp());
canvas.addEventListener("wheel", (ev) => {
  const [sx, sy] = pointerPos(ev);
  view.zoomAt(sx, sy, ev.deltaY < 0 ? 1.15 : 1 / 1.15);
  ev.preventDefault();
});

retryButton.addEventListener("click", () => session.retry());
flipToggle.addEventListener("change", () => (state.showFlips = flipToggle.checked));
energyToggle.addEventListener("change", () => (state.showEnergy = energyToggle.checked));
energySelect.addEventListener("change", () => {
  session.send(energyMessage(energySelect.value as "sg" | "sd"));
});
el<HTMLButtonElement>("pause").addEventListener("click", () =>
  session.send(commandMessage("pause")),
);
el<HTMLButtonElement>("resume").addEventListener("click", () =>
  session.send(commandMessage("resume")),
);
el<HTMLButtonElement>("reset").addEventListener("click", () =>
  session.send(commandMessage("reset")),
);
window.addEventListener("resize", resize);

function updateChrome(): void {
  if (session.connection === "open") {
    banner.classList.add("hidden");
  } else {
    banner.classList.remove("hidden");
    bannerText.textContent =
      session.connection === "connecting"
        ? `connecting to ${url} ...`
        : `connection lost (${session.lastClose ?? "unknown"})`;
    retryButton.disabled = session.connection === "connecting";
  }
  const parts: string[] = [];
  if (state.status) parts.push(state.status);
  if (state.lastIter >= 0) parts.push(`iter ${state.lastIter}`);
  if (state.showEnergy && isFinite(state.energy)) {
    parts.push(`energy ${state.energy.toPrecision(6)}`);
  }
  parts.push(`flips ${state.clientFlips}`);
  if (state.flipMismatch) {
    parts.push(`FLIP COUNT MISMATCH (server ${state.serverFlips})`);
  }
  if (state.lastApplied) parts.push(`[${state.lastApplied}]`);
  readout.textContent = parts.join(" · ");
  readout.classList.toggle("alert", state.flipMismatch);
  warningLine.textContent = state.warning ?? state.lastError ?? "";
}

function frame(): void {
  const batch = session.drain();
  let sawMesh = false;
  for (const msg of batch) {
    state.apply(msg);
    if (msg.type === "mesh") sawMesh = true;
  }
  if (sawMesh) {
    resize();
    view.fitTo(state.rest);
  }
  const ctx = canvas.getContext("2d");
  if (ctx) {
    const dpr = window.devicePixelRatio || 1;
    ctx.save();
    ctx.scale(dpr, dpr);
    drawScene(ctx, state, view);
    ctx.restore();
  }
  updateChrome();
  requestAnimationFrame(frame);
}

resize();
session.connect();
requestAnimationFrame(frame);
