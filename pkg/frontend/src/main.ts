// DOM wiring: one WebSocket in, one API call per user action out. On socket
// drop we reconnect with ?since=<last seq>, so no event is ever missed or
// double-applied.

import { ServiceClient, streamUrl } from "./api.js";
import { drawChart } from "./charts.js";
import { ConsoleViewModel } from "./viewmodel.js";
import type { StreamEvent } from "./types.js";

const vm = new ConsoleViewModel();
const api = new ServiceClient("");
let socket: WebSocket | null = null;
let reconnectDelayMs = 500;

const el = (id: string) => document.getElementById(id) as HTMLElement;

function connect(): void {
  vm.connection = vm.lastSeq === 0 ? "connecting" : "reconnecting";
  renderHeader();
  socket = new WebSocket(streamUrl("", vm.lastSeq));
  socket.onopen = () => {
    vm.connection = "live";
    reconnectDelayMs = 500;
    renderHeader();
  };
  socket.onmessage = (message) => {
    const event = JSON.parse(message.data) as StreamEvent;
    vm.apply(event);
    render();
  };
  socket.onclose = () => {
    vm.connection = "reconnecting";
    renderHeader();
    setTimeout(connect, reconnectDelayMs);
    reconnectDelayMs = Math.min(reconnectDelayMs * 2, 10_000);
  };
}

function renderHeader(): void {
  el("connection").textContent = vm.connection;
  el("connection").className = `pill ${vm.connection}`;
  el("control-mode").textContent = vm.controlMode ?? "-";
  el("control-mode").className = `pill mode-${vm.controlMode ?? "none"}`;
  el("banner").style.display = vm.survivalBannerVisible ? "block" : "none";
  const toggle = el("mode-toggle") as HTMLButtonElement;
  toggle.textContent =
    vm.steeringMode === "auto" ? "switch to supervised" : "switch to auto";
  el("steering-mode").textContent = vm.steeringMode ?? "-";
}

function renderCharts(): void {
  const host = el("charts");
  for (const tag of vm.tags) {
    let canvas = document.getElementById(`chart-${tag.name}`) as HTMLCanvasElement | null;
    if (!canvas) {
      const box = document.createElement("div");
      box.className = "chart-box";
      const title = document.createElement("div");
      title.className = "chart-title";
      title.textContent = `${tag.name} [${tag.unit}] (${tag.kind})`;
      canvas = document.createElement("canvas");
      canvas.id = `chart-${tag.name}`;
      canvas.width = 560;
      canvas.height = 150;
      box.appendChild(title);
      box.appendChild(canvas);
      host.appendChild(box);
    }
    drawChart(canvas, vm.series.get(tag.name) ?? [], tag);
  }
}

function renderQueue(): void {
  const host = el("queue");
  host.innerHTML = "";
  if (vm.queue.size === 0) {
    host.innerHTML = '<div class="empty">no pending prescriptions</div>';
  }
  for (const [id, entry] of vm.queue) {
    const row = document.createElement("div");
    row.className = "rx";
    const controls = Object.entries(entry.rx.controls)
      .map(([tag, value]) => `${tag} → ${value.toFixed(2)}`)
      .join(", ");
    const predicted = Object.entries(entry.rx.predicted)
      .map(([tag, value]) => `${tag}≈${value.toFixed(3)}`)
      .join(" ");
    row.innerHTML =
      `<div><b>${id}</b> <span class="mode-${entry.rx.mode}">${entry.rx.mode}</span></div>` +
      `<div>${controls}</div><div class="predicted">${predicted}</div>` +
      `<div class="rationale">${entry.rx.rationale}</div>`;
    const approve = document.createElement("button");
    approve.textContent = "approve";
    const reject = document.createElement("button");
    reject.textContent = "reject";
    approve.disabled = reject.disabled = entry.state === "awaiting_server";
    approve.onclick = () => act(id, "accept");
    reject.onclick = () => act(id, "reject");
    row.appendChild(approve);
    row.appendChild(reject);
    host.appendChild(row);
  }
}

function renderLists(): void {
  el("alerts").innerHTML = vm.alerts
    .slice(-12)
    .reverse()
    .map((a) => `<div class="alert">[${a.ts_ms}] ${a.kind} ${a.tag ?? ""}: ${a.detail}</div>`)
    .join("");
  el("history").innerHTML = vm.history
    .slice(-12)
    .reverse()
    .map((h) => `<div>${h.id}: ${h.decision}${h.reason ? ` (${h.reason})` : ""}</div>`)
    .join("");
  el("toasts").innerHTML = vm.toasts
    .slice(-3)
    .map((t) => `<div class="toast ${t.error ? "error" : ""}">${t.text}</div>`)
    .join("");
}

function render(): void {
  renderHeader();
  renderCharts();
  renderQueue();
  renderLists();
}

function act(id: string, decision: "accept" | "reject"): void {
  vm.markAwaitingServer(id);
  renderQueue();
  api.decide(id, decision).catch((err) => {
    vm.actionFailed(id, (err as { apiError?: string }).apiError ?? "Error", String(err.message));
    render();
  });
}

function toggleMode(): void {
  const target = vm.steeringMode === "auto" ? "supervised" : "auto";
  if (target === "auto" && vm.queue.size > 0) {
    const ok = window.confirm(
      `${vm.queue.size} pending prescription(s) will be rejected when switching to auto. Continue?`,
    );
    if (!ok) return;
  }
  api
    .setMode(target)
    .then(() => {
      vm.steeringMode = target;
      renderHeader();
    })
    .catch((err) => {
      vm.toast(String(err.message), true);
      renderLists();
    });
}

async function boot(): Promise<void> {
  const config = await api.fetchConfig();
  vm.applyConfig(config);
  const status = await api.fetchStatus();
  vm.steeringMode = status.mode;
  render();
  (el("mode-toggle") as HTMLButtonElement).onclick = toggleMode;
  connect();
}

boot().catch((err) => {
  el("toasts").innerHTML = `<div class="toast error">failed to load: ${err}</div>`;
});
