// Minimal canvas strip chart: one polyline per tag plus dashed overlays for
// static bounds, survival threshold, and target, matching the plant-floor
// idiom of dashed limit lines.

import type { SeriesPoint } from "./viewmodel.js";
import type { TagConfig } from "./types.js";

const PAD = { left: 54, right: 10, top: 8, bottom: 18 };

interface Overlay {
  value: number;
  color: string;
  label: string;
}

export function overlaysFor(tag: TagConfig): Overlay[] {
  const out: Overlay[] = [];
  if (tag.static_bounds) {
    out.push({ value: tag.static_bounds[0], color: "#c0392b", label: "lo" });
    out.push({ value: tag.static_bounds[1], color: "#c0392b", label: "hi" });
  }
  if (tag.survival_threshold !== undefined) {
    out.push({ value: tag.survival_threshold, color: "#8e44ad", label: "survival" });
  }
  if (tag.target !== undefined) {
    out.push({ value: tag.target, color: "#27ae60", label: "target" });
  }
  return out;
}

export function drawChart(
  canvas: HTMLCanvasElement,
  points: SeriesPoint[],
  tag: TagConfig,
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  if (points.length === 0) return;

  const overlays = overlaysFor(tag);
  const values = points.map((p) => p.v).concat(overlays.map((o) => o.value));
  let vMin = Math.min(...values);
  let vMax = Math.max(...values);
  if (vMax - vMin < 1e-9) {
    vMin -= 1;
    vMax += 1;
  }
  const span = vMax - vMin;
  vMin -= span * 0.08;
  vMax += span * 0.08;
  const tMin = points[0].t;
  const tMax = points[points.length - 1].t;
  const x = (t: number) =>
    PAD.left + ((t - tMin) / Math.max(tMax - tMin, 1)) * (width - PAD.left - PAD.right);
  const y = (v: number) =>
    height - PAD.bottom - ((v - vMin) / (vMax - vMin)) * (height - PAD.top - PAD.bottom);

  ctx.strokeStyle = "#555";
  ctx.strokeRect(PAD.left, PAD.top, width - PAD.left - PAD.right, height - PAD.top - PAD.bottom);

  ctx.font = "10px sans-serif";
  ctx.fillStyle = "#888";
  ctx.fillText(vMax.toPrecision(4), 4, PAD.top + 10);
  ctx.fillText(vMin.toPrecision(4), 4, height - PAD.bottom);

  for (const overlay of overlays) {
    ctx.strokeStyle = overlay.color;
    ctx.setLineDash([6, 4]);
    ctx.beginPath();
    ctx.moveTo(PAD.left, y(overlay.value));
    ctx.lineTo(width - PAD.right, y(overlay.value));
    ctx.stroke();
    ctx.setLineDash([]);
    ctx.fillStyle = overlay.color;
    ctx.fillText(overlay.label, width - PAD.right - 44, y(overlay.value) - 3);
  }

  ctx.strokeStyle = "#2980b9";
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  points.forEach((p, i) => {
    if (i === 0) ctx.moveTo(x(p.t), y(p.v));
    else ctx.lineTo(x(p.t), y(p.v));
  });
  ctx.stroke();
  ctx.lineWidth = 1;
}
