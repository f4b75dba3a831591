// Pure console state: applying the event stream in order reproduces the
// exact same views, so replaying the service's audit log is a full repro.

import type {
  AlertPayload,
  ConfigDoc,
  DecisionPayload,
  FramePayload,
  ModeChangePayload,
  PrescriptionPayload,
  StreamEvent,
  TagConfig,
} from "./types.js";

export interface SeriesPoint {
  t: number;
  v: number;
}

export interface QueueEntry {
  rx: PrescriptionPayload;
  state: "pending" | "awaiting_server";
}

export interface HistoryEntry {
  id: string;
  decision: string;
  tsMs: number;
  reason?: string;
}

export interface Toast {
  text: string;
  error: boolean;
}

export type ConnectionState = "connecting" | "live" | "reconnecting";

const DEFAULT_ALERT_LIMIT = 100;
const DEFAULT_HISTORY_LIMIT = 50;

export class ConsoleViewModel {
  connection: ConnectionState = "connecting";
  lastSeq = 0;
  bufferLimit = 80; // reset from config: 2 * window_size * 10
  tags: TagConfig[] = [];
  series = new Map<string, SeriesPoint[]>();
  queue = new Map<string, QueueEntry>();
  history: HistoryEntry[] = [];
  alerts: AlertPayload[] = [];
  steeringMode: "auto" | "supervised" | null = null;
  controlMode: string | null = null;
  survivalSince: number | null = null;
  toasts: Toast[] = [];
  lastFrameTs: number | null = null;

  applyConfig(doc: ConfigDoc): void {
    this.tags = doc.tags;
    this.bufferLimit = Math.max(20, 2 * doc.window_size * 10);
    for (const tag of doc.tags) {
      if (!this.series.has(tag.name)) this.series.set(tag.name, []);
    }
  }

  tag(name: string): TagConfig | undefined {
    return this.tags.find((t) => t.name === name);
  }

  get survivalBannerVisible(): boolean {
    return this.controlMode === "survival";
  }

  get pendingIds(): string[] {
    return [...this.queue.keys()];
  }

  apply(event: StreamEvent): void {
    if (event.seq <= this.lastSeq) return; // replay overlap after reconnect
    this.lastSeq = event.seq;
    switch (event.kind) {
      case "frame":
        this.applyFrame(event.payload as unknown as FramePayload);
        break;
      case "prescription":
        this.applyPrescription(event.payload as unknown as PrescriptionPayload);
        break;
      case "alert":
        this.applyAlert(event.payload as unknown as AlertPayload);
        break;
      case "mode_change":
        this.applyModeChange(event.payload as unknown as ModeChangePayload);
        break;
      case "decision":
        this.applyDecision(event.payload as unknown as DecisionPayload);
        break;
    }
  }

  private applyFrame(frame: FramePayload): void {
    this.lastFrameTs = frame.ts_ms;
    for (const [tag, value] of Object.entries(frame.values)) {
      let points = this.series.get(tag);
      if (!points) {
        points = [];
        this.series.set(tag, points);
      }
      points.push({ t: frame.ts_ms, v: value });
      if (points.length > this.bufferLimit) {
        points.splice(0, points.length - this.bufferLimit);
      }
    }
  }

  private applyPrescription(rx: PrescriptionPayload): void {
    if (rx.pending) {
      this.queue.set(rx.id, { rx, state: "pending" });
    }
  }

  private applyAlert(alert: AlertPayload): void {
    this.alerts.push(alert);
    if (this.alerts.length > DEFAULT_ALERT_LIMIT) {
      this.alerts.splice(0, this.alerts.length - DEFAULT_ALERT_LIMIT);
    }
  }

  private applyModeChange(change: ModeChangePayload): void {
    if (change.steering) {
      this.steeringMode = change.to as "auto" | "supervised";
      return;
    }
    this.controlMode = change.to;
    if (change.to === "survival") {
      this.survivalSince = change.ts_ms;
    } else {
      this.survivalSince = null;
    }
  }

  private applyDecision(decision: DecisionPayload): void {
    this.queue.delete(decision.id);
    this.history.push({
      id: decision.id,
      decision: decision.decision,
      tsMs: decision.ts_ms,
      reason: decision.reason,
    });
    if (this.history.length > DEFAULT_HISTORY_LIMIT) {
      this.history.splice(0, this.history.length - DEFAULT_HISTORY_LIMIT);
    }
  }

  // --- optimistic action bookkeeping; the decision event is authoritative ---

  markAwaitingServer(id: string): void {
    const entry = this.queue.get(id);
    if (entry) entry.state = "awaiting_server";
  }

  actionFailed(id: string, error: string, message: string): void {
    this.toast(`${error}: ${message}`, true);
    if (error === "StaleIdError" || error === "UnknownIdError") {
      this.queue.delete(id); // the server will never decide it
    } else {
      const entry = this.queue.get(id);
      if (entry) entry.state = "pending";
    }
  }

  toast(text: string, error = false): void {
    this.toasts.push({ text, error });
    if (this.toasts.length > 5) this.toasts.splice(0, this.toasts.length - 5);
  }
}
