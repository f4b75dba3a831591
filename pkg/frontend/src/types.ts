// Wire shapes consumed from the steering service. The console renders only
// what the service sends; it never computes control values client-side.

export type EventKind = "frame" | "prescription" | "alert" | "mode_change" | "decision";

export interface StreamEvent {
  seq: number;
  kind: EventKind;
  payload: Record<string, unknown>;
}

export interface FramePayload {
  ts_ms: number;
  values: Record<string, number>;
  provenance?: Record<string, string>;
}

export interface PrescriptionPayload {
  id: string;
  ts_ms: number;
  mode: "ai" | "safeguard" | "survival";
  controls: Record<string, number>;
  predicted: Record<string, number>;
  objective_value: number | null;
  rationale: string;
  pending?: boolean;
}

export interface AlertPayload {
  ts_ms: number;
  kind: string;
  tag: string | null;
  detail: string;
}

export interface ModeChangePayload {
  ts_ms: number;
  from: string | null;
  to: string;
  triggering_tags?: string[];
  steering?: boolean;
}

export interface DecisionPayload {
  ts_ms: number;
  id: string;
  decision: "accepted" | "rejected" | "auto_applied";
  reason?: string;
}

export interface TagConfig {
  name: string;
  kind: "control" | "constraint" | "optimize" | "normalize";
  unit: string;
  static_bounds?: [number, number];
  survival_threshold?: number;
  target?: number;
  max_step?: number;
}

export interface ConfigDoc {
  sample_period_ms: number;
  window_size: number;
  prediction_length: number;
  tags: TagConfig[];
  relations: { cause: string; effect: string; sign: string }[];
}

export interface StatusDoc {
  mode: "auto" | "supervised";
  step: number;
  t_ms: number;
  pending: string[];
  decision: { mode: string; triggering_tags: string[]; since_ms: number } | null;
}
