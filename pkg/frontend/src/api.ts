// Thin service client. Every user action maps to exactly one HTTP call and
// decisions are never retried automatically: a retry could re-apply a set
// point the operator only approved once.

import type { ConfigDoc, StatusDoc } from "./types.js";

export interface ApiError {
  error: string;
  message: string;
}

export class ServiceClient {
  constructor(
    private base: string = "",
    private fetchFn: typeof fetch = fetch.bind(globalThis),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(`${this.base}${path}`, init);
    const body = (await response.json()) as T | ApiError;
    if (!response.ok) {
      const err = body as ApiError;
      throw Object.assign(new Error(err.message ?? response.statusText), {
        apiError: err.error ?? "HttpError",
      });
    }
    return body as T;
  }

  fetchConfig(): Promise<ConfigDoc> {
    return this.request<ConfigDoc>("/config");
  }

  fetchStatus(): Promise<StatusDoc> {
    return this.request<StatusDoc>("/status");
  }

  decide(id: string, decision: "accept" | "reject"): Promise<{ id: string; decision: string }> {
    return this.request(`/prescriptions/${encodeURIComponent(id)}/decision`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ decision }),
    });
  }

  setMode(mode: "auto" | "supervised"): Promise<{ mode: string; changed: boolean }> {
    return this.request("/mode", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ mode }),
    });
  }
}

export function streamUrl(base: string, since: number): string {
  const origin = base || (typeof location !== "undefined" ? location.origin : "");
  return `${origin.replace(/^http/, "ws")}/stream?since=${since}`;
}
