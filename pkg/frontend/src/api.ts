import type {
  ApiErrorBody, DiffPayload, EventRecord, SessionState, TraceView, TurnResult,
} from "./types.js";

// Structured service error, rendered verbatim (code, message, grammar hints
// in details) wherever it surfaces in the UI.
export class ApiError extends Error {
  readonly code: string;
  readonly details: Record<string, unknown>;
  readonly status: number;

  constructor(status: number, body: ApiErrorBody) {
    super(body.message);
    this.name = "ApiError";
    this.status = status;
    this.code = body.code;
    this.details = body.details ?? {};
  }
}

async function unwrap<T>(res: Response): Promise<T> {
  const text = await res.text();
  const body = text ? JSON.parse(text) : {};
  if (!res.ok) {
    const err = (body as { error?: ApiErrorBody }).error;
    throw new ApiError(res.status, err ?? { code: "http-error", message: `HTTP ${res.status}`, details: {} });
  }
  return body as T;
}

export class ApiClient {
  constructor(readonly base: string) {}

  private url(path: string): string {
    return `${this.base}${path}`;
  }

  private async get<T>(path: string): Promise<T> {
    return unwrap<T>(await fetch(this.url(path)));
  }

  private async post<T>(path: string, body?: unknown): Promise<T> {
    return unwrap<T>(await fetch(this.url(path), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body ?? {}),
    }));
  }

  healthz(): Promise<{ ok: boolean; sessions: string[] }> {
    return this.get("/healthz");
  }

  listSessions(): Promise<{ sessions: string[] }> {
    return this.get("/sessions");
  }

  createSession(sessionId?: string): Promise<{ session_id: string; seed: number; context_hash: string }> {
    return this.post("/sessions", sessionId ? { session_id: sessionId } : {});
  }

  sendTurn(sid: string, text: string): Promise<TurnResult> {
    return this.post(`/sessions/${sid}/turns`, { text });
  }

  approve(sid: string, planId: string, approved = true): Promise<TurnResult> {
    return this.post(`/sessions/${sid}/plans/${planId}/approve`, { approved });
  }

  state(sid: string): Promise<SessionState> {
    return this.get(`/sessions/${sid}/state`);
  }

  trace(sid: string): Promise<{ traces: TraceView[] }> {
    return this.get(`/sessions/${sid}/trace`);
  }

  snapshots(sid: string): Promise<{ snapshots: string[] }> {
    return this.get(`/sessions/${sid}/snapshots`);
  }

  rollback(sid: string, snapshotId: string): Promise<{ kind: string; snapshot_id: string; context_hash: string }> {
    return this.post(`/sessions/${sid}/rollback/${snapshotId}`);
  }

  diff(sid: string, base: string, target: string): Promise<DiffPayload> {
    return this.get(`/sessions/${sid}/diff?base=${encodeURIComponent(base)}&target=${encodeURIComponent(target)}`);
  }

  events(sid: string, after = -1): Promise<{ events: EventRecord[] }> {
    return this.get(`/sessions/${sid}/events.json?after=${after}`);
  }

  eventStreamUrl(sid: string, opts: { after?: number; once?: boolean } = {}): string {
    const params = new URLSearchParams();
    if (opts.after !== undefined) params.set("after", String(opts.after));
    if (opts.once) params.set("once", "true");
    const qs = params.toString();
    return this.url(`/sessions/${sid}/events${qs ? `?${qs}` : ""}`);
  }
}
