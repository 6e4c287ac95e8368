import { ApiClient, ApiError } from "./api.js";
import { DiffRow, renderDiff } from "./diff.js";
import { EventStream } from "./sse.js";
import {
  TimelineRow, planRows, reduceTimeline, traceStepRows, deviationRows,
} from "./timeline.js";
import type {
  DeviationView, EventRecord, ObjectiveView, PreserveScopeView, TraceView,
  TurnResult, WorkflowView,
} from "./types.js";

// Headless console core: the three user-facing operations (send a turn,
// approve and watch, view a snapshot diff) over the HTTP API and event
// stream.  The browser shell and the tests drive this same class.

export type TurnView =
  | { kind: "executed"; status: string; deviation: DeviationView; rows: TimelineRow[] }
  | { kind: "awaiting-approval"; planId: string; steps: string[]; estimate: ObjectiveView }
  | { kind: "error"; code: string; message: string; hint?: string };

export interface WatchResult {
  status: string;
  rows: TimelineRow[];
  deviation: DeviationView;
  events: EventRecord[];
}

export class ConsoleSession {
  rows: TimelineRow[] = [];
  private lastSeq = -1;

  constructor(readonly api: ApiClient, readonly sid: string) {}

  // Pull any events past the cursor and fold them into the timeline.
  async syncTimeline(): Promise<TimelineRow[]> {
    const { events } = await this.api.events(this.sid, this.lastSeq);
    if (events.length > 0) {
      this.rows.push(...reduceTimeline(events));
      this.lastSeq = events[events.length - 1]!.seq;
    }
    return this.rows;
  }

  async sendTurn(text: string): Promise<TurnView> {
    let result: TurnResult;
    try {
      result = await this.api.sendTurn(this.sid, text);
    } catch (err) {
      if (err instanceof ApiError) {
        const hint = typeof err.details.hint === "string" ? err.details.hint : undefined;
        return { kind: "error", code: err.code, message: err.message, hint };
      }
      throw err;
    }
    await this.syncTimeline();
    if (result.kind === "awaiting-approval") {
      return {
        kind: "awaiting-approval",
        planId: result.plan_id,
        steps: result.workflow.calls.map((c) => c.skill_id),
        estimate: result.estimate,
      };
    }
    return {
      kind: "executed",
      status: result.status,
      deviation: result.deviation,
      rows: [...traceStepRows(-1, result.trace), ...deviationRows(-1, result.deviation)],
    };
  }

  // Approve a pending plan (when one is pending) and render its execution
  // from the live event stream; resumes across reconnects without loss.
  async approveAndWatch(planId: string, opts: { timeoutMs?: number } = {}): Promise<WatchResult> {
    const state = await this.api.state(this.sid);
    const events: EventRecord[] = [];
    let done: (r: WatchResult) => void;
    let fail: (e: Error) => void;
    const finished = new Promise<WatchResult>((res, rej) => { done = res; fail = rej; });

    const stream = new EventStream(
      this.api.eventStreamUrl(this.sid, { after: this.lastSeq }),
      (msg) => {
        const ev = JSON.parse(msg.data) as EventRecord;
        events.push(ev);
        if (ev.kind !== "execution") return;
        const p = ev.payload as Record<string, any>;
        const trace = p.trace as TraceView;
        if (trace.workflow_id !== planId) return;
        stream.close();
        this.rows.push(...reduceTimeline(events));
        this.lastSeq = ev.seq;
        done({
          status: trace.status,
          rows: [...traceStepRows(ev.seq, trace), ...deviationRows(ev.seq, p.deviation as DeviationView)],
          deviation: p.deviation as DeviationView,
          events,
        });
      },
    );
    const running = stream.run();

    if (state.pending_plans.includes(planId)) {
      await this.api.approve(this.sid, planId, true);
    }

    const timeout = setTimeout(() => {
      stream.close();
      fail(new Error(`no execution event for plan ${planId}`));
    }, opts.timeoutMs ?? 15000);
    try {
      return await finished;
    } finally {
      clearTimeout(timeout);
      stream.close();
      await running;
    }
  }

  async sceneDiffView(base: string, target: string, scope?: PreserveScopeView): Promise<DiffRow[]> {
    const payload = await this.api.diff(this.sid, base, target);
    return renderDiff(payload.scene, scope);
  }

  // The preserve scope the server derived for the most recent turn, read
  // back from the event log (thin client: no local goal derivation).
  async lastPreserveScope(): Promise<PreserveScopeView | undefined> {
    const { events } = await this.api.events(this.sid);
    for (let i = events.length - 1; i >= 0; i -= 1) {
      const ev = events[i]!;
      if (ev.kind !== "turn") continue;
      const intent = (ev.payload as Record<string, any>).intent;
      const preserve = intent?.goal?.preserve as PreserveScopeView | undefined;
      return preserve;
    }
    return undefined;
  }

  planPreview(wf: WorkflowView, estimate: ObjectiveView): TimelineRow[] {
    return planRows(-1, wf, estimate);
  }
}
