import type {
  DeviationView, EventRecord, ObjectiveView, TraceView, WorkflowView,
} from "./types.js";

// One rendered line of the execution timeline.  Rows are pure projections of
// server payloads; the round-trip test compares rows built from the event
// stream against rows built from the trace endpoint.

export interface TimelineRow {
  seq: number;
  kind: "session" | "turn" | "plan" | "plan-step" | "approval" | "step"
      | "status" | "deviation" | "rollback";
  label: string;
  badge?: "ok" | "failed";
  marker?: string;
}

function short(hash: unknown): string {
  return String(hash ?? "").slice(0, 12);
}

export function objectiveLabel(o: ObjectiveView): string {
  return `J ${o.j} (human ${o.human}, time ${o.sys_time}, tokens ${o.sys_tokens}, `
    + `predicted deviation ${o.predicted_deviation})`;
}

export function deviationRows(seq: number, d: DeviationView): TimelineRow[] {
  const nonzero = Object.entries(d.terms)
    .filter(([, v]) => v !== 0)
    .map(([k, v]) => `${k} ${v}`)
    .join(", ");
  return [{
    seq, kind: "deviation",
    label: `deviation total ${d.total}${nonzero ? ` [${nonzero}]` : ""}`,
  }];
}

// Step rows carry skill, verdict badge, and recovery marker; the marker is
// exactly what the executor recorded, never inferred.
export function traceStepRows(seq: number, trace: TraceView): TimelineRow[] {
  const rows: TimelineRow[] = trace.steps.map((s) => ({
    seq,
    kind: "step",
    label: `step ${s.index} attempt ${s.attempt}: ${s.call.skill_id}`,
    badge: s.status === "ok" ? "ok" : "failed",
    marker: [s.rolled_back ? "rolled-back" : "", s.recovery]
      .filter(Boolean).join("; ") || undefined,
  }));
  rows.push({
    seq, kind: "status",
    label: trace.abort_reason
      ? `execution ${trace.status}: ${trace.abort_reason}`
      : `execution ${trace.status}`,
  });
  return rows;
}

export function planRows(seq: number, wf: WorkflowView, estimate: ObjectiveView): TimelineRow[] {
  const rows: TimelineRow[] = [{
    seq, kind: "plan",
    label: `plan ${short(wf.workflow_id)}: ${wf.calls.length} steps, ${objectiveLabel(estimate)}`,
  }];
  wf.calls.forEach((c, i) => {
    rows.push({ seq, kind: "plan-step", label: `  ${i + 1}. ${c.skill_id}` });
  });
  return rows;
}

export function reduceTimeline(events: EventRecord[]): TimelineRow[] {
  const rows: TimelineRow[] = [];
  for (const ev of events) {
    const p = ev.payload as Record<string, any>;
    switch (ev.kind) {
      case "session-created":
        rows.push({ seq: ev.seq, kind: "session", label: `session ${p.session_id} (seed ${p.seed})` });
        break;
      case "turn":
        rows.push({ seq: ev.seq, kind: "turn", label: `> ${p.text} [${p.intent?.intent_class ?? "?"}]` });
        break;
      case "plan":
        rows.push(...planRows(ev.seq, p.workflow as WorkflowView, p.estimate as ObjectiveView));
        break;
      case "approval":
        rows.push({
          seq: ev.seq, kind: "approval",
          label: `approval: ${p.approved ? "approved" : "rejected"} plan ${short(p.plan_id)} `
            + `(${p.human_units} human units)`,
        });
        break;
      case "execution":
        rows.push(...traceStepRows(ev.seq, p.trace as TraceView));
        rows.push(...deviationRows(ev.seq, p.deviation as DeviationView));
        break;
      case "rollback":
        rows.push({ seq: ev.seq, kind: "rollback", label: `rollback to ${short(p.snapshot_id)}` });
        break;
      default:
        rows.push({ seq: ev.seq, kind: "status", label: `${ev.kind}` });
    }
  }
  return rows;
}
