// Payload mirrors for the workflow service API.  The console is a thin
// client: every number it shows (objective, deviation terms, hashes) comes
// from one of these payloads verbatim, never from local recomputation.

export interface ObjectiveView {
  human: number;
  sys_time: number;
  sys_tokens: number;
  predicted_deviation: number;
  j: number;
}

export interface SkillCallView {
  skill_id: string;
  params: Record<string, unknown>;
  postconditions: Record<string, unknown>[];
}

export interface WorkflowView {
  workflow_id: string;
  intent_id: string;
  calls: SkillCallView[];
  objective: ObjectiveView;
  context_hash: string;
}

export interface VerdictView {
  ok: boolean;
  context_violations: Record<string, unknown>[];
  failed_postconditions: Record<string, unknown>[];
  error: string;
}

export interface StepRecordView {
  index: number;
  attempt: number;
  call: SkillCallView;
  binding: string;
  pre_snapshot: string;
  verdict: VerdictView;
  status: "ok" | "failed";
  rolled_back: boolean;
  recovery: string;
  details: Record<string, unknown>;
  cost: number[];
}

export interface TraceView {
  workflow_id: string;
  intent_id: string;
  status: string;
  steps: StepRecordView[];
  initial_snapshot: string;
  final_snapshot: string;
  repairs: number;
  substitutions: number;
  replans: number;
  abort_reason: string;
}

export interface DeviationView {
  terms: Record<string, number>;
  families: Record<string, number>;
  total: number;
}

export interface PreserveScopeView {
  mode: "none" | "all_except" | "explicit";
  patterns: string[];
}

export interface IntentView {
  intent_id: string;
  intent_class: string;
  parameters: Record<string, unknown>;
  grounded_refs: Record<string, unknown>;
  targets: string[];
  goal: { preserve: PreserveScopeView } & Record<string, unknown> | null;
}

export interface EventRecord {
  seq: number;
  kind: string;
  payload: Record<string, unknown>;
  pre_hash: string;
  post_hash: string;
  prev: string;
  chain: string;
}

// POST /sessions/{id}/turns and .../approve both answer with one of these.
export interface ExecutedResult {
  kind: "executed";
  plan_id: string;
  status: string;
  trace: TraceView;
  deviation: DeviationView;
  context_hash: string;
}

export interface AwaitingApprovalResult {
  kind: "awaiting-approval";
  plan_id: string;
  workflow: WorkflowView;
  estimate: ObjectiveView;
}

export interface RejectedResult {
  kind: "rejected";
  plan_id: string;
}

export type TurnResult = ExecutedResult | AwaitingApprovalResult;

export interface SessionState {
  session_id: string;
  context_hash: string;
  context: Record<string, unknown>;
  pending_plans: string[];
  attention_units: number;
  event_count: number;
}

export interface DiffEntry {
  path: string;
  value?: string;
  old?: string;
  new?: string;
}

export interface ScenePayloadDiff {
  added: DiffEntry[];
  removed: DiffEntry[];
  changed: DiffEntry[];
}

export interface DiffPayload {
  base: string;
  target: string;
  scene: ScenePayloadDiff;
}

export interface ApiErrorBody {
  code: string;
  message: string;
  details: Record<string, unknown>;
}
