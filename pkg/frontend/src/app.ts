import { ApiClient, ApiError } from "./api.js";
import { ConsoleSession, TurnView } from "./console.js";
import { DiffRow, diffSummary } from "./diff.js";
import { TimelineRow } from "./timeline.js";
import type { SessionState } from "./types.js";

// Browser shell: thin DOM wiring around ConsoleSession.  All state shown in
// the panels comes from GET /state and the event log; nothing is computed
// client-side beyond formatting.

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

const api = new ApiClient("");
let session: ConsoleSession | null = null;
let pendingPlan: string | null = null;

function rowElement(row: TimelineRow): HTMLElement {
  const li = document.createElement("li");
  li.className = `row row-${row.kind}${row.badge ? ` badge-${row.badge}` : ""}`;
  li.textContent = row.label
    + (row.badge ? ` [${row.badge}]` : "")
    + (row.marker ? ` (${row.marker})` : "");
  return li;
}

function renderTimeline(rows: TimelineRow[]): void {
  const list = $("timeline");
  list.replaceChildren(...rows.map(rowElement));
  list.scrollTop = list.scrollHeight;
}

function renderError(code: string, message: string, hint?: string): void {
  $("notice").textContent = hint ? `${code}: ${message}\n${hint}` : `${code}: ${message}`;
}

function clearNotice(): void {
  $("notice").textContent = "";
}

async function refreshState(): Promise<void> {
  if (!session) return;
  const state: SessionState = await api.state(session.sid);
  $("context-hash").textContent = state.context_hash.slice(0, 16);
  $("attention").textContent = String(state.attention_units);
  $("context-json").textContent = JSON.stringify(state.context, null, 2);

  const { snapshots } = await api.snapshots(session.sid);
  const pick = (id: string) => {
    const sel = $<HTMLSelectElement>(id);
    sel.replaceChildren(...snapshots.map((s) => {
      const opt = document.createElement("option");
      opt.value = s;
      opt.textContent = s.slice(0, 16);
      return opt;
    }));
  };
  pick("diff-base");
  pick("diff-target");
  const rollbackList = $("snapshot-list");
  rollbackList.replaceChildren(...snapshots.map((s) => {
    const li = document.createElement("li");
    const btn = document.createElement("button");
    btn.textContent = `rollback to ${s.slice(0, 12)}`;
    btn.onclick = () => void doRollback(s);
    li.append(btn);
    return li;
  }));
}

async function doRollback(snapshotId: string): Promise<void> {
  if (!session) return;
  try {
    await api.rollback(session.sid, snapshotId);
    await session.syncTimeline();
    renderTimeline(session.rows);
    await refreshState();
  } catch (err) {
    if (err instanceof ApiError) renderError(err.code, err.message);
    else throw err;
  }
}

function renderPlanCard(view: Extract<TurnView, { kind: "awaiting-approval" }>): void {
  pendingPlan = view.planId;
  $("plan-steps").textContent = view.steps.map((s, i) => `${i + 1}. ${s}`).join("\n");
  $("plan-estimate").textContent =
    `J ${view.estimate.j} | human ${view.estimate.human} | predicted deviation ${view.estimate.predicted_deviation}`;
  $("plan-card").classList.remove("hidden");
  $<HTMLInputElement>("turn-input").disabled = true;
}

function hidePlanCard(): void {
  pendingPlan = null;
  $("plan-card").classList.add("hidden");
  $<HTMLInputElement>("turn-input").disabled = false;
}

async function submitTurn(): Promise<void> {
  if (!session) return;
  const input = $<HTMLInputElement>("turn-input");
  const text = input.value.trim();
  if (!text) return;
  clearNotice();
  input.disabled = true;
  $("notice").textContent = "executing...";
  const view = await session.sendTurn(text);
  clearNotice();
  if (view.kind === "error") {
    renderError(view.code, view.message, view.hint);
    input.disabled = false;
    return;
  }
  if (view.kind === "awaiting-approval") {
    renderPlanCard(view);
    renderTimeline(session.rows);
    return;
  }
  input.value = "";
  input.disabled = false;
  renderTimeline(session.rows);
  await refreshState();
}

async function approvePending(): Promise<void> {
  if (!session || !pendingPlan) return;
  const plan = pendingPlan;
  hidePlanCard();
  const result = await session.approveAndWatch(plan);
  renderTimeline(session.rows);
  $("notice").textContent = `execution ${result.status}, deviation ${result.deviation.total}`;
  await refreshState();
}

async function discardPending(): Promise<void> {
  if (!session || !pendingPlan) return;
  await api.approve(session.sid, pendingPlan, false);
  hidePlanCard();
  await session.syncTimeline();
  renderTimeline(session.rows);
}

function renderDiffRows(rows: DiffRow[]): void {
  $("diff-summary").textContent = diffSummary(rows);
  const list = $("diff-rows");
  list.replaceChildren(...rows.map((r) => {
    const li = document.createElement("li");
    li.className = `diff-${r.annotation}${r.violation ? " violation" : ""}`;
    const delta = r.annotation === "changed"
      ? `${r.before} -> ${r.after}`
      : (r.annotation === "added" ? `+ ${r.after}` : `- ${r.before}`);
    li.textContent = `${r.annotation}${r.violation ? " !" : ""} ${r.path}: ${delta}`;
    return li;
  }));
}

async function showDiff(): Promise<void> {
  if (!session) return;
  const base = $<HTMLSelectElement>("diff-base").value;
  const target = $<HTMLSelectElement>("diff-target").value;
  try {
    const scope = await session.lastPreserveScope();
    renderDiffRows(await session.sceneDiffView(base, target, scope));
  } catch (err) {
    if (err instanceof ApiError) renderError(err.code, err.message);
    else throw err;
  }
}

async function openSession(): Promise<void> {
  const name = $<HTMLInputElement>("session-input").value.trim() || "default";
  try {
    await api.createSession(name);
  } catch (err) {
    // session-busy means it already exists; anything else is real
    if (!(err instanceof ApiError && err.code === "session-busy")) throw err;
  }
  session = new ConsoleSession(api, name);
  $("session-label").textContent = name;
  await session.syncTimeline();
  renderTimeline(session.rows);
  await refreshState();
}

export function wire(): void {
  $("session-open").onclick = () => void openSession();
  $("turn-send").onclick = () => void submitTurn();
  $<HTMLInputElement>("turn-input").addEventListener("keydown", (ev) => {
    if (ev.key === "Enter") void submitTurn();
  });
  $("plan-approve").onclick = () => void approvePending();
  $("plan-discard").onclick = () => void discardPending();
  $("diff-show").onclick = () => void showDiff();
}

if (typeof document !== "undefined" && document.readyState !== "loading") {
  wire();
} else if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", wire);
}
