import type { PreserveScopeView, ScenePayloadDiff } from "./types.js";

// Renders the server-computed scene diff.  The client adds no diffing of its
// own: every row corresponds 1:1 to an entry in the API payload, and the
// only local logic is matching paths against the preserve scope the server
// reported for the turn, to flag protected paths that were touched anyway.

export type DiffAnnotation = "added" | "removed" | "changed";

export interface DiffRow {
  path: string;
  annotation: DiffAnnotation;
  before?: string;
  after?: string;
  violation: boolean;
}

function globToRegExp(pattern: string): RegExp {
  const escaped = pattern.replace(/[.+^${}()|[\]\\]/g, "\\$&")
    .replace(/\*/g, ".*")
    .replace(/\?/g, ".");
  return new RegExp(`^${escaped}$`);
}

// Same pattern language as the service: globs match the whole path, plain
// patterns cover themselves and any sub-path.
export function pathMatches(pattern: string, path: string): boolean {
  if (pattern.includes("*") || pattern.includes("?")) {
    return globToRegExp(pattern).test(path);
  }
  return path === pattern
    || path.startsWith(`${pattern}.`)
    || path.startsWith(`${pattern}:`);
}

export function isProtected(scope: PreserveScopeView | undefined, path: string): boolean {
  if (!scope || scope.mode === "none") return false;
  const matched = scope.patterns.some((p) => pathMatches(p, path));
  return scope.mode === "explicit" ? matched : !matched;
}

export function renderDiff(diff: ScenePayloadDiff, scope?: PreserveScopeView): DiffRow[] {
  const rows: DiffRow[] = [];
  for (const e of diff.added) {
    // scope protects baseline paths; a path added by the edit has no
    // baseline value to preserve
    rows.push({ path: e.path, annotation: "added", after: e.value, violation: false });
  }
  for (const e of diff.removed) {
    rows.push({ path: e.path, annotation: "removed", before: e.value, violation: isProtected(scope, e.path) });
  }
  for (const e of diff.changed) {
    rows.push({ path: e.path, annotation: "changed", before: e.old, after: e.new, violation: isProtected(scope, e.path) });
  }
  return rows;
}

export function diffSummary(rows: DiffRow[]): string {
  if (rows.length === 0) return "no changes";
  const violations = rows.filter((r) => r.violation).length;
  return `${rows.length} changed path${rows.length === 1 ? "" : "s"}`
    + (violations ? `, ${violations} preservation violation${violations === 1 ? "" : "s"}` : "");
}
