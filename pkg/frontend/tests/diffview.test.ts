import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { ApiClient, ApiError } from "../src/api.js";
import { ConsoleSession } from "../src/console.js";
import { diffSummary } from "../src/diff.js";
import type { DiffPayload } from "../src/types.js";
import { TestServer, startServer } from "./server.js";

// Diff fidelity against a live service: the rendered scene diff must
// highlight exactly the paths the server reports as changed, and flag
// preservation violations only for paths the turn's scope protected.

const PORT = 8932;
const SID = "diffs";

let server: TestServer;
let api: ApiClient;
let cs: ConsoleSession;
let hCreate: string;
let hLight: string;
let hRemove: string;

const payloadPaths = (p: DiffPayload) =>
  [...p.scene.added, ...p.scene.removed, ...p.scene.changed].map((e) => e.path).sort();

async function executedHash(text: string): Promise<string> {
  const view = await cs.sendTurn(text);
  if (view.kind !== "executed") {
    throw new Error(`turn did not execute: ${JSON.stringify(view)}`);
  }
  return (await api.state(SID)).context_hash;
}

beforeAll(async () => {
  server = await startServer(PORT);
  api = new ApiClient(server.baseUrl);
  await api.createSession(SID);
  cs = new ConsoleSession(api, SID);
  hCreate = await executedHash(
    "CREATE scene: WITH table, mug ON table, bottle ON table, ROBOT = franka",
  );
  hLight = await executedHash(
    "EDIT scene: SET lighting.intensity = 0.8 PRESERVE all EXCEPT lighting",
  );
  hRemove = await executedHash("EDIT scene: REMOVE bottle PRESERVE ALL");
});

afterAll(async () => {
  await server.stop();
});

describe("scene diff view", () => {
  it("uses context hashes as snapshot ids", async () => {
    const { snapshots } = await api.snapshots(SID);
    for (const h of [hCreate, hLight, hRemove]) {
      expect(snapshots).toContain(h);
    }
  });

  it("highlights exactly the server-reported paths for an in-scope edit", async () => {
    const scope = { mode: "all_except" as const, patterns: ["lighting"] };
    const payload = await api.diff(SID, hCreate, hLight);
    const rows = await cs.sceneDiffView(hCreate, hLight, scope);

    expect(rows.map((r) => r.path).sort()).toEqual(payloadPaths(payload));
    expect(payloadPaths(payload)).toEqual(["lighting.intensity"]);
    expect(rows[0]!.annotation).toBe("changed");
    expect(rows[0]!.after).toBe("0.8");
    // the edit stayed inside its scope: nothing is flagged
    expect(rows.every((r) => !r.violation)).toBe(true);
  });

  it("flags every protected path an out-of-scope edit touched", async () => {
    const scope = { mode: "all_except" as const, patterns: [] };
    const payload = await api.diff(SID, hLight, hRemove);
    const rows = await cs.sceneDiffView(hLight, hRemove, scope);

    // row set mirrors the server payload exactly
    expect(rows.map((r) => r.path).sort()).toEqual(payloadPaths(payload));
    expect(rows.length).toBeGreaterThan(0);

    const removedEntity = rows.find((r) => r.path === "entities.bottle_1");
    expect(removedEntity).toBeDefined();
    expect(removedEntity!.annotation).toBe("removed");

    // preserve-all protects every baseline path, so each touched row is a
    // violation
    expect(rows.every((r) => r.violation)).toBe(true);
  });

  it("derives the scope of the latest turn from the event log", async () => {
    // grounding carves the edit's own footprint out of PRESERVE ALL so the
    // goal stays self-consistent; the client reads that scope verbatim
    const scope = await cs.lastPreserveScope();
    expect(scope).toBeDefined();
    expect(scope!.mode).toBe("all_except");
    expect(scope!.patterns).toContain("entities.bottle_1");
  });

  it("shows no violations under the turn's own grounded scope", async () => {
    // same diff, two scopes: under the scope the server derived for the
    // REMOVE turn the view is clean, matching the preservation term the
    // server measured for every execution (zero)
    const scope = await cs.lastPreserveScope();
    const rows = await cs.sceneDiffView(hLight, hRemove, scope);
    expect(rows.length).toBeGreaterThan(0);
    expect(rows.every((r) => !r.violation)).toBe(true);

    const { events } = await api.events(SID);
    const executions = events.filter((e) => e.kind === "execution");
    expect(executions).toHaveLength(3);
    for (const e of executions) {
      const terms = (e.payload as Record<string, any>).deviation.terms as Record<string, number>;
      expect(terms.preserve ?? 0).toBe(0);
    }
  });

  it("renders identical snapshots as an empty diff", async () => {
    const rows = await cs.sceneDiffView(hLight, hLight);
    expect(rows).toEqual([]);
    expect(diffSummary(rows)).toBe("no changes");
  });

  it("surfaces unknown snapshot ids as structured errors", async () => {
    const err = await api.diff(SID, "0".repeat(64), hLight).catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).code).toBe("unknown-snapshot");
  });
});
