/**
 * End-to-end round trip against a real service process:
 * load fixture → watch → observe → (contradiction) → retract, asserting
 * at every step that what the views render is byte-for-byte the
 * service's own payloads (posteriors from its history, evidence from
 * GET /session/{id}/evidence) — the UI adds formatting, never numbers.
 */

import { spawn, type ChildProcess } from "node:child_process";
import { readFileSync } from "node:fs";
import { resolve } from "node:path";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ServiceError, SpookClient } from "../src/api.js";
import { EvidencePanel } from "../src/evidencePanel.js";
import { renderGraphError, renderModelGraph } from "../src/graphView.js";
import { SessionStore } from "../src/state.js";
import { renderPosteriorBars, renderTimeline } from "../src/watchView.js";

// vitest runs with cwd = frontend/; the fixture is the same text a user
// would paste into the page, sourced from the engine package next door
const FIXTURE = readFileSync(
  resolve(process.cwd(), "../src/spook/fixtures/battalion.spook"),
  "utf8",
);

let proc: ChildProcess;
let base: string;
let client: SpookClient;
let store: SessionStore;
let kbId: string;
let sid: string;

async function startService(): Promise<void> {
  const port = 8700 + Math.floor(Math.random() * 800);
  base = `http://127.0.0.1:${port}`;
  proc = spawn("spook", ["serve", "--port", String(port)], {
    stdio: ["ignore", "ignore", "pipe"],
  });
  let stderr = "";
  proc.stderr!.on("data", (chunk: Buffer) => (stderr += chunk.toString()));
  const deadline = Date.now() + 45_000;
  for (;;) {
    try {
      const r = await fetch(`${base}/openapi.json`);
      if (r.ok) return;
    } catch {
      /* not listening yet */
    }
    if (proc.exitCode !== null || Date.now() > deadline) {
      throw new Error(`service failed to start: ${stderr}`);
    }
    await new Promise((r) => setTimeout(r, 250));
  }
}

beforeAll(async () => {
  await startService();
  client = new SpookClient(base);
  store = new SessionStore(client);
}, 60_000);

afterAll(() => {
  proc?.kill();
});

function el(): HTMLElement {
  const node = document.createElement("div");
  document.body.appendChild(node);
  return node;
}

async function waitFor(cond: () => boolean, timeoutMs = 10_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (!cond()) {
    if (Date.now() > deadline) throw new Error("condition never became true");
    await new Promise((r) => setTimeout(r, 20));
  }
}

const graphBox = () => document.getElementById("graph")!;
const barsBox = () => document.getElementById("bars")!;

/** Rendered bars for `target` must equal `posterior` exactly. */
function expectBarsEqual(target: string, posterior: Record<string, number>): void {
  const section = barsBox().querySelector(`[data-target="${target}"]`)!;
  expect(section).not.toBeNull();
  const rows = [...section.querySelectorAll(".bar-row")];
  expect(rows.map((r) => r.getAttribute("data-value"))).toEqual(Object.keys(posterior));
  for (const [value, p] of Object.entries(posterior)) {
    const row = rows.find((r) => r.getAttribute("data-value") === value)!;
    expect(row.getAttribute("data-p")).toBe(String(p));
    expect(row.querySelector(".prob")!.textContent).toBe(p.toFixed(4));
  }
}

/** The service's own record of the last posterior it computed for `target`. */
async function serverPosterior(target: string): Promise<Record<string, number>> {
  const hist = await client.history(sid);
  const mine = hist.entries.filter((e) => e.query.startsWith(`P(${target}`));
  expect(mine.length).toBeGreaterThan(0);
  return mine[mine.length - 1].posterior;
}

/** Chips must equal what GET /session/{id}/evidence returns right now. */
async function expectChipsMirrorServer(panelRoot: HTMLElement): Promise<void> {
  const server = (await client.evidence(sid)).evidence;
  const chips = [...panelRoot.querySelectorAll(".chip")].map((c) => ({
    instance: c.getAttribute("data-instance"),
    chain: c.getAttribute("data-chain"),
    value: c.getAttribute("data-value"),
  }));
  expect(chips).toEqual(server);
}

function rerenderBars(): void {
  const s = store.getState();
  renderPosteriorBars(barsBox(), s.watched, s.posteriors);
}

describe("scripted session against a live service", () => {
  let panel: EvidencePanel;
  let panelRoot: HTMLElement;

  it("loads the fixture and renders its graph document", async () => {
    const kb = await client.loadKb(FIXTURE, "battalion");
    kbId = kb.id;
    expect(kb.classes).toBe(4);
    expect(kb.instances).toBe(3);

    const box = el();
    box.id = "graph";
    renderModelGraph(box, await client.graph(kbId));
    const rows = [...box.querySelectorAll("li.edge.complex")];
    const hasBattery = rows.find((r) => r.textContent!.includes("has-battery→"))!;
    expect(hasBattery.getAttribute("data-from")).toBe("Battalion");
    expect(hasBattery.querySelector(".badge.inverse")!.textContent).toContain("in-battalion");
    const inBattalion = rows.find(
      (r) => r.textContent!.includes("in-battalion→") && r.getAttribute("data-from") === "Battery",
    )!;
    expect(inBattalion.querySelector(".badge.inverse")!.textContent).toContain("has-battery");
  });

  it("starts a session whose evidence list is the server's (empty)", async () => {
    await store.start(kbId);
    sid = store.getState().sessionId!;
    panelRoot = el();
    panel = new EvidencePanel(panelRoot, client, store, kbId, [
      "battalion-charlie",
      "battery-a",
      "env-1",
    ]);
    el().id = "bars";
    await expectChipsMirrorServer(panelRoot);
  });

  it("watching with no evidence renders the server's prior", async () => {
    await store.watch("battery-a.hit");
    await store.watch("battalion-charlie.under-fire");
    rerenderBars();
    expectBarsEqual("battery-a.hit", await serverPosterior("battery-a.hit"));
    expectBarsEqual(
      "battalion-charlie.under-fire",
      await serverPosterior("battalion-charlie.under-fire"),
    );
  });

  it("observing through the panel updates chips and bars from server payloads", async () => {
    const instanceSel = panelRoot.querySelector<HTMLSelectElement>("select[name=instance]")!;
    const chainInput = panelRoot.querySelector<HTMLInputElement>("input[name=chain]")!;
    const valueSel = panelRoot.querySelector<HTMLSelectElement>("select[name=value]")!;

    instanceSel.value = "battalion-charlie";
    chainInput.value = "under-fire";
    await panel.refreshDomain();
    // the value list is the server-resolved domain, not free text
    expect([...valueSel.options].map((o) => o.value)).toEqual(["none", "light", "heavy"]);

    const before = store.getState().posteriors["battery-a.hit"].posterior.yes;
    valueSel.value = "heavy";
    await panel.submit();

    await expectChipsMirrorServer(panelRoot);
    rerenderBars();
    const hit = await serverPosterior("battery-a.hit");
    expectBarsEqual("battery-a.hit", hit);
    expectBarsEqual(
      "battalion-charlie.under-fire",
      await serverPosterior("battalion-charlie.under-fire"),
    );
    // suppression-fire evidence raises P(hit): direction cross-check only
    expect(hit.yes).toBeGreaterThan(before);
  });

  it("a contradictory submit shows inline and changes nothing", async () => {
    const valueSel = panelRoot.querySelector<HTMLSelectElement>("select[name=value]")!;
    const chipsBefore = [...panelRoot.querySelectorAll(".chip")].map((c) => c.outerHTML);
    const postBefore = store.getState().posteriors["battery-a.hit"];

    valueSel.value = "none";
    await panel.submit();

    const error = panelRoot.querySelector<HTMLElement>(".inline-error")!;
    expect(error.hidden).toBe(false);
    expect(error.textContent).toContain("contradictory-evidence");
    expect(error.textContent).toContain("retract");
    expect([...panelRoot.querySelectorAll(".chip")].map((c) => c.outerHTML)).toEqual(chipsBefore);
    expect(store.getState().posteriors["battery-a.hit"]).toBe(postBefore);
    await expectChipsMirrorServer(panelRoot);
  });

  it("retracting via the chip reverts the posterior to the server's prior", async () => {
    const priorShown = (await serverPosterior("battery-a.hit")).yes;
    panelRoot.querySelector<HTMLButtonElement>(".chip button.retract")!.click();
    // the click handler runs async store work; the retract's timeline step
    // is pushed only after every watched target has been re-queried
    await waitFor(() =>
      store.getState().timeline.some((s) => s.delta === "- battalion-charlie.under-fire"),
    );

    await expectChipsMirrorServer(panelRoot);
    rerenderBars();
    const reverted = await serverPosterior("battery-a.hit");
    expectBarsEqual("battery-a.hit", reverted);
    expect(reverted.yes).toBeLessThan(priorShown);
    // same engine, same evidence set: the revert reproduces the prior
    const first = store.getState().timeline[0].posteriors["battery-a.hit"].yes;
    expect(reverted.yes).toBeCloseTo(first, 9);
  });

  it("keeps a timeline of (evidence delta, posterior) steps", async () => {
    const box = el();
    renderTimeline(box, store.getState().timeline);
    const deltas = [...box.querySelectorAll(".step .delta")].map((d) => d.textContent);
    expect(deltas).toEqual([
      "watch battery-a.hit",
      "watch battalion-charlie.under-fire",
      "+ battalion-charlie.under-fire = heavy",
      "- battalion-charlie.under-fire",
    ]);
    // the final step's cells are the live payload values
    const last = [...box.querySelectorAll(".step")].at(-1)!;
    const hitCells = last.querySelector('[data-target="battery-a.hit"]')!;
    const server = await serverPosterior("battery-a.hit");
    for (const [value, p] of Object.entries(server)) {
      const cell = [...hitCells.querySelectorAll(".cell")].find(
        (c) => c.getAttribute("data-value") === value,
      )!;
      expect(cell.getAttribute("data-p")).toBe(String(p));
    }
  });

  it("renders an empty state for an empty KB and a banner for a stale id", async () => {
    const empty = await client.loadKb("# intentionally empty\n", "empty");
    const box = el();
    renderModelGraph(box, await client.graph(empty.id));
    expect(box.querySelector(".empty")).not.toBeNull();

    try {
      await client.graph("kb-stale");
      expect.unreachable("stale kb id must 404");
    } catch (err) {
      expect(err).toBeInstanceOf(ServiceError);
      const se = err as ServiceError;
      expect(se.status).toBe(404);
      renderGraphError(box, se.body);
      expect(box.querySelector(".error-banner")!.textContent).toContain("unknown-kb");
    }
  });
});
