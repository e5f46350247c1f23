/**
 * Page bootstrap
 *
 * Wires the client, store and views into the static page: paste KB text
 * and load it, browse the graph, start a session, observe/retract, and
 * watch targets.  All logic that tests exercise lives in the imported
 * modules; this file is DOM plumbing only.
 */

import { ServiceError, SpookClient } from "./api.js";
import { EvidencePanel } from "./evidencePanel.js";
import { renderGraphError, renderModelGraph } from "./graphView.js";
import { SessionStore } from "./state.js";
import { renderPosteriorBars, renderTimeline } from "./watchView.js";

function must<T extends HTMLElement>(sel: string): T {
  const el = document.querySelector<T>(sel);
  if (el === null) throw new Error(`missing element ${sel}`);
  return el;
}

function showStatus(text: string, isError = false): void {
  const box = must<HTMLElement>("#status");
  box.textContent = text;
  box.classList.toggle("error", isError);
}

async function boot(): Promise<void> {
  const client = new SpookClient();
  const store = new SessionStore(client);
  let panel: EvidencePanel | null = null;

  const graphBox = must<HTMLElement>("#graph");
  const barsBox = must<HTMLElement>("#bars");
  const timelineBox = must<HTMLElement>("#timeline");

  store.subscribe((s) => {
    renderPosteriorBars(barsBox, s.watched, s.posteriors);
    renderTimeline(timelineBox, s.timeline);
  });

  must<HTMLButtonElement>("#load").addEventListener("click", async () => {
    const source = must<HTMLTextAreaElement>("#kb-source").value;
    try {
      const kb = await client.loadKb(source);
      showStatus(`loaded ${kb.id}: ${kb.classes} classes, ${kb.instances} instances`);
      const graph = await client.graph(kb.id);
      renderModelGraph(graphBox, graph);
      await store.start(kb.id);
      panel?.dispose();
      panel = new EvidencePanel(
        must<HTMLElement>("#evidence"),
        client,
        store,
        kb.id,
        graph.nodes.filter((n) => n.kind === "instance").map((n) => n.name),
      );
    } catch (err) {
      if (err instanceof ServiceError) {
        renderGraphError(graphBox, err.body);
        showStatus(err.body.message, true);
      } else {
        showStatus(String(err), true);
      }
    }
  });

  must<HTMLButtonElement>("#watch").addEventListener("click", async () => {
    const target = must<HTMLInputElement>("#watch-target").value.trim();
    if (target === "") return;
    try {
      await store.watch(target);
      showStatus(`watching ${target}`);
    } catch (err) {
      showStatus(
        err instanceof ServiceError ? `${err.body.code}: ${err.body.message}` : String(err),
        true,
      );
    }
  });
}

if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", () => void boot());
}
