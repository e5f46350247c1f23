/**
 * Session store
 *
 * Holds the UI's picture of one service session.  The picture is only
 * ever updated from acknowledged server responses — there are no
 * optimistic updates: after an observe/retract is acknowledged the store
 * re-fetches the evidence list with GET /session/{id}/evidence, so what
 * the chips render is by construction what the server holds.
 *
 * Concurrency rules:
 *  - at most one mutation (observe/retract) in flight per session;
 *    a second one throws MutationInFlight before touching the network;
 *  - queries may overlap freely, but their responses are applied in
 *    request order (a slow early response never overwrites a later one,
 *    and a fast late response waits for its predecessors).
 */

import {
  EvidenceItem,
  QueryResponse,
  ServiceErrorBody,
  SpookClient,
} from "./api.js";

export class MutationInFlight extends Error {
  constructor() {
    super("another observation change is still in flight");
    this.name = "MutationInFlight";
  }
}

/** One step of the session's history timeline: which evidence change
 * happened, and what every watched target's posterior was afterwards. */
export interface TimelineStep {
  delta: string;
  posteriors: Record<string, Record<string, number>>;
}

export interface UiSessionState {
  sessionId: string | null;
  kbId: string | null;
  backend: string | null;
  /** Evidence exactly as last fetched from the server, in entry order. */
  evidence: EvidenceItem[];
  /** Last acknowledged query response per watched target. */
  posteriors: Record<string, QueryResponse>;
  /** True while an observe/retract (and its evidence re-fetch) runs. */
  pendingMutation: boolean;
  watched: string[];
  timeline: TimelineStep[];
}

function freshState(): UiSessionState {
  return {
    sessionId: null,
    kbId: null,
    backend: null,
    evidence: [],
    posteriors: {},
    pendingMutation: false,
    watched: [],
    timeline: [],
  };
}

export type Listener = (state: UiSessionState) => void;

export class SessionStore {
  private state: UiSessionState = freshState();
  private listeners: Listener[] = [];
  // tail of the response-application chain; each query's apply step
  // awaits the tail captured at its own request time
  private applyTail: Promise<void> = Promise.resolve();

  constructor(private client: SpookClient) {}

  getState(): UiSessionState {
    return this.state;
  }

  subscribe(fn: Listener): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== fn);
    };
  }

  private notify(): void {
    for (const fn of this.listeners) fn(this.state);
  }

  private set(patch: Partial<UiSessionState>): void {
    this.state = { ...this.state, ...patch };
    this.notify();
  }

  private sessionId(): string {
    if (this.state.sessionId === null) throw new Error("no session started");
    return this.state.sessionId;
  }

  async start(kbId: string, backend = "structured"): Promise<void> {
    const sess = await this.client.createSession(kbId, backend);
    const ev = await this.client.evidence(sess.id);
    this.set({
      ...freshState(),
      sessionId: sess.id,
      kbId: sess.kb,
      backend: sess.backend,
      evidence: ev.evidence,
    });
  }

  // ------------------------------------------------------------
  // Mutations: observe / retract
  // ------------------------------------------------------------

  private async mutate(delta: string, send: () => Promise<unknown>): Promise<void> {
    if (this.state.pendingMutation) throw new MutationInFlight();
    const sid = this.sessionId();
    this.set({ pendingMutation: true });
    try {
      await send();
      // the mutation responses echo the evidence list, but the chips
      // contract is "what a GET returns", so ask again
      const ev = await this.client.evidence(sid);
      this.set({ evidence: ev.evidence });
    } finally {
      this.set({ pendingMutation: false });
    }
    await this.refreshWatched(delta);
  }

  observe(item: EvidenceItem): Promise<void> {
    return this.mutate(`+ ${item.instance}.${item.chain} = ${item.value}`, () =>
      this.client.observe(this.sessionId(), item),
    );
  }

  retract(instance: string, chain: string): Promise<void> {
    return this.mutate(`- ${instance}.${chain}`, () =>
      this.client.retract(this.sessionId(), instance, chain),
    );
  }

  // ------------------------------------------------------------
  // Queries: watch targets, ordered response application
  // ------------------------------------------------------------

  /** Runs one query and applies its response in request order. */
  private queryTarget(target: string): Promise<void> {
    const sid = this.sessionId();
    const prev = this.applyTail;
    let release!: () => void;
    this.applyTail = new Promise<void>((r) => (release = r));
    return this.client.query(sid, target).then(
      async (resp) => {
        await prev;
        this.set({ posteriors: { ...this.state.posteriors, [target]: resp } });
        release();
      },
      async (err) => {
        await prev;
        release(); // failed requests release the chain without applying
        throw err;
      },
    );
  }

  /** Adds a target to the watch list and fetches its current posterior. */
  async watch(target: string): Promise<void> {
    if (!this.state.watched.includes(target)) {
      this.set({ watched: [...this.state.watched, target] });
    }
    await this.queryTarget(target);
    this.pushTimeline(`watch ${target}`);
  }

  /** Re-queries every watched target after an evidence change. */
  private async refreshWatched(delta: string): Promise<void> {
    await Promise.all(this.state.watched.map((t) => this.queryTarget(t)));
    if (this.state.watched.length > 0) this.pushTimeline(delta);
  }

  private pushTimeline(delta: string): void {
    const posteriors: Record<string, Record<string, number>> = {};
    for (const t of this.state.watched) {
      const resp = this.state.posteriors[t];
      if (resp !== undefined) posteriors[t] = resp.posterior;
    }
    this.set({ timeline: [...this.state.timeline, { delta, posteriors }] });
  }
}

export type { EvidenceItem, QueryResponse, ServiceErrorBody };
