/**
 * Controllable fetch stub for store tests: every request either gets an
 * immediate canned answer (auto responders) or parks in `pending` until
 * the test releases it — which is how response-ordering scenarios are
 * driven.
 */

import { vi } from "vitest";

export interface PendingCall {
  method: string;
  path: string;
  body: unknown;
  respond(body: unknown, status?: number): void;
}

export type AutoResponder = (body: unknown) => { body: unknown; status?: number };

function jsonResponse(body: unknown, status: number): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

export class FetchStub {
  log: string[] = [];
  pending: PendingCall[] = [];
  auto = new Map<string, AutoResponder>();

  install(): void {
    vi.stubGlobal("fetch", (url: unknown, init?: RequestInit) =>
      this.intercept(String(url), init),
    );
  }

  on(method: string, path: string, responder: AutoResponder): void {
    this.auto.set(`${method} ${path}`, responder);
  }

  /** Removes and returns the first pending call matching method+path. */
  take(method: string, path: string): PendingCall {
    const i = this.pending.findIndex(
      (c) => c.method === method && c.path === path,
    );
    if (i < 0) {
      throw new Error(
        `no pending ${method} ${path}; pending: ${this.pending
          .map((c) => `${c.method} ${c.path}`)
          .join(", ") || "(none)"}`,
      );
    }
    return this.pending.splice(i, 1)[0];
  }

  private intercept(path: string, init?: RequestInit): Promise<Response> {
    const method = init?.method ?? "GET";
    const body =
      init?.body === undefined ? undefined : JSON.parse(String(init.body));
    this.log.push(`${method} ${path}`);
    const responder = this.auto.get(`${method} ${path}`);
    if (responder !== undefined) {
      const r = responder(body);
      return Promise.resolve(jsonResponse(r.body, r.status ?? 200));
    }
    return new Promise((resolve) => {
      this.pending.push({
        method,
        path,
        body,
        respond: (b, status = 200) => resolve(jsonResponse(b, status)),
      });
    });
  }
}

/** Flushes queued microtasks and zero-delay timers. */
export function tick(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}
