/**
 * SpookClient
 *
 * Typed client for the spook session service.  Every method is a thin
 * wrapper over one HTTP endpoint; the client never post-processes
 * probabilities — callers render response payloads as received.
 *
 * Base URL resolution: `globalThis.SPOOK_API_BASE` when set (the test
 * harness and the static page both use it), otherwise same-origin.
 */

// ============================================================
// Request/Response Types
// ============================================================

export interface LoadKbRequest {
  source: string;
  name?: string;
}

export interface LoadKbResponse {
  id: string;
  classes: number;
  instances: number;
}

export interface GraphNode {
  name: string;
  kind: "class" | "instance";
  extends?: string | null;
  class?: string;
}

export interface GraphEdge {
  from: string;
  to: string;
  kind: "extends" | "instance-of" | "complex" | "binding";
  attribute?: string;
  multi?: boolean;
  bound?: number | null;
  inverse?: string | null;
}

export interface GraphResponse {
  nodes: GraphNode[];
  edges: GraphEdge[];
}

export interface ResolveResponse {
  instance: string;
  chain: string;
  kind: string;
  values: string[];
}

export interface CreateSessionResponse {
  id: string;
  kb: string;
  backend: string;
}

export interface EvidenceItem {
  instance: string;
  chain: string;
  value: string;
}

export interface EvidenceResponse {
  evidence: EvidenceItem[];
}

export interface RetractResponse extends EvidenceResponse {
  retracted: EvidenceItem;
}

export interface QueryResponse {
  query: string;
  posterior: Record<string, number>;
  seconds: number;
  backend: string;
  stats: Record<string, number | string>;
}

export interface HistoryResponse {
  entries: { query: string; posterior: Record<string, number>; seconds: number }[];
}

/** Error body the service attaches to every 4xx. */
export interface ServiceErrorBody {
  code: string;
  message: string;
  location?: { source: string; line: number; column: number };
}

export class ServiceError extends Error {
  constructor(
    public status: number,
    public body: ServiceErrorBody,
  ) {
    super(body.message);
    this.name = "ServiceError";
  }
}

// ============================================================
// Client
// ============================================================

function defaultBase(): string {
  const override = (globalThis as { SPOOK_API_BASE?: string }).SPOOK_API_BASE;
  return override ?? "";
}

async function decode<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let body: ServiceErrorBody;
    try {
      body = (await resp.json()) as ServiceErrorBody;
    } catch {
      body = { code: "http-error", message: `${resp.status} ${resp.statusText}` };
    }
    throw new ServiceError(resp.status, body);
  }
  return (await resp.json()) as T;
}

export class SpookClient {
  constructor(private baseUrl: string = defaultBase()) {}

  private async json<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const resp = await fetch(this.baseUrl + path, {
      method,
      headers: body === undefined ? undefined : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    return decode<T>(resp);
  }

  loadKb(source: string, name?: string): Promise<LoadKbResponse> {
    return this.json("POST", "/kb", { source, name });
  }

  graph(kbId: string): Promise<GraphResponse> {
    return this.json("GET", `/kb/${encodeURIComponent(kbId)}/graph`);
  }

  /** Value domain of an (instance, chain) pair, straight from the model layer. */
  resolve(kbId: string, instance: string, chain: string): Promise<ResolveResponse> {
    const q = new URLSearchParams({ instance, chain });
    return this.json("GET", `/kb/${encodeURIComponent(kbId)}/resolve?${q}`);
  }

  createSession(kb: string, backend = "structured"): Promise<CreateSessionResponse> {
    return this.json("POST", "/session", { kb, backend });
  }

  evidence(sessionId: string): Promise<EvidenceResponse> {
    return this.json("GET", `/session/${encodeURIComponent(sessionId)}/evidence`);
  }

  observe(sessionId: string, item: EvidenceItem): Promise<EvidenceResponse> {
    return this.json("POST", `/session/${encodeURIComponent(sessionId)}/observe`, item);
  }

  retract(
    sessionId: string,
    instance: string,
    chain: string,
  ): Promise<RetractResponse> {
    return this.json("DELETE", `/session/${encodeURIComponent(sessionId)}/observe`, {
      instance,
      chain,
    });
  }

  query(sessionId: string, target: string): Promise<QueryResponse> {
    return this.json("POST", `/session/${encodeURIComponent(sessionId)}/query`, {
      target,
    });
  }

  history(sessionId: string): Promise<HistoryResponse> {
    return this.json("GET", `/session/${encodeURIComponent(sessionId)}/history`);
  }
}
