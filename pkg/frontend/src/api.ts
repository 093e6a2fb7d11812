/**
 * Typed client over the supervisor gateway HTTP contract.
 *
 * Read endpoints return snapshots; decide() is the only write and throws
 * GatewayError carrying the verbatim status + detail so the UI can surface
 * 403/409 exactly as received. streamEvents() consumes the line-delimited
 * event stream and feeds parsed events to a callback until the connection
 * drops or the run ends.
 */

export interface RunState {
  run_id: string;
  scenario: string;
  current_tick: number;
  mode: "Headless" | "Interactive";
  status: "Running" | "AwaitingDecision" | "Finished" | "Halted";
}

export interface SignalRow {
  tick: number;
  d_f: number | null;
  a_p: number | null;
  c_b: number | null;
  e_c: number | null;
  r_t: number | null;
  dr_dt: number | null;
  fnr_gap: number | null;
  breached_flags: string;
}

export interface InterventionDelta {
  d_tau_u: number;
  human_review_rate: number;
  rate_limit: number;
  friction_level: number;
  rollback_to: number | null;
  constraint_revision: string[];
  retrain: boolean;
}

export interface Proposal {
  id: string;
  created_tick: number;
  breach_signals: string[];
  delta_u: InterventionDelta;
  predicted_signals: Record<string, number>;
  cost: number;
  status: "Pending" | "AutoApplied" | "Approved" | "Denied" | "Expired";
  required_authority: string;
  deadline_tick: number | null;
  infeasible: boolean;
  decided_tick: number | null;
  decided_by: string | null;
  applied_tick: number | null;
}

export interface ScorecardRow {
  constraint_id: string;
  value: string;
  signal: string;
  direction: "upper" | "lower";
  threshold: number;
  observed: number | null;
  status: "pass" | "fail" | "insufficient";
}

export interface GatewayEvent {
  event: string;
  [key: string]: unknown;
}

export class GatewayError extends Error {
  constructor(public readonly status: number, public readonly detail: string) {
    super(`${status}: ${detail}`);
    this.name = "GatewayError";
  }
}

async function asJson<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = (await response.json()) as { detail?: unknown };
      if (body.detail !== undefined) detail = typeof body.detail === "string"
        ? body.detail : JSON.stringify(body.detail);
    } catch {
      // non-JSON error body; keep statusText
    }
    throw new GatewayError(response.status, detail);
  }
  return (await response.json()) as T;
}

export class ApiClient {
  constructor(private readonly base: string) {}

  private url(path: string): string {
    return this.base.replace(/\/$/, "") + path;
  }

  state(): Promise<RunState> {
    return fetch(this.url("/state")).then((r) => asJson<RunState>(r));
  }

  signals(fromTick = 0): Promise<SignalRow[]> {
    return fetch(this.url(`/signals?from_tick=${fromTick}`))
      .then((r) => asJson<SignalRow[]>(r));
  }

  scorecard(): Promise<ScorecardRow[]> {
    return fetch(this.url("/scorecard")).then((r) => asJson<ScorecardRow[]>(r));
  }

  proposals(): Promise<{ pending: Proposal[]; history: Proposal[] }> {
    return fetch(this.url("/proposals"))
      .then((r) => asJson<{ pending: Proposal[]; history: Proposal[] }>(r));
  }

  logHead(): Promise<{ seq: number; hash: string | null }> {
    return fetch(this.url("/log/head"))
      .then((r) => asJson<{ seq: number; hash: string | null }>(r));
  }

  async decide(proposalId: string, decision: "approve" | "deny",
               actorRole: string, actorId: string): Promise<{ proposal: Proposal }> {
    const response = await fetch(this.url(`/proposals/${proposalId}/decision`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ decision, actor_role: actorRole, actor_id: actorId }),
    });
    return asJson<{ proposal: Proposal }>(response);
  }

  /**
   * Stream events until the server closes or `signal` aborts. Resolves on
   * clean close; rejects on network failure so the caller can reconnect.
   */
  async streamEvents(onEvent: (event: GatewayEvent) => void,
                     signal?: AbortSignal): Promise<void> {
    const response = await fetch(this.url("/events"), { signal });
    if (!response.ok || response.body === null) {
      throw new GatewayError(response.status, "event stream unavailable");
    }
    const reader = response.body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    for (;;) {
      const { done, value } = await reader.read();
      if (done) break;
      buffer += decoder.decode(value, { stream: true });
      let index;
      while ((index = buffer.indexOf("\n")) >= 0) {
        const line = buffer.slice(0, index).trim();
        buffer = buffer.slice(index + 1);
        if (!line) continue; // keep-alive
        try {
          onEvent(JSON.parse(line) as GatewayEvent);
        } catch {
          // tolerate a torn line; resync covers any gap
        }
      }
    }
  }
}
