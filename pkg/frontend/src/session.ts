/**
 * Console session state: live signal buffers, pending proposals, decision
 * history. Holds no authoritative state — everything here is rebuilt from
 * gateway reads by resync(), and event handling only mirrors what the
 * gateway already decided (no optimistic transitions).
 */

import {
  ApiClient,
  GatewayEvent,
  Proposal,
  RunState,
  ScorecardRow,
  SignalRow,
} from "./api.js";

export const ROLES = [
  "GovernanceBoard",
  "StakeholderCouncil",
  "ComplianceOfficer",
  "RedressOfficer",
  "SrsEngineer",
] as const;

export type Role = (typeof ROLES)[number];

export const CHART_SIGNALS = ["d_f", "a_p", "c_b", "e_c", "r_t"] as const;
export type ChartSignal = (typeof CHART_SIGNALS)[number];

export interface SignalBuffer {
  ticks: number[];
  values: (number | null)[];
  breachTicks: Set<number>;
}

export interface DecisionRecord {
  proposalId: string;
  decision: string;
  status: string;
}

function emptyBuffers(): Map<ChartSignal, SignalBuffer> {
  const m = new Map<ChartSignal, SignalBuffer>();
  for (const s of CHART_SIGNALS) {
    m.set(s, { ticks: [], values: [], breachTicks: new Set() });
  }
  return m;
}

export class ConsoleSession {
  role: Role = "GovernanceBoard";
  actorId = "console-operator";
  state: RunState | null = null;
  buffers = emptyBuffers();
  pending: Proposal[] = [];
  history: Proposal[] = [];
  scorecard: ScorecardRow[] = [];
  decisions: DecisionRecord[] = [];
  connected = false;

  constructor(readonly api: ApiClient, readonly displayHorizon = 400) {}

  /** Full-state rebuild from gateway reads; refresh reproduces the view. */
  async resync(): Promise<void> {
    const [state, signals, proposals, scorecard] = await Promise.all([
      this.api.state(),
      this.api.signals(),
      this.api.proposals(),
      this.api.scorecard(),
    ]);
    this.state = state;
    this.buffers = emptyBuffers();
    for (const row of signals) this.pushRow(row);
    this.pending = proposals.pending;
    this.history = proposals.history;
    this.scorecard = scorecard;
  }

  pushRow(row: SignalRow): void {
    const breached = new Set((row.breached_flags ?? "").split(";").filter(Boolean));
    for (const signal of CHART_SIGNALS) {
      const buf = this.buffers.get(signal)!;
      const value = row[signal];
      buf.ticks.push(row.tick);
      buf.values.push(typeof value === "number" ? value : null);
      if (breached.has(signal)) buf.breachTicks.add(row.tick);
      if (buf.ticks.length > this.displayHorizon) {
        const cut = buf.ticks.length - this.displayHorizon;
        const dropped = buf.ticks.splice(0, cut);
        buf.values.splice(0, cut);
        for (const t of dropped) buf.breachTicks.delete(t);
      }
    }
  }

  handleEvent(event: GatewayEvent): void {
    switch (event.event) {
      case "hello":
        this.state = event as unknown as RunState & GatewayEvent;
        break;
      case "tick": {
        const signals = event.signals as SignalRow | undefined;
        if (signals) this.pushRow(signals);
        if (this.state) this.state.current_tick = signals?.tick ?? this.state.current_tick;
        if (this.state && this.state.status === "AwaitingDecision") {
          this.state.status = "Running";
        }
        break;
      }
      case "breach": {
        const ticks = event.tick as number;
        for (const name of (event.signals as string[] | undefined) ?? []) {
          const buf = this.buffers.get(name as ChartSignal);
          if (buf) buf.breachTicks.add(ticks);
        }
        break;
      }
      case "proposal": {
        const proposal = event as unknown as Proposal & GatewayEvent;
        this.upsert(proposal);
        break;
      }
      case "awaiting_decision":
        if (this.state) this.state.status = "AwaitingDecision";
        break;
      case "decision": {
        const id = event.proposal_id as string;
        const status = event.status as Proposal["status"];
        this.pending = this.pending.filter((p) => p.id !== id);
        const known = this.history.find((p) => p.id === id);
        if (known) known.status = status;
        this.decisions.push({ proposalId: id, decision: event.decision as string, status });
        break;
      }
      case "finished":
      case "halted":
        if (this.state) {
          this.state.status = event.event === "finished" ? "Finished" : "Halted";
        }
        break;
      default:
        break; // applied / unknown events carry nothing the view needs
    }
  }

  private upsert(proposal: Proposal): void {
    const i = this.history.findIndex((p) => p.id === proposal.id);
    if (i >= 0) this.history[i] = proposal;
    else this.history.push(proposal);
    if (proposal.status === "Pending") {
      if (!this.pending.some((p) => p.id === proposal.id)) this.pending.push(proposal);
    } else {
      this.pending = this.pending.filter((p) => p.id !== proposal.id);
    }
  }

  /**
   * Issue exactly one POST for this click; the returned promise carries the
   * gateway's verdict. State changes arrive through the event stream only.
   */
  decideProposal(proposalId: string, decision: "approve" | "deny"):
      Promise<{ proposal: Proposal }> {
    return this.api.decide(proposalId, decision, this.role, this.actorId);
  }
}
