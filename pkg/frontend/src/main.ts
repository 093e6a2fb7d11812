/**
 * Browser entry: wires the session to the DOM, keeps an event-stream
 * subscription with auto-reconnect + full resync, and surfaces gateway
 * rejections (403/409) verbatim next to the proposal buttons.
 */

import { ApiClient, GatewayError, Proposal } from "./api.js";
import { CHART_SIGNALS, ChartSignal, ConsoleSession, ROLES } from "./session.js";
import { chartSvg } from "./charts.js";

const THRESHOLD_DIRECTION: Record<string, "upper" | "lower"> = {};
const THRESHOLDS: Record<string, number> = {};

const gatewayBase = (() => {
  const explicit = new URLSearchParams(window.location.search).get("gateway");
  return explicit ?? window.location.origin;
})();

const api = new ApiClient(gatewayBase);
const session = new ConsoleSession(api);

const el = (id: string) => document.getElementById(id)!;

function renderStatus(): void {
  const s = session.state;
  el("run-id").textContent = s ? `${s.scenario} · ${s.run_id}` : "connecting…";
  el("tick").textContent = s ? `tick ${s.current_tick}` : "";
  const badge = el("status");
  badge.textContent = s?.status ?? "—";
  badge.className = `badge ${s?.status?.toLowerCase() ?? ""}`;
  el("stale-banner").classList.toggle("hidden", session.connected);
}

function renderCharts(): void {
  const host = el("charts");
  const blocks: string[] = [];
  for (const signal of CHART_SIGNALS) {
    const buf = session.buffers.get(signal)!;
    const svg = chartSvg(signal, {
      ticks: buf.ticks,
      values: buf.values,
      breachTicks: buf.breachTicks,
      threshold: THRESHOLDS[signal],
      direction: THRESHOLD_DIRECTION[signal],
      width: 560,
      height: 96,
    });
    blocks.push(`<figure><figcaption>${signal}</figcaption>${svg}</figure>`);
  }
  host.innerHTML = blocks.join("");
}

function renderScorecard(): void {
  const rows = session.scorecard.map((r) => {
    const bound = r.direction === "upper" ? "≤" : "≥";
    const observed = r.observed === null ? "–" : r.observed.toFixed(4);
    return `<tr class="${r.status}"><td>${r.constraint_id}</td>` +
      `<td>${r.signal} ${bound} ${r.threshold.toFixed(4)}</td>` +
      `<td>${observed}</td><td>${r.status.toUpperCase()}</td></tr>`;
  });
  el("scorecard-body").innerHTML = rows.join("") ||
    `<tr><td colspan="4">calibrating…</td></tr>`;
  for (const r of session.scorecard) {
    THRESHOLDS[r.signal] = r.threshold;
    THRESHOLD_DIRECTION[r.signal] = r.direction;
  }
}

function describeDelta(p: Proposal): string {
  const parts: string[] = [];
  const d = p.delta_u;
  if (d.rollback_to !== null) parts.push(`rollback→v${d.rollback_to}`);
  if (d.retrain) parts.push("retrain");
  if (d.d_tau_u !== 0) parts.push(`Δτᵤ ${d.d_tau_u.toFixed(3)}`);
  if (d.human_review_rate !== 0) parts.push(`review +${d.human_review_rate.toFixed(3)}`);
  if (d.rate_limit !== 0) parts.push(`rate ${d.rate_limit.toFixed(3)}`);
  if (d.friction_level !== 0) parts.push(`friction ${d.friction_level.toFixed(3)}`);
  return parts.join(", ") || "no-op";
}

function renderProposals(): void {
  const host = el("proposals");
  if (!session.pending.length && !session.history.length) {
    host.innerHTML = `<p class="muted">no proposals yet</p>`;
    return;
  }
  const card = (p: Proposal) => {
    const buttons = p.status === "Pending"
      ? `<button data-act="approve" data-id="${p.id}">approve</button>
         <button data-act="deny" data-id="${p.id}">deny</button>
         <span class="error" id="err-${p.id}"></span>`
      : "";
    return `<article class="proposal ${p.status.toLowerCase()}">
      <header><b>${p.id}</b>
        <span class="chip ${p.status.toLowerCase()}">${p.status}</span></header>
      <div>breaches: ${p.breach_signals.join(", ") || "—"}
        ${p.infeasible ? `<span class="chip infeasible">best-effort</span>` : ""}</div>
      <div>action: ${describeDelta(p)} · cost ${p.cost.toFixed(4)}</div>
      <footer>created @${p.created_tick}${p.decided_by ? ` · ${p.status.toLowerCase()} by ${p.decided_by}` : ""}</footer>
      ${buttons}
    </article>`;
  };
  const pending = session.pending.map(card).join("");
  const done = session.history.filter((p) => p.status !== "Pending")
    .slice(-8).reverse().map(card).join("");
  host.innerHTML =
    `<h3>pending</h3>${pending || `<p class="muted">none</p>`}` +
    `<h3>history</h3>${done || `<p class="muted">none</p>`}`;
}

function renderAll(): void {
  renderStatus();
  renderScorecard();
  renderCharts();
  renderProposals();
}

async function onDecision(proposalId: string, decision: "approve" | "deny"): Promise<void> {
  const slot = document.getElementById(`err-${proposalId}`);
  if (slot) slot.textContent = "";
  try {
    await session.decideProposal(proposalId, decision);
  } catch (error) {
    // surface 403/409 verbatim; state is corrected by the event stream
    if (slot && error instanceof GatewayError) {
      slot.textContent = `${error.status}: ${error.detail}`;
    } else if (slot) {
      slot.textContent = String(error);
    }
  }
}

el("proposals").addEventListener("click", (e) => {
  const target = e.target as HTMLElement;
  const act = target.dataset.act;
  const id = target.dataset.id;
  if (act === "approve" || act === "deny") {
    if (id) void onDecision(id, act);
  }
});

const roleSelect = el("role") as HTMLSelectElement;
roleSelect.innerHTML = ROLES.map((r) =>
  `<option value="${r}" ${r === session.role ? "selected" : ""}>${r}</option>`).join("");
roleSelect.addEventListener("change", () => {
  session.role = roleSelect.value as ConsoleSession["role"];
});

async function pump(): Promise<void> {
  for (;;) {
    try {
      await session.resync();
      session.connected = true;
      renderAll();
      await api.streamEvents((event) => {
        session.handleEvent(event);
        if (event.event === "decision" || event.event === "proposal") {
          void session.api.scorecard().then((s) => { session.scorecard = s; });
        }
        renderAll();
      });
      session.connected = false;
      renderAll();
      if (session.state && ["Finished", "Halted"].includes(session.state.status)) {
        await session.resync();
        renderAll();
        return; // run over; keep the final view
      }
    } catch {
      session.connected = false;
      renderAll();
    }
    await new Promise((resolve) => setTimeout(resolve, 1000));
  }
}

void pump();
