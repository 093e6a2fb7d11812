"""Live-run controller bridging the supervisory loop and external callers.

The loop runs in a worker thread; the gateway keeps immutable per-tick
snapshots for readers, funnels decision commands through the loop's
serialized queue, and broadcasts lifecycle events to stream subscribers.
In interactive mode the loop blocks in ``AwaitingDecision`` at a governance
boundary while an escalation proposal is pending, until a decision arrives
(or the optional wall-clock timeout expires).
"""

import itertools
import json
import queue
import threading
from dataclasses import dataclass, field
from typing import Optional

from .canonical import sanitize
from .errors import Unauthorized
from .plant import Scenario
from .roles import GovernanceRole, parse_role
from .runtime import (
    DecisionCommand,
    QueueDecisions,
    RunObserver,
    RunReport,
    build_scorecard,
    default_run_dir,
    run_loop,
)
from .supervisor import ProposalStatus

_run_counter = itertools.count(1)


@dataclass
class RunHandle:
    run_id: str
    scenario: str
    current_tick: int = -1
    mode: str = "Headless"            # Headless | Interactive
    status: str = "Running"           # Running | AwaitingDecision | Finished | Halted

    def to_dict(self) -> dict:
        return {"run_id": self.run_id, "scenario": self.scenario,
                "current_tick": self.current_tick, "mode": self.mode,
                "status": self.status}


class _Broadcast:
    """Fan-out of line events to any number of stream subscribers."""

    def __init__(self):
        self._subs: list = []
        self._lock = threading.Lock()

    def subscribe(self) -> "queue.Queue[str]":
        q: "queue.Queue[str]" = queue.Queue()
        with self._lock:
            self._subs.append(q)
        return q

    def unsubscribe(self, q):
        with self._lock:
            if q in self._subs:
                self._subs.remove(q)

    def publish(self, kind: str, data: dict):
        line = json.dumps({"event": kind, **sanitize(data)}, sort_keys=True)
        with self._lock:
            for q in self._subs:
                q.put(line)


class LiveRun(RunObserver):
    """Owns one supervisory run and its externally visible state."""

    def __init__(self, scenario: Scenario, run_dir=None, interactive: bool = False,
                 decision_source=None, timeout_s: Optional[float] = None):
        self.scenario = scenario
        self.handle = RunHandle(
            run_id=f"run-{next(_run_counter):04d}",
            scenario=scenario.name,
            mode="Interactive" if interactive else "Headless",
        )
        self.events = _Broadcast()
        self._lock = threading.Lock()
        self._signal_rows: list = []
        self._proposals: dict = {}
        self._order: list = []
        self._decisions: list = []
        self._latest_y = None
        self._constraints = None
        self._report: Optional[RunReport] = None
        self._error: Optional[BaseException] = None
        self._run_dir = run_dir if run_dir is not None else default_run_dir(scenario)
        if interactive and decision_source is None:
            decision_source = QueueDecisions(timeout_s=timeout_s,
                                             on_waiting=self._on_waiting)
        self.decision_source = decision_source
        self._thread = threading.Thread(target=self._run, daemon=True)

    # -- loop lifecycle ----------------------------------------------------

    def start(self) -> "LiveRun":
        self._thread.start()
        return self

    def join(self, timeout=None) -> Optional[RunReport]:
        self._thread.join(timeout)
        if self._error is not None:
            raise self._error
        return self._report

    def _run(self):
        try:
            self._report = run_loop(self.scenario, decision_source=self.decision_source,
                                    run_dir=self._run_dir, observer=self)
            with self._lock:
                self.handle.status = "Finished"
            self.events.publish("finished", {"exit_code": self._report.exit_code,
                                             "unresolved": self._report.unresolved})
        except BaseException as exc:  # surfaced on join()
            self._error = exc
            with self._lock:
                self.handle.status = "Halted"
            self.events.publish("halted", {"error": str(exc)})

    # -- observer hooks (called from the loop thread) ------------------------

    def _on_waiting(self, proposal):
        with self._lock:
            self.handle.status = "AwaitingDecision"
        self.events.publish("awaiting_decision", {"proposal_id": proposal.id,
                                                  "tick": proposal.created_tick})

    def on_tick(self, tick, row, breached):
        with self._lock:
            self.handle.current_tick = tick
            if self.handle.status == "AwaitingDecision":
                self.handle.status = "Running"
            self._signal_rows.append(dict(row))
        if breached:
            self.events.publish("breach", {"tick": tick, "signals": list(breached)})
        if tick % 10 == 0:
            self.events.publish("tick", {"tick": tick, "signals": sanitize(row)})

    def on_proposal(self, proposal):
        with self._lock:
            self._proposals[proposal.id] = proposal
            if proposal.id not in self._order:
                self._order.append(proposal.id)
        self.events.publish("proposal", sanitize(proposal.to_dict()))

    def on_decision(self, proposal, decision):
        with self._lock:
            self._proposals[proposal.id] = proposal
            self._decisions.append({"proposal_id": proposal.id, "decision": decision,
                                    "tick": proposal.decided_tick,
                                    "actor": proposal.decided_by})
        self.events.publish("decision", {"proposal_id": proposal.id,
                                         "decision": decision,
                                         "status": proposal.status.value})

    def on_applied(self, proposal, application):
        with self._lock:
            self._proposals[proposal.id] = proposal
        self.events.publish("applied", {"proposal_id": proposal.id,
                                        "rolled_back_to": application.rolled_back_to})

    def on_constraints(self, constraints):
        with self._lock:
            self._constraints = constraints

    # the loop publishes each evaluated vector through on_tick's row; keep
    # the latest full vector for the scorecard endpoint
    def on_finish(self, report):
        with self._lock:
            self._signal_rows = list(report.signal_rows)

    # -- reader surface ------------------------------------------------------

    def state(self) -> dict:
        with self._lock:
            return self.handle.to_dict()

    def signals(self, from_tick: int = 0) -> list:
        with self._lock:
            return [dict(r) for r in self._signal_rows if r["tick"] >= from_tick]

    def proposals(self) -> dict:
        with self._lock:
            pending = [self._proposals[i].to_dict() for i in self._order
                       if self._proposals[i].status == ProposalStatus.PENDING]
            history = [self._proposals[i].to_dict() for i in self._order]
        return {"pending": pending, "history": history}

    def scorecard(self) -> list:
        with self._lock:
            constraints = self._constraints
            rows = self._signal_rows
            report = self._report
        if report is not None:
            return report.scorecard
        if constraints is None or not rows:
            return []
        last = rows[-1]
        from .monitors import SignalVector, INSUFFICIENT
        import math
        y = SignalVector.build(last["tick"], **{
            k: (INSUFFICIENT if isinstance(v, float) and math.isnan(v) else v)
            for k, v in last.items() if k not in ("tick", "breached_flags")})
        return build_scorecard(y, constraints)

    def log_head(self) -> dict:
        run_dir = self._run_dir
        path = None if run_dir is None else (str(run_dir) + "/audit.log")
        head = None
        seq = 0
        if path:
            try:
                from .auditlog import iter_events
                for ev in iter_events(path):
                    head = ev.this_hash.hex()
                    seq = ev.seq
            except OSError:
                pass
        return {"seq": seq, "hash": head}

    # -- command surface -----------------------------------------------------

    def submit_decision(self, proposal_id: str, decision: str, actor_role: str,
                        actor_id: str, timeout_s: float = 10.0) -> dict:
        """Route a decision through the loop's queue; returns the outcome.

        Raises KeyError for unknown proposals, Unauthorized for roles outside
        the permission table, ValueError for malformed decisions, and
        RuntimeError('not_pending') when the proposal is not awaiting one.
        """
        if decision not in ("approve", "deny"):
            raise ValueError(f"decision must be approve|deny, got {decision!r}")
        role = parse_role(actor_role)
        with self._lock:
            proposal = self._proposals.get(proposal_id)
        if proposal is None:
            raise KeyError(proposal_id)
        if proposal.status != ProposalStatus.PENDING:
            raise RuntimeError("not_pending")
        if self.decision_source is None or not self.decision_source.interactive:
            raise RuntimeError("not_interactive")
        reply: "queue.Queue[dict]" = queue.Queue()
        cmd = DecisionCommand(decision=decision,
                              actor=GovernanceRole(role, actor_id),
                              proposal_id=proposal_id,
                              respond=reply.put)
        self.decision_source.submit(cmd)
        try:
            result = reply.get(timeout=timeout_s)
        except queue.Empty:
            raise RuntimeError("decision not processed before timeout")
        if "error" in result:
            if result["error"] == "unauthorized":
                raise Unauthorized(result.get("detail", "unauthorized"))
            raise RuntimeError(result["error"])
        return result
