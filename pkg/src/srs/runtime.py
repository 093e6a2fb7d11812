"""The closed loop: step -> observe -> window -> signals -> barriers ->
policy -> governance -> audit, tick by tick until the horizon.

Everything the run produces lands in one run directory: signals.csv,
breaches.csv, proposals.csv, decisions.csv, scorecard.csv, telemetry.jsonl,
and the hash-chained audit log. Replaying with the same (scenario, seed,
decision schedule) reproduces signals.csv byte for byte and the same audit
chain head.
"""

import json
import math
import os
import queue
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .auditlog import AuditLog
from .canonical import sanitize
from .errors import SrsError, Unauthorized
from .interventions import CONTINUOUS_KNOBS, InterventionVector
from .monitors import SignalEngine, VALID, cognitive_burden, evaluate_barriers
from .plant import Plant, Scenario, build_registry, make_dataset, observe
from .roles import GovernanceRole, Role
from .safeguards import TrainConfig, train_constrained
from .supervisor import (
    MitigationProposal,
    ProposalStatus,
    SupervisorConfig,
    apply_slow,
    governance_decide,
    policy_step,
)
from .valuespec import compile_spec, serialize

SIGNAL_COLUMNS = ("d_f", "a_p", "c_b", "e_c", "r_t", "dr_dt", "fnr_gap")


# ---------------------------------------------------------------------------
# decision sources
# ---------------------------------------------------------------------------

@dataclass
class DecisionCommand:
    decision: str                   # "approve" | "deny"
    actor: GovernanceRole
    proposal_id: Optional[str] = None
    respond: Optional[object] = None  # callable(result: dict) for gateways


class ScriptedDecisions:
    """Headless schedule: approve_all, deny_all, or per-proposal-index map."""

    def __init__(self, schedule="approve_all",
                 actor: GovernanceRole = None):
        self.actor = actor or GovernanceRole(Role.GOVERNANCE_BOARD, "gb-scripted")
        self._by_index = {}
        self._default = None
        if schedule in ("approve_all", "deny_all"):
            self._default = schedule.split("_")[0]
        elif isinstance(schedule, dict):
            self._default = schedule.get("default")
            for k, v in (schedule.get("by_index") or {}).items():
                self._by_index[int(k)] = str(v)
        else:
            raise SrsError(f"unknown decision schedule {schedule!r}")
        self._seen = 0

    @classmethod
    def from_file(cls, path) -> "ScriptedDecisions":
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        return cls(doc)

    def decide(self, proposal: MitigationProposal, tick: int) -> Optional[DecisionCommand]:
        index = self._seen
        self._seen += 1
        choice = self._by_index.get(index, self._default)
        if choice in ("approve", "deny"):
            return DecisionCommand(decision=choice, actor=self.actor)
        return None

    @property
    def interactive(self) -> bool:
        return False


class QueueDecisions:
    """Interactive source: blocks the loop at governance boundaries while an
    escalation proposal is pending, until a command arrives or the optional
    wall-clock timeout expires."""

    def __init__(self, timeout_s: Optional[float] = None, on_waiting=None):
        self.commands: "queue.Queue[DecisionCommand]" = queue.Queue()
        self.timeout_s = timeout_s
        self.on_waiting = on_waiting
        self.closed = False

    def submit(self, command: DecisionCommand):
        self.commands.put(command)

    def decide(self, proposal: MitigationProposal, tick: int) -> Optional[DecisionCommand]:
        if self.on_waiting is not None:
            self.on_waiting(proposal)
        deadline = None if self.timeout_s is None else time.monotonic() + self.timeout_s
        while not self.closed:
            remaining = None if deadline is None else max(0.0, deadline - time.monotonic())
            try:
                cmd = self.commands.get(timeout=0.05 if remaining is None else min(0.05, remaining))
            except queue.Empty:
                if deadline is not None and time.monotonic() >= deadline:
                    return None
                continue
            if cmd.proposal_id is not None and cmd.proposal_id != proposal.id:
                if cmd.respond is not None:
                    cmd.respond({"error": "not_pending", "detail": f"{cmd.proposal_id} is not awaiting decision"})
                continue
            return cmd
        return None

    @property
    def interactive(self) -> bool:
        return True


# ---------------------------------------------------------------------------
# run report
# ---------------------------------------------------------------------------

@dataclass
class BreachEpisode:
    signal: str
    start_tick: int
    end_tick: Optional[int] = None


@dataclass
class RunReport:
    scenario: str
    seed: int
    horizon: int
    signal_rows: list
    episodes: list
    proposals: list
    decisions: list
    scorecard: list
    unresolved: int
    run_dir: Optional[Path]
    audit_path: Optional[Path]
    chain_head: str
    constraints: object = None

    @property
    def exit_code(self) -> int:
        return 2 if self.unresolved else 0

    def all_pass(self) -> bool:
        return bool(self.scorecard) and all(r["status"] == "pass" for r in self.scorecard)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        if math.isnan(x):
            return ""
        return repr(x)
    return str(x)


def _write_csv(path: Path, columns, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row.get(c)) for c in columns) + "\n")


def write_report(report: RunReport, run_dir: Path):
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(run_dir / "signals.csv",
               ("tick",) + SIGNAL_COLUMNS + ("breached_flags",),
               report.signal_rows)
    _write_csv(run_dir / "breaches.csv", ("signal", "start_tick", "end_tick"),
               [{"signal": e.signal, "start_tick": e.start_tick, "end_tick": e.end_tick}
                for e in report.episodes])
    _write_csv(run_dir / "proposals.csv",
               ("id", "created_tick", "status", "breach_signals", "cost", "d_tau_u",
                "human_review_rate", "rate_limit", "friction_level", "rollback_to",
                "retrain", "deadline_tick", "decided_tick", "decided_by", "infeasible",
                "applied_tick"),
               [{**{"id": p.id, "created_tick": p.created_tick, "status": p.status.value,
                    "breach_signals": ";".join(p.breach_signals), "cost": p.cost,
                    "deadline_tick": p.deadline_tick, "decided_tick": p.decided_tick,
                    "decided_by": p.decided_by, "infeasible": p.infeasible,
                    "applied_tick": p.applied_tick},
                 **{k: getattr(p.delta_u, k) for k in
                    ("d_tau_u", "human_review_rate", "rate_limit", "friction_level",
                     "rollback_to", "retrain")}}
                for p in report.proposals])
    _write_csv(run_dir / "decisions.csv",
               ("tick", "proposal_id", "decision", "actor_role", "actor_id"),
               report.decisions)
    _write_csv(run_dir / "scorecard.csv",
               ("constraint_id", "value", "signal", "direction", "threshold",
                "observed", "status"),
               report.scorecard)


def build_scorecard(y, constraints) -> list:
    rows = []
    if constraints is None:
        return rows
    for spec in constraints.active():
        status = y.status.get(spec.signal_id)
        observed = y.values.get(spec.signal_id)
        if status != VALID:
            verdict = "insufficient"
        else:
            verdict = "pass" if spec.satisfied_by(observed) else "fail"
        rows.append({
            "constraint_id": spec.id,
            "value": spec.value_id,
            "signal": spec.signal_id,
            "direction": spec.direction.value,
            "threshold": spec.threshold,
            "observed": observed,
            "status": verdict,
        })
    return rows


# ---------------------------------------------------------------------------
# the loop
# ---------------------------------------------------------------------------

class RunObserver:
    """Hook surface for gateways; all methods optional no-ops."""

    def on_tick(self, tick, row, breached):
        pass

    def on_proposal(self, proposal):
        pass

    def on_decision(self, proposal, decision):
        pass

    def on_applied(self, proposal, application):
        pass

    def on_constraints(self, constraints):
        pass

    def on_finish(self, report):
        pass


def default_run_dir(scenario: Scenario) -> Path:
    base = os.environ.get("SRS_RUN_DIR", "runs")
    stamp = time.strftime("%Y%m%d-%H%M%S")
    return Path(base) / f"{scenario.name}-{scenario.seed}-{stamp}"


def run_loop(scenario: Scenario, cfg: SupervisorConfig = None,
             decision_source=None, run_dir=None,
             observer: RunObserver = None) -> RunReport:
    """Advance the plant to the horizon under supervisory control."""
    cfg = cfg or SupervisorConfig.from_dict(scenario.supervisor)
    if decision_source is None:
        decision_source = ScriptedDecisions("approve_all")
    observer = observer or RunObserver()
    run_dir = Path(run_dir) if run_dir is not None else default_run_dir(scenario)
    run_dir.mkdir(parents=True, exist_ok=True)

    seed_streams = np.random.SeedSequence(scenario.seed).spawn(4)
    registry = build_registry(scenario)
    plant = Plant(scenario, registry, seed_streams)
    engine = SignalEngine(scenario.monitors,
                          audit_seed=int(seed_streams[2].generate_state(1)[0]))
    log = AuditLog(run_dir / "audit.log")
    telemetry = open(run_dir / "telemetry.jsonl", "w", encoding="utf-8")

    def retrain_fn():
        dataset = make_dataset(scenario, int(scenario.dataset.get("n", 2000)))
        tcfg = TrainConfig(
            eta=float(scenario.train.get("eta", 0.1)),
            lam=float(scenario.train.get("lambda", 10.0)),
            epochs=int(scenario.train.get("epochs", 300)),
            seed=int(scenario.train.get("seed", scenario.seed)),
        )
        model, _ = train_constrained(dataset, tcfg)
        entry = registry.register(model.theta, origin="trained")
        return registry.active()

    constraints = None
    u = InterventionVector.zero()
    proposals: dict = {}
    order: list = []
    decisions: list = []
    episodes: list = []
    open_episodes: dict = {}
    breached_state: dict = {}
    insufficient_state: dict = {}
    signal_rows: list = []
    y_history: list = []

    try:
        for tick in range(scenario.horizon):
            records = plant.step(u)
            records = observe(records, scenario.observation_noise_std, plant.observe_rng)
            engine.observe(records)
            for rec in records:
                telemetry.write(json.dumps(sanitize(rec.to_dict()), sort_keys=True) + "\n")

            if constraints is None and tick == scenario.calibration_window - 1:
                engine.window.snapshot_baseline()
                y_cal = engine.evaluate(tick)
                measurements = {sid: y_cal.values[sid] for sid in y_cal.values
                                if y_cal.status[sid] == VALID}
                constraints = compile_spec(scenario.constraint_spec,
                                           calibration_measurements=measurements)
                import hashlib
                spec_hash = hashlib.sha256(serialize(constraints).encode()).hexdigest()
                log.append("ConstraintRevision", tick, {
                    "generation": constraints.generation,
                    "created_by": constraints.created_by,
                    "reason": "calibration_bind",
                    "spec_sha256": spec_hash,
                    "active": [{"id": c.id, "signal": c.signal_id,
                                "direction": c.direction.value,
                                "threshold": c.threshold,
                                "severity": c.severity.value}
                               for c in constraints.active()],
                })
                observer.on_constraints(constraints)

            y = engine.evaluate(tick)
            y_history.append(y)
            log.append("SignalSample", tick, {"signals": dict(y.values),
                                              "status": dict(y.status)})

            breached_ids = []
            if constraints is not None:
                barriers = evaluate_barriers(y, constraints)
                for sid, entry in barriers.entries.items():
                    if entry.insufficient and not insufficient_state.get(sid, False):
                        log.append("InsufficientData", tick,
                                   {"signal": sid, "constraint": entry.constraint_id})
                    insufficient_state[sid] = entry.insufficient
                    was = breached_state.get(sid, False)
                    if entry.breached and not was:
                        ep = BreachEpisode(signal=sid, start_tick=tick)
                        episodes.append(ep)
                        open_episodes[sid] = ep
                        log.append("Breach", tick, {
                            "signal": sid, "constraint": entry.constraint_id,
                            "barrier": entry.barrier, "observed": entry.observed,
                            "threshold": entry.threshold,
                            "severity": entry.severity.value,
                        })
                    elif not entry.breached and was and sid in open_episodes:
                        open_episodes.pop(sid).end_tick = tick
                    breached_state[sid] = entry.breached
                breached_ids = sorted(e.signal_id for e in barriers.breached())

                for pid in order:
                    p = proposals[pid]
                    if p.status == ProposalStatus.PENDING and tick > p.deadline_tick:
                        proposals[pid] = replace(p, status=ProposalStatus.EXPIRED,
                                                 decided_tick=tick, decided_by="deadline")
                        log.append("GovernanceDecision", tick, {
                            "proposal_id": pid, "decision": "expired",
                            "actor_role": "system", "actor_id": "deadline"})

                pending_live = any(p.status == ProposalStatus.PENDING
                                   for p in proposals.values())
                outcome = policy_step(y_history, barriers, cfg, constraints, tick, u,
                                      pending_live=pending_live, registry=registry)
                for ap in outcome.auto_proposals:
                    proposals[ap.id] = ap
                    order.append(ap.id)
                    log.append("ProposalCreated", tick, ap.to_dict())
                if not outcome.fast_delta.is_zero_delta():
                    u = u.plus_delta(outcome.fast_delta, cfg.action_box)
                    log.append("InterventionApplied", tick, {
                        "scope": "fast",
                        "proposal_id": outcome.auto_proposals[0].id if outcome.auto_proposals else None,
                        "delta": outcome.fast_delta.to_dict(),
                        "state": u.to_dict(),
                    })
                if outcome.escalation is not None:
                    p = outcome.escalation
                    proposals[p.id] = p
                    order.append(p.id)
                    log.append("ProposalCreated", tick, p.to_dict())
                    observer.on_proposal(p)

                if cfg.is_boundary(tick):
                    for pid in list(order):
                        p = proposals[pid]
                        if p.status != ProposalStatus.PENDING:
                            continue
                        while True:
                            cmd = decision_source.decide(p, tick)
                            if cmd is None:
                                break
                            try:
                                decided, revised = governance_decide(
                                    p, cmd.decision, cmd.actor, constraints, tick)
                            except SrsError as exc:
                                if cmd.respond is not None:
                                    kind = "unauthorized" if isinstance(exc, Unauthorized) else "rejected"
                                    cmd.respond({"error": kind, "detail": str(exc)})
                                if decision_source.interactive:
                                    continue
                                break
                            proposals[pid] = decided
                            decisions.append({"tick": tick, "proposal_id": pid,
                                              "decision": cmd.decision,
                                              "actor_role": cmd.actor.role.value,
                                              "actor_id": cmd.actor.id})
                            log.append("GovernanceDecision", tick, {
                                "proposal_id": pid, "decision": cmd.decision,
                                "actor_role": cmd.actor.role.value,
                                "actor_id": cmd.actor.id})
                            observer.on_decision(decided, cmd.decision)
                            if decided.status == ProposalStatus.APPROVED:
                                if revised is not None:
                                    constraints = revised
                                    log.append("ConstraintRevision", tick, {
                                        "generation": constraints.generation,
                                        "created_by": constraints.created_by,
                                        "reason": "proposal",
                                        "proposal_id": pid,
                                        "active": [{"id": c.id, "signal": c.signal_id,
                                                    "threshold": c.threshold}
                                                   for c in constraints.active()],
                                    })
                                    observer.on_constraints(constraints)
                                application = apply_slow(decided, registry, constraints,
                                                         cfg, tick, retrain_fn=retrain_fn)
                                fast_part = InterventionVector.delta(
                                    **{k: getattr(decided.delta_u, k)
                                       for k in CONTINUOUS_KNOBS})
                                u = u.plus_delta(fast_part, cfg.action_box)
                                log.append("InterventionApplied", tick, {
                                    "scope": "slow", "proposal_id": pid,
                                    "delta": decided.delta_u.to_dict(),
                                    "state": u.to_dict(),
                                })
                                if application.rolled_back_to is not None:
                                    plant.state.active_model_version = application.new_active_version
                                    log.append("RollbackApplied", tick, {
                                        "proposal_id": pid,
                                        "restored_version": application.rolled_back_to,
                                        "new_active_version": application.new_active_version,
                                    })
                                elif application.retrained_version is not None:
                                    plant.state.active_model_version = application.retrained_version
                                proposals[pid] = replace(decided, applied_tick=tick)
                                observer.on_applied(proposals[pid], application)
                            if cmd.respond is not None:
                                cmd.respond({"proposal": proposals[pid].to_dict()})
                            break

            row = {"tick": tick}
            for sid in SIGNAL_COLUMNS:
                row[sid] = y.values.get(sid, math.nan)
            row["breached_flags"] = ";".join(breached_ids)
            signal_rows.append(row)
            observer.on_tick(tick, row, breached_ids)
    except SrsError:
        log.append("Error", plant.state.tick, {"stage": "run_loop"})
        raise
    finally:
        telemetry.close()
        head = log.head.hex()
        log.close()

    final_y = y_history[-1]
    scorecard = build_scorecard(final_y, constraints)
    report = RunReport(
        scenario=scenario.name,
        seed=scenario.seed,
        horizon=scenario.horizon,
        signal_rows=signal_rows,
        episodes=episodes,
        proposals=[proposals[pid] for pid in order],
        decisions=decisions,
        scorecard=scorecard,
        unresolved=len(open_episodes),
        run_dir=run_dir,
        audit_path=run_dir / "audit.log",
        chain_head=head,
        constraints=constraints,
    )
    write_report(report, run_dir)
    meta = {
        "scenario": scenario.name,
        "seed": scenario.seed,
        "horizon": scenario.horizon,
        "chain_head": head,
        "unresolved_breaches": report.unresolved,
        "exit_code": report.exit_code,
        "constraint_generation": constraints.generation if constraints else None,
        "spec_serialized": serialize(constraints) if constraints else None,
    }
    (run_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True),
                                       encoding="utf-8")
    observer.on_finish(report)
    return report
