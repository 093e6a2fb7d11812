"""Closed-loop controller: barrier evaluation each tick, bounded fast
actuation, least-norm mitigation proposals, and the governance workflow
that authorizes slow actions.

Mitigation solves

    min  dv' W dv  (+ scaled discrete-action cost)
    s.t. predicted barriers >= 0,  dv inside the delta action box

with the scenario's linear effect matrix as the predictive model. The
continuous part runs accelerated projected gradient descent on a quadratic
penalty with an escalating coefficient, then a weighted least-squares
feasibility polish; discrete actions (rollback, retraining) are enumerated,
each with a re-solved continuous complement. Discrete costs enter the
objective multiplied by mean(W) so that uniformly rescaling W rescales the
whole objective and never changes the argmin. If nothing is predicted
admissible the best-effort candidate ships flagged infeasible; the loop
keeps running and escalates.
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .errors import (
    DimensionMismatch,
    NotCycleBoundary,
    NotPending,
    ParseError,
    PastDeadline,
)
from .interventions import ActionBox, CONTINUOUS_KNOBS, InterventionVector
from .monitors import BarrierVector, SignalVector, VALID, evaluate_barriers
from .roles import GovernanceRole, Role
from .valuespec import ConstraintSet, Severity, revise_constraints


class ProposalStatus(str, Enum):
    PENDING = "Pending"
    AUTO_APPLIED = "AutoApplied"
    APPROVED = "Approved"
    DENIED = "Denied"
    EXPIRED = "Expired"


@dataclass(frozen=True)
class MitigationProposal:
    id: str
    created_tick: int
    breach_signals: tuple
    delta_u: InterventionVector
    predicted_signals: dict
    cost: float
    status: ProposalStatus
    required_authority: Role = Role.GOVERNANCE_BOARD
    deadline_tick: Optional[int] = None
    infeasible: bool = False
    decided_tick: Optional[int] = None
    decided_by: Optional[str] = None
    applied_tick: Optional[int] = None

    def __post_init__(self):
        if self.cost < 0:
            raise ValueError("proposal cost must be >= 0")
        if self.status == ProposalStatus.PENDING and self.deadline_tick is None:
            raise ValueError("pending proposals carry a deadline tick")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "created_tick": self.created_tick,
            "breach_signals": list(self.breach_signals),
            "delta_u": self.delta_u.to_dict(),
            "predicted_signals": dict(self.predicted_signals),
            "cost": self.cost,
            "status": self.status.value,
            "required_authority": self.required_authority.value,
            "deadline_tick": self.deadline_tick,
            "infeasible": self.infeasible,
            "decided_tick": self.decided_tick,
            "decided_by": self.decided_by,
            "applied_tick": self.applied_tick,
        }


@dataclass(frozen=True)
class DiscreteAction:
    name: str                      # "rollback" | "retrain"
    cost: float
    effects: dict                  # signal_id -> modeled signal delta
    target: object = "previous"    # rollback target version (int or "previous")


@dataclass(frozen=True)
class FastRule:
    signal: str
    knob: str
    delta: float

    def __post_init__(self):
        if self.knob not in CONTINUOUS_KNOBS:
            raise ParseError(f"fast rule targets unknown knob {self.knob!r}")


@dataclass
class SupervisorConfig:
    weights: dict = field(default_factory=lambda: {k: 1.0 for k in CONTINUOUS_KNOBS})
    governance_cycle: int = 50
    proposal_deadline: Optional[int] = None   # defaults to one cycle
    fast_rules: list = field(default_factory=list)
    reliance_rule: Optional[FastRule] = None
    kappa: dict = field(default_factory=lambda: {"r_max": 0.85, "delta_r": 0.01})
    action_box: ActionBox = field(default_factory=ActionBox)
    discrete_actions: list = field(default_factory=list)
    effect_matrix: dict = field(default_factory=dict)  # signal -> {knob -> slope}
    interactive_timeout_s: Optional[float] = None

    def __post_init__(self):
        if self.governance_cycle < 1:
            raise ParseError("governance_cycle must be >= 1")
        for k in CONTINUOUS_KNOBS:
            if self.weights.get(k, 0.0) <= 0:
                raise ParseError(f"weight for {k} must be > 0")
        if self.proposal_deadline is None:
            self.proposal_deadline = self.governance_cycle
        for signal, row in self.effect_matrix.items():
            for knob in row:
                if knob not in CONTINUOUS_KNOBS:
                    raise ParseError(f"effect matrix row {signal!r} has unknown knob {knob!r}")

    def weight_vector(self) -> np.ndarray:
        return np.array([self.weights[k] for k in CONTINUOUS_KNOBS])

    def is_boundary(self, tick: int) -> bool:
        return tick > 0 and tick % self.governance_cycle == 0

    def fast_rule_for(self, signal: str) -> Optional[FastRule]:
        for rule in self.fast_rules:
            if rule.signal == signal:
                return rule
        return None

    @classmethod
    def from_dict(cls, doc: dict) -> "SupervisorConfig":
        doc = doc or {}
        weights = {k: 1.0 for k in CONTINUOUS_KNOBS}
        weights.update(doc.get("weights") or {})
        fast_rules = [FastRule(r["signal"], r["knob"], float(r["delta"]))
                      for r in doc.get("fast_rules") or []]
        rel = doc.get("reliance_rule")
        reliance_rule = FastRule("r_t", rel["knob"], float(rel["delta"])) if rel else None
        actions = [DiscreteAction(name=a["name"], cost=float(a.get("cost", 0.0)),
                                  effects=dict(a.get("effects") or {}),
                                  target=a.get("target", "previous"))
                   for a in doc.get("discrete_actions") or []]
        kappa = {"r_max": float(doc.get("r_max", 0.85)),
                 "delta_r": float(doc.get("delta_r", 0.01))}
        return cls(
            weights=weights,
            governance_cycle=int(doc.get("governance_cycle", 50)),
            proposal_deadline=(int(doc["proposal_deadline"])
                               if "proposal_deadline" in doc else None),
            fast_rules=fast_rules,
            reliance_rule=reliance_rule,
            kappa=kappa,
            action_box=ActionBox.from_dict(doc.get("action_box")),
            discrete_actions=actions,
            effect_matrix={s: dict(row) for s, row in (doc.get("effect_matrix") or {}).items()},
            interactive_timeout_s=doc.get("interactive_timeout_s"),
        )


# ---------------------------------------------------------------------------
# least-norm mitigation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SolveResult:
    delta_u: InterventionVector
    cost: float
    feasible: bool
    predicted_signals: dict
    discrete: tuple = ()
    worst_residual: float = 0.0


def _constraint_rows(y: SignalVector, constraint_set: ConstraintSet, effect_matrix: dict):
    """Margins and barrier sensitivities for valid-signal active constraints."""
    margins, rows, specs = [], [], []
    for spec in constraint_set.active():
        if y.status.get(spec.signal_id) != VALID:
            continue
        observed = y.values[spec.signal_id]
        sign = -1.0 if spec.direction.value == "upper" else 1.0
        margin = (spec.threshold - observed) if sign < 0 else (observed - spec.threshold)
        row = np.zeros(len(CONTINUOUS_KNOBS))
        for j, knob in enumerate(CONTINUOUS_KNOBS):
            row[j] = sign * float(effect_matrix.get(spec.signal_id, {}).get(knob, 0.0))
        margins.append(margin)
        rows.append(row)
        specs.append(spec)
    return np.array(margins), (np.vstack(rows) if rows else np.zeros((0, len(CONTINUOUS_KNOBS)))), specs


def _pgd_continuous(margins, A, w, lo, hi, eps=1e-9):
    """Accelerated projected gradient on the penalized least-norm objective.

    The penalty coefficient scales with mean(w), so uniformly rescaling W
    rescales the whole objective and the iterates are bit-identical —
    argmin invariance under uniform scaling holds exactly.
    """
    n = w.size
    v = np.zeros(n)
    if margins.size == 0:
        return v
    smax2 = float(np.linalg.norm(A, 2)) ** 2 if A.size else 0.0
    for stage in (1e2, 1e3, 1e4, 1e5):
        rho = stage * float(w.mean())
        lips = 2.0 * float(w.max()) + 2.0 * rho * max(smax2, 1e-12)
        step = 1.0 / lips
        mom = v.copy()
        t_prev = 1.0
        for _ in range(400):
            slack = margins + A @ mom - eps
            grad = 2.0 * w * mom + 2.0 * rho * (A.T @ np.minimum(slack, 0.0))
            v_new = np.clip(mom - step * grad, lo, hi)
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_prev * t_prev))
            mom = v_new + ((t_prev - 1.0) / t_new) * (v_new - v)
            mom = np.clip(mom, lo, hi)
            if np.max(np.abs(v_new - v)) < 1e-13:
                v = v_new
                break
            v, t_prev = v_new, t_new
    # feasibility polish: weighted minimal-norm correction onto the violated rows
    for _ in range(30):
        resid = eps / 2.0 - (margins + A @ v)
        viol = resid > 0
        if not np.any(viol):
            break
        Aa = A[viol]
        try:
            winv = 1.0 / w
            gram = Aa @ (winv[:, None] * Aa.T)
            lam = np.linalg.lstsq(gram, resid[viol], rcond=None)[0]
            dv = winv * (Aa.T @ lam)
        except np.linalg.LinAlgError:
            break
        v = np.clip(v + dv, lo, hi)
    v[np.abs(v) < 1e-12] = 0.0
    return v


def solve_mitigation(y: SignalVector, constraint_set: ConstraintSet,
                     cfg: SupervisorConfig, delta_box=None,
                     discrete_actions=None) -> SolveResult:
    """Minimum-cost intervention delta predicted to restore admissibility.

    Candidates: the continuous-only solve, and each discrete action paired
    with a re-solved continuous part. Ties break toward the
    lexicographically smallest continuous delta, then fewer discrete
    actions. Infeasible instances return the least-worst-residual candidate
    flagged ``feasible=False``.
    """
    margins, A, specs = _constraint_rows(y, constraint_set, cfg.effect_matrix)
    w = cfg.weight_vector()
    if delta_box is None:
        lo, hi = cfg.action_box.delta_bounds(InterventionVector.zero())
    else:
        lo, hi = delta_box
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lo.size != len(CONTINUOUS_KNOBS) or hi.size != len(CONTINUOUS_KNOBS):
        raise DimensionMismatch("delta box must cover every continuous knob")
    if np.any(lo > hi):
        raise DimensionMismatch("empty delta action box")
    if discrete_actions is None:
        discrete_actions = cfg.discrete_actions

    def predicted(v, action):
        out = {}
        for spec_i, spec in enumerate(specs):
            base = y.values[spec.signal_id]
            shift = float(np.array([cfg.effect_matrix.get(spec.signal_id, {}).get(k, 0.0)
                                    for k in CONTINUOUS_KNOBS]) @ v)
            if action is not None:
                shift += float(action.effects.get(spec.signal_id, 0.0))
            out[spec.signal_id] = base + shift
        return out

    if margins.size and np.all(margins >= 0.0):
        return SolveResult(delta_u=InterventionVector.delta(), cost=0.0, feasible=True,
                           predicted_signals=predicted(np.zeros(len(CONTINUOUS_KNOBS)), None))
    if margins.size == 0:
        return SolveResult(delta_u=InterventionVector.delta(), cost=0.0, feasible=True,
                           predicted_signals={})

    mean_w = float(w.mean())
    candidates = []
    for action in [None] + list(discrete_actions):
        m = margins.copy()
        if action is not None:
            for i, spec in enumerate(specs):
                effect = float(action.effects.get(spec.signal_id, 0.0))
                m[i] += (-effect if spec.direction.value == "upper" else effect)
        v = _pgd_continuous(m, A, w, lo, hi)
        post = m + A @ v
        feasible = bool(np.all(post >= 0.0))
        worst = float(max(0.0, -post.min())) if post.size else 0.0
        cost = float(v @ (w * v)) + (action.cost * mean_w if action is not None else 0.0)
        candidates.append((feasible, cost, tuple(v), action, worst))

    feasible_c = [c for c in candidates if c[0]]
    pool = feasible_c if feasible_c else candidates
    if feasible_c:
        pool.sort(key=lambda c: (c[1], c[2], c[3] is not None))
    else:
        pool.sort(key=lambda c: (c[4], c[1], c[2], c[3] is not None))
    feasible, cost, v, action, worst = pool[0]

    knobs = dict(zip(CONTINUOUS_KNOBS, v))
    slow = {}
    names = ()
    if action is not None:
        names = (action.name,)
        if action.name == "rollback":
            slow["rollback_to"] = action.target
        elif action.name == "retrain":
            slow["retrain"] = True
    delta = InterventionVector.delta(**knobs, **slow)
    return SolveResult(delta_u=delta, cost=cost, feasible=feasible,
                       predicted_signals=predicted(np.asarray(v), action),
                       discrete=names, worst_residual=worst)


# ---------------------------------------------------------------------------
# per-tick policy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PolicyOutcome:
    fast_delta: InterventionVector
    auto_proposals: tuple = ()
    escalation: Optional[MitigationProposal] = None


def policy_step(history, barriers: BarrierVector, cfg: SupervisorConfig,
                constraint_set: ConstraintSet, tick: int,
                current_u: InterventionVector,
                pending_live: bool = False,
                registry=None) -> PolicyOutcome:
    """Rule-table fast actuation plus boundary-time escalation.

    ``history`` is the signal-vector history y_{0:t}; rules consult the
    newest entry. Escalation proposals are created at governance-cycle
    boundaries, covering every currently-breached escalation-severity
    signal, and only when no pending proposal is already live.
    """
    y = history[-1]
    knob_deltas = {k: 0.0 for k in CONTINUOUS_KNOBS}
    fast_signals = []
    for entry in barriers.breached():
        if entry.severity == Severity.FAST_ACTUATION:
            rule = cfg.fast_rule_for(entry.signal_id)
            if rule is not None:
                knob_deltas[rule.knob] += rule.delta
                fast_signals.append(entry.signal_id)

    if cfg.reliance_rule is not None and y.status.get("r_t") == VALID:
        r_t = y.values["r_t"]
        dr = y.values.get("dr_dt", 0.0) if y.status.get("dr_dt") == VALID else 0.0
        if r_t > cfg.kappa["r_max"] or dr > cfg.kappa["delta_r"]:
            knob_deltas[cfg.reliance_rule.knob] += cfg.reliance_rule.delta
            fast_signals.append("r_t")

    # clamp the delta so the resulting absolute state stays inside the box
    lo, hi = cfg.action_box.delta_bounds(current_u)
    for j, k in enumerate(CONTINUOUS_KNOBS):
        knob_deltas[k] = min(max(knob_deltas[k], lo[j]), hi[j])
    fast_delta = InterventionVector.delta(**knob_deltas)

    auto = ()
    if not fast_delta.is_zero_delta():
        auto = (MitigationProposal(
            id=f"p{tick:06d}-fast",
            created_tick=tick,
            breach_signals=tuple(dict.fromkeys(fast_signals)),
            delta_u=fast_delta,
            predicted_signals={},
            cost=float(sum(cfg.weights[k] * d * d for k, d in knob_deltas.items())),
            status=ProposalStatus.AUTO_APPLIED,
            applied_tick=tick,
        ),)

    escalation = None
    esc_signals = tuple(e.signal_id for e in barriers.breached()
                        if e.severity == Severity.GOVERNANCE_ESCALATION)
    if esc_signals and cfg.is_boundary(tick) and not pending_live:
        actions = []
        for action in cfg.discrete_actions:
            if action.name == "rollback":
                target = action.target
                if target == "previous":
                    if registry is None or registry.active_version is None \
                            or registry.active_version < 2:
                        continue
                    target = registry.active_version - 1
                actions.append(replace(action, target=int(target)))
            else:
                actions.append(action)
        result = solve_mitigation(y, constraint_set, cfg,
                                  delta_box=cfg.action_box.delta_bounds(current_u),
                                  discrete_actions=actions)
        escalation = MitigationProposal(
            id=f"p{tick:06d}-esc",
            created_tick=tick,
            breach_signals=esc_signals,
            delta_u=result.delta_u,
            predicted_signals=result.predicted_signals,
            cost=result.cost,
            status=ProposalStatus.PENDING,
            deadline_tick=tick + cfg.proposal_deadline,
            infeasible=not result.feasible,
        )
    return PolicyOutcome(fast_delta=fast_delta, auto_proposals=auto, escalation=escalation)


# ---------------------------------------------------------------------------
# governance operators
# ---------------------------------------------------------------------------

def governance_decide(proposal: MitigationProposal, decision: str,
                      actor: GovernanceRole, constraints: ConstraintSet,
                      tick: int):
    """Approve/deny a pending proposal; returns (proposal', revised set or None)."""
    actor.require("approve_proposal")
    if proposal.status != ProposalStatus.PENDING:
        raise NotPending(f"proposal {proposal.id} is {proposal.status.value}")
    if proposal.deadline_tick is not None and tick > proposal.deadline_tick:
        raise PastDeadline(f"proposal {proposal.id} deadline {proposal.deadline_tick} < {tick}")
    if decision not in ("approve", "deny"):
        raise ValueError(f"decision must be approve|deny, got {decision!r}")
    if decision == "deny":
        return replace(proposal, status=ProposalStatus.DENIED,
                       decided_tick=tick, decided_by=actor.id), None
    revised = None
    if proposal.delta_u.constraint_revision:
        revised = revise_constraints(constraints, list(proposal.delta_u.constraint_revision), actor)
    return replace(proposal, status=ProposalStatus.APPROVED,
                   decided_tick=tick, decided_by=actor.id), revised


def file_harm_report(log, actor: GovernanceRole, tick: int, text: str,
                     group: Optional[str] = None):
    """Stakeholder Council harm report: an audited free-text annotation."""
    actor.require("file_harm_report")
    return log.append("HarmReport", tick, {
        "type": "harm_report", "actor_id": actor.id, "text": text, "group": group})


def open_appeal(log, actor: GovernanceRole, tick: int, decision_ref: str, text: str):
    """Redress Officer opens an appeal record against a decision."""
    actor.require("manage_appeals")
    return log.append("HarmReport", tick, {
        "type": "appeal_opened", "actor_id": actor.id,
        "decision_ref": decision_ref, "text": text})


def close_appeal(log, actor: GovernanceRole, tick: int, decision_ref: str,
                 resolution: str):
    actor.require("manage_appeals")
    return log.append("HarmReport", tick, {
        "type": "appeal_closed", "actor_id": actor.id,
        "decision_ref": decision_ref, "resolution": resolution})


@dataclass(frozen=True)
class SlowApplication:
    proposal_id: str
    rolled_back_to: Optional[int] = None
    new_active_version: Optional[int] = None
    retrained_version: Optional[int] = None
    constraint_generation: Optional[int] = None


def apply_slow(proposal: MitigationProposal, registry, constraints: ConstraintSet,
               cfg: SupervisorConfig, tick: int,
               retrain_fn: Optional[Callable] = None):
    """Apply the approved slow components at a governance-cycle boundary."""
    if not cfg.is_boundary(tick):
        raise NotCycleBoundary(f"tick {tick} is not a governance boundary")
    if proposal.status != ProposalStatus.APPROVED:
        raise NotPending(f"proposal {proposal.id} is not approved")
    delta = proposal.delta_u
    rolled_to = None
    new_version = None
    retrained = None
    if delta.rollback_to is not None:
        model = registry.rollback(int(delta.rollback_to))
        rolled_to = int(delta.rollback_to)
        new_version = model.version
    if delta.retrain:
        if retrain_fn is None:
            raise ParseError("retrain approved but no trainer wired")
        retrained = retrain_fn().version
        new_version = retrained
    generation = constraints.generation if proposal.delta_u.constraint_revision else None
    return SlowApplication(
        proposal_id=proposal.id,
        rolled_back_to=rolled_to,
        new_active_version=new_version,
        retrained_version=retrained,
        constraint_generation=generation,
    )
