"""Responsibility supervisor runtime.

Compiles value constraints into monitorable signals, watches a simulated
socio-technical plant, detects admissibility breaches through barrier
functions, selects least-norm mitigations, and routes high-impact actions
through a role-gated governance workflow — with a hash-chained audit trail
behind everything.
"""

from .auditlog import AuditLog, replay, verify
from .interventions import ActionBox, InterventionVector
from .monitors import (
    AutonomyMode,
    BarrierVector,
    DecisionRecord,
    DiscreteDistribution,
    INSUFFICIENT,
    MonitorConfig,
    SignalEngine,
    SignalVector,
    TelemetryWindow,
    autonomy_preservation,
    cognitive_burden,
    estimate_distribution,
    evaluate_barriers,
    explanation_clarity,
    fairness_drift,
    fnr_gap,
    jsd,
    reliance,
)
from .plant import (
    DisturbanceEvent,
    DisturbanceKind,
    Plant,
    PlantState,
    Scenario,
    load_scenario,
    make_dataset,
    observe,
)
from .roles import GovernanceRole, Role
from .runtime import (
    QueueDecisions,
    RunReport,
    ScriptedDecisions,
    run_loop,
)
from .safeguards import (
    GateConfig,
    GateOutcome,
    ModelRegistry,
    ToyModel,
    TrainConfig,
    consensus_check,
    harm_gate,
    project_box,
    train_constrained,
    uncertainty_gate,
)
from .supervisor import (
    DiscreteAction,
    MitigationProposal,
    ProposalStatus,
    SupervisorConfig,
    apply_slow,
    governance_decide,
    policy_step,
    solve_mitigation,
)
from .valuespec import (
    ConstraintSet,
    ConstraintSpec,
    Direction,
    Severity,
    ValueDecl,
    active_constraints,
    compile_spec,
    revise_constraints,
    serialize,
    tighten,
)

__version__ = "0.1.0"
