"""Compile declarative value/constraint documents into versioned constraint sets.

A spec document is human-editable YAML with three sections::

    values:
      - id: fairness
        name: fairness
        description: equal treatment across patient groups
        subcomponents: [error_parity, equal_access]
    constraints:
      - id: fairness-drift-cap
        value: fairness          # owning value id
        signal: d_f              # monitored signal id (see monitors.SIGNAL_IDS)
        bound: upper             # optional; each signal has a natural bound side
        threshold: 0.05          # number, or the string "baseline"
        severity: governance_escalation   # advisory | fast_actuation | governance_escalation
    calibration:
      window: 100                # ticks of unconstrained calibration
      slack: 1.2                 # baseline threshold = slack * measured mean

A ``"baseline"`` threshold compiles only when the caller supplies the
measured calibration value for that signal, so generation 1 always carries
concrete finite thresholds.

Revisions never mutate: they append new ConstraintSpec entries carrying
``supersedes`` links, so the stored history only ever grows while exactly
one constraint per (signal, bound side) stays active.
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional

import yaml

from .canonical import canonical_json
from .errors import BrokenSupersedes, DuplicateActive, ParseError, UnknownSignal
from .monitors import LOWER_BOUND_SIGNALS, SIGNAL_IDS
from .roles import GovernanceRole


class Direction(str, Enum):
    UPPER = "upper"
    LOWER = "lower"


class Severity(str, Enum):
    ADVISORY = "advisory"
    FAST_ACTUATION = "fast_actuation"
    GOVERNANCE_ESCALATION = "governance_escalation"


def natural_direction(signal_id: str) -> Direction:
    return Direction.LOWER if signal_id in LOWER_BOUND_SIGNALS else Direction.UPPER


@dataclass(frozen=True)
class ValueDecl:
    id: str
    name: str
    description: str
    subcomponents: tuple

    def __post_init__(self):
        if not self.subcomponents:
            raise ParseError(f"value {self.id!r} needs at least one subcomponent")


@dataclass(frozen=True)
class ConstraintSpec:
    id: str
    value_id: str
    signal_id: str
    direction: Direction
    threshold: float
    severity: Severity
    version: int = 1
    supersedes: Optional[str] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not math.isfinite(self.threshold):
            raise ParseError(f"constraint {self.id!r}: threshold must be finite")
        if self.version < 1:
            raise ParseError(f"constraint {self.id!r}: version must be >= 1")
        if self.signal_id not in SIGNAL_IDS:
            raise UnknownSignal(f"constraint {self.id!r} binds unknown signal {self.signal_id!r}")
        if self.direction != natural_direction(self.signal_id):
            raise ParseError(
                f"constraint {self.id!r}: signal {self.signal_id!r} only takes a "
                f"{natural_direction(self.signal_id).value} bound"
            )

    def satisfied_by(self, value: float) -> bool:
        if self.direction == Direction.UPPER:
            return value <= self.threshold
        return value >= self.threshold


@dataclass(frozen=True)
class ConstraintSet:
    values: tuple
    constraints: tuple
    generation: int
    created_by: str
    calibration: dict = field(default_factory=dict)

    def active(self) -> list:
        return active_constraints(self)

    def get(self, constraint_id: str) -> Optional[ConstraintSpec]:
        for spec in self.constraints:
            if spec.id == constraint_id:
                return spec
        return None


# ---------------------------------------------------------------------------
# compilation
# ---------------------------------------------------------------------------

_BASELINE = "baseline"


def _load_document(source) -> dict:
    if isinstance(source, dict):
        return source
    if isinstance(source, Path):
        source = source.read_text(encoding="utf-8")
    try:
        doc = yaml.safe_load(source)
    except yaml.YAMLError as exc:
        raise ParseError(f"unparseable spec document: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError("spec document must be a mapping")
    return doc


def _as_signal(raw) -> str:
    return str(raw).strip().lower()


def compile_spec(source, calibration_measurements=None) -> ConstraintSet:
    """Compile a spec document into a generation-1 ConstraintSet.

    ``calibration_measurements`` maps signal id -> measured calibration
    value; required for any constraint whose threshold is ``"baseline"``.
    """
    doc = _load_document(source)
    calibration = doc.get("calibration") or {}
    if not isinstance(calibration, dict):
        raise ParseError("calibration section must be a mapping")
    slack = float(calibration.get("slack", 1.2))

    values = []
    seen_values = set()
    for raw in doc.get("values") or []:
        if not isinstance(raw, dict) or "id" not in raw:
            raise ParseError(f"malformed value declaration: {raw!r}")
        vid = str(raw["id"])
        if vid in seen_values:
            raise ParseError(f"duplicate value id {vid!r}")
        seen_values.add(vid)
        values.append(ValueDecl(
            id=vid,
            name=str(raw.get("name", vid)),
            description=str(raw.get("description", "")),
            subcomponents=tuple(raw.get("subcomponents") or ()),
        ))

    constraints = []
    seen_ids = set()
    seen_bindings = set()
    for raw in doc.get("constraints") or []:
        if not isinstance(raw, dict):
            raise ParseError(f"malformed constraint entry: {raw!r}")
        try:
            cid = str(raw["id"])
            value_id = str(raw["value"])
            signal_id = _as_signal(raw["signal"])
            threshold = raw["threshold"]
        except KeyError as exc:
            raise ParseError(f"constraint entry missing field {exc}") from exc
        if cid in seen_ids:
            raise ParseError(f"duplicate constraint id {cid!r}")
        seen_ids.add(cid)
        if value_id not in seen_values:
            raise ParseError(f"constraint {cid!r} references undeclared value {value_id!r}")
        if signal_id not in SIGNAL_IDS:
            raise UnknownSignal(f"constraint {cid!r} binds unknown signal {signal_id!r}")
        direction = Direction(str(raw.get("bound", natural_direction(signal_id).value)).lower())
        if threshold == _BASELINE:
            if not calibration_measurements or signal_id not in calibration_measurements:
                raise ParseError(
                    f"constraint {cid!r}: baseline threshold needs a calibration "
                    f"measurement for {signal_id!r}"
                )
            threshold = slack * float(calibration_measurements[signal_id])
        else:
            try:
                threshold = float(threshold)
            except (TypeError, ValueError) as exc:
                raise ParseError(f"constraint {cid!r}: bad threshold {threshold!r}") from exc
        severity = Severity(str(raw.get("severity", "advisory")).lower())
        binding = (signal_id, direction)
        if binding in seen_bindings:
            raise DuplicateActive(f"two active constraints on {signal_id}/{direction.value}")
        seen_bindings.add(binding)
        constraints.append(ConstraintSpec(
            id=cid, value_id=value_id, signal_id=signal_id, direction=direction,
            threshold=threshold, severity=severity,
            metadata=dict(raw.get("metadata") or {}),
        ))

    return ConstraintSet(
        values=tuple(values),
        constraints=tuple(constraints),
        generation=1,
        created_by="initial",
        calibration={"window": int(calibration.get("window", 100)), "slack": slack},
    )


# ---------------------------------------------------------------------------
# revision and queries
# ---------------------------------------------------------------------------

def active_constraints(cset: ConstraintSet) -> list:
    """Non-superseded constraints in deterministic (signal, direction) order."""
    superseded = {c.supersedes for c in cset.constraints if c.supersedes}
    live = [c for c in cset.constraints if c.id not in superseded]
    return sorted(live, key=lambda c: (c.signal_id, c.direction.value, c.id))


def revise_constraints(current: ConstraintSet, additions, authority: GovernanceRole) -> ConstraintSet:
    """Append revised/new constraints under Governance Board authority."""
    authority.require("revise_constraints")
    known = {c.id: c for c in current.constraints}
    out = list(current.constraints)
    for spec in additions:
        if spec.id in known:
            raise ParseError(f"constraint id {spec.id!r} already exists")
        if spec.supersedes is not None:
            target = known.get(spec.supersedes)
            if target is None:
                raise BrokenSupersedes(f"{spec.id!r} supersedes nonexistent {spec.supersedes!r}")
            if spec.version <= target.version:
                raise ParseError(
                    f"{spec.id!r}: version {spec.version} must exceed superseded "
                    f"version {target.version}"
                )
        out.append(spec)
        known[spec.id] = spec
    revised = ConstraintSet(
        values=current.values,
        constraints=tuple(out),
        generation=current.generation + 1,
        created_by=authority.id,
        calibration=dict(current.calibration),
    )
    seen = set()
    for spec in active_constraints(revised):
        binding = (spec.signal_id, spec.direction)
        if binding in seen:
            raise DuplicateActive(f"two active constraints on {binding[0]}/{binding[1].value}")
        seen.add(binding)
    return revised


def tighten(current: ConstraintSet, constraint_id: str, new_threshold: float,
            authority: GovernanceRole, new_id: Optional[str] = None) -> ConstraintSet:
    """Convenience revision: supersede one constraint with a new threshold."""
    old = current.get(constraint_id)
    if old is None:
        raise BrokenSupersedes(f"no constraint {constraint_id!r}")
    spec = replace(
        old,
        id=new_id or f"{constraint_id}-v{old.version + 1}",
        threshold=new_threshold,
        version=old.version + 1,
        supersedes=old.id,
    )
    return revise_constraints(current, [spec], authority)


def edit_metadata(current: ConstraintSet, constraint_id: str, metadata: dict,
                  actor: GovernanceRole) -> ConstraintSet:
    """Compliance Officer annotation: supersede with identical bounds and
    new free-text metadata (external policy mapping lives here)."""
    actor.require("edit_constraint_metadata")
    old = current.get(constraint_id)
    if old is None:
        raise BrokenSupersedes(f"no constraint {constraint_id!r}")
    spec = replace(
        old,
        id=f"{constraint_id}-meta{old.version + 1}",
        metadata={**old.metadata, **{str(k): str(v) for k, v in metadata.items()}},
        version=old.version + 1,
        supersedes=old.id,
    )
    revised = ConstraintSet(
        values=current.values,
        constraints=current.constraints + (spec,),
        generation=current.generation + 1,
        created_by=actor.id,
        calibration=dict(current.calibration),
    )
    return revised


# ---------------------------------------------------------------------------
# canonical serialization (round-trips through compile_spec; hashed in audit)
# ---------------------------------------------------------------------------

def serialize(cset: ConstraintSet) -> str:
    """Canonical text form: active constraints only, stable order, 17-digit reals."""
    doc = {
        "calibration": {"slack": float(cset.calibration.get("slack", 1.2)),
                        "window": int(cset.calibration.get("window", 100))},
        "constraints": [
            {
                "id": c.id,
                "value": c.value_id,
                "signal": c.signal_id,
                "bound": c.direction.value,
                "threshold": float(c.threshold),
                "severity": c.severity.value,
                "metadata": dict(sorted(c.metadata.items())),
            }
            for c in active_constraints(cset)
        ],
        "values": [
            {
                "id": v.id,
                "name": v.name,
                "description": v.description,
                "subcomponents": list(v.subcomponents),
            }
            for v in sorted(cset.values, key=lambda v: v.id)
        ],
    }
    return canonical_json(doc)
