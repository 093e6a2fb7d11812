"""Intervention vector: fast actuation knobs plus slow governance actions.

Fast knobs are continuous and may move every tick; slow components
(rollback, constraint revision, retraining) only ever apply through an
approved proposal at a governance-cycle boundary. The canonical knob order
is what every matrix/weight vector in the mitigation solver uses.
"""

from dataclasses import dataclass, field, replace
from typing import Optional

CONTINUOUS_KNOBS = ("d_tau_u", "human_review_rate", "rate_limit", "friction_level")


@dataclass(frozen=True)
class InterventionVector:
    d_tau_u: float = 0.0            # uncertainty-threshold delta (fast)
    human_review_rate: float = 0.0  # extra forced-review fraction (fast)
    rate_limit: float = 1.0         # automated-decision budget per tick (fast)
    friction_level: float = 0.0     # interface friction (fast)
    rollback_to: Optional[int] = None          # slow
    constraint_revision: tuple = ()            # slow; ConstraintSpec additions
    retrain: bool = False                      # slow

    @classmethod
    def zero(cls) -> "InterventionVector":
        return cls()

    @classmethod
    def delta(cls, **knobs) -> "InterventionVector":
        """A pure delta: rate_limit defaults to 0 here, not 1."""
        base = {"d_tau_u": 0.0, "human_review_rate": 0.0, "rate_limit": 0.0,
                "friction_level": 0.0}
        slow = {k: knobs.pop(k) for k in ("rollback_to", "constraint_revision", "retrain")
                if k in knobs}
        base.update(knobs)
        return cls(**base, **slow)

    def continuous(self) -> tuple:
        return tuple(getattr(self, k) for k in CONTINUOUS_KNOBS)

    def has_slow(self) -> bool:
        return self.rollback_to is not None or bool(self.constraint_revision) or self.retrain

    def is_zero_delta(self) -> bool:
        return all(v == 0.0 for v in self.continuous()) and not self.has_slow()

    def plus_delta(self, other: "InterventionVector", box: "ActionBox") -> "InterventionVector":
        """Absolute state after applying a delta, clamped to the box."""
        knobs = {k: getattr(self, k) + getattr(other, k) for k in CONTINUOUS_KNOBS}
        knobs = box.clamp(knobs)
        return replace(self, **knobs)

    def to_dict(self) -> dict:
        return {
            "d_tau_u": self.d_tau_u,
            "human_review_rate": self.human_review_rate,
            "rate_limit": self.rate_limit,
            "friction_level": self.friction_level,
            "rollback_to": self.rollback_to,
            "constraint_revision": [c.id for c in self.constraint_revision],
            "retrain": self.retrain,
        }


@dataclass(frozen=True)
class ActionBox:
    """Per-knob bounds of the admissible absolute intervention state."""

    lower: dict = field(default_factory=lambda: {
        "d_tau_u": -1.0, "human_review_rate": 0.0,
        "rate_limit": 0.05, "friction_level": 0.0})
    upper: dict = field(default_factory=lambda: {
        "d_tau_u": 1.0, "human_review_rate": 1.0,
        "rate_limit": 1.0, "friction_level": 1.0})

    def __post_init__(self):
        for k in CONTINUOUS_KNOBS:
            if self.lower[k] > self.upper[k]:
                raise ValueError(f"action box empty on {k}")

    def clamp(self, knobs: dict) -> dict:
        return {k: min(max(v, self.lower[k]), self.upper[k]) for k, v in knobs.items()}

    def delta_bounds(self, current: InterventionVector):
        """Bounds on a delta so that current + delta stays in the box."""
        lo = tuple(self.lower[k] - getattr(current, k) for k in CONTINUOUS_KNOBS)
        hi = tuple(self.upper[k] - getattr(current, k) for k in CONTINUOUS_KNOBS)
        return lo, hi

    @classmethod
    def from_dict(cls, spec: dict) -> "ActionBox":
        box = cls()
        lower = dict(box.lower)
        upper = dict(box.upper)
        for k, pair in (spec or {}).items():
            if k not in CONTINUOUS_KNOBS:
                raise ValueError(f"unknown intervention knob {k!r}")
            lower[k], upper[k] = float(pair[0]), float(pair[1])
        return cls(lower=lower, upper=upper)
