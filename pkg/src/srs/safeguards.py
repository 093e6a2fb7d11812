"""Design-time and execution-time enforcement primitives.

Gates are pure predicates (deliver vs fallback). Training is full-batch
projected gradient descent on mean log-loss plus a smooth fairness penalty:
the penalty is the squared pairwise difference of group-mean sigmoid miss
rates on positives, a differentiable surrogate for the hard FNR gap (the
hard gap is piecewise constant, so its gradient is useless). The hard gap
is reported alongside in the trace.

Everything is deterministic given (dataset, config, seed); traces are
reproducible bit for bit.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .errors import DegenerateData, DimensionMismatch, NonFinite, UnknownVersion


class FallbackKind(str, Enum):
    HUMAN_REVIEW = "human_review"
    SAFE_DEFAULT = "safe_default"


@dataclass(frozen=True)
class GateConfig:
    tau_u: float = 0.3
    tau_h: float = 0.5
    fallback: FallbackKind = FallbackKind.HUMAN_REVIEW

    def __post_init__(self):
        if not (math.isfinite(self.tau_u) and math.isfinite(self.tau_h)):
            raise ValueError("gate thresholds must be finite")
        if self.tau_u < 0 or self.tau_h < 0:
            raise ValueError("gate thresholds must be >= 0")


@dataclass(frozen=True)
class GateOutcome:
    delivered: bool
    score: Optional[float] = None
    fallback: Optional[FallbackKind] = None


def uncertainty_gate(score: float, uncertainty: float, cfg: GateConfig) -> GateOutcome:
    """Deliver iff uncertainty <= tau_u (boundary delivers)."""
    if uncertainty < 0:
        raise ValueError("uncertainty must be >= 0")
    if uncertainty <= cfg.tau_u:
        return GateOutcome(delivered=True, score=score)
    return GateOutcome(delivered=False, fallback=cfg.fallback)


def harm_gate(expected_harm: float, cfg: GateConfig) -> GateOutcome:
    """Deliver iff expected harm <= tau_h (boundary delivers)."""
    if expected_harm < 0:
        raise ValueError("expected_harm must be >= 0")
    if expected_harm <= cfg.tau_h:
        return GateOutcome(delivered=True)
    return GateOutcome(delivered=False, fallback=cfg.fallback)


@dataclass(frozen=True)
class ConsensusResult:
    consistent: bool
    divergent_pair: Optional[tuple] = None


def consensus_check(beliefs, delta: float) -> ConsensusResult:
    """All pairwise Euclidean distances <= delta, or the first violating pair."""
    if delta < 0:
        raise ValueError("delta must be >= 0")
    vecs = [np.asarray(b, dtype=float) for b in beliefs]
    dims = {v.shape for v in vecs}
    if len(dims) > 1:
        raise DimensionMismatch(f"belief vectors disagree in shape: {dims}")
    for i in range(len(vecs)):
        for j in range(i + 1, len(vecs)):
            if float(np.linalg.norm(vecs[i] - vecs[j])) > delta:
                return ConsensusResult(consistent=False, divergent_pair=(i, j))
    return ConsensusResult(consistent=True)


def project_box(theta, lower, upper) -> np.ndarray:
    """Elementwise clamp onto [lower, upper]; idempotent."""
    theta = np.asarray(theta, dtype=float)
    lower = np.broadcast_to(np.asarray(lower, dtype=float), theta.shape)
    upper = np.broadcast_to(np.asarray(upper, dtype=float), theta.shape)
    if np.any(lower > upper):
        raise ValueError("box lower bound exceeds upper bound")
    return np.clip(theta, lower, upper)


# ---------------------------------------------------------------------------
# constrained training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ToyModel:
    theta: np.ndarray
    version: int
    feature_dim: int

    def __post_init__(self):
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("model parameters must be finite")
        if self.version < 1:
            raise ValueError("version must be >= 1")

    def scores(self, X: np.ndarray) -> np.ndarray:
        return _sigmoid(X @ self.theta)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return (self.scores(X) >= 0.5).astype(np.int8)


@dataclass(frozen=True)
class TrainConfig:
    eta: float = 0.1
    lam: float = 0.0
    epochs: int = 500
    epsilon_fnr: float = 0.05
    box_lower: float = -10.0
    box_upper: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be > 0")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if np.any(np.asarray(self.box_lower) > np.asarray(self.box_upper)):
            raise ValueError("box lower bound exceeds upper bound")


@dataclass
class TrainTrace:
    loss: list = field(default_factory=list)
    penalty: list = field(default_factory=list)
    soft_gap: list = field(default_factory=list)
    hard_gap: list = field(default_factory=list)
    theta: list = field(default_factory=list)
    aborted: bool = False

    def rows(self):
        for i in range(len(self.loss)):
            yield {"epoch": i, "loss": self.loss[i], "penalty": self.penalty[i],
                   "soft_gap": self.soft_gap[i], "hard_gap": self.hard_gap[i]}


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _log_loss(p: np.ndarray, y: np.ndarray) -> float:
    eps = 1e-12
    return float(-np.mean(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)))


def soft_fnr(theta, X, y, mask) -> float:
    """Group-mean sigmoid miss rate on positives: mean sigma(-theta.x)."""
    pos = mask & (y == 1)
    return float(_sigmoid(-(X[pos] @ theta)).mean())


def hard_fnr(theta, X, y, mask) -> float:
    pos = mask & (y == 1)
    return float(((X[pos] @ theta) < 0).mean())


def hard_fnr_gap(theta, X, y, group_masks) -> float:
    rates = [hard_fnr(theta, X, y, m) for m in group_masks]
    return max(rates) - min(rates)


def loss_and_grad(theta, X, y, group_masks, lam):
    """(objective, gradient, parts) of L + lambda * F at theta.

    L is mean log-loss; F sums squared pairwise differences of group soft
    FNRs. Parts is (L, F, soft_gap) for tracing.
    """
    n = X.shape[0]
    p = _sigmoid(X @ theta)
    loss = _log_loss(p, y)
    grad_l = X.T @ (p - y) / n

    softs, grads = [], []
    for mask in group_masks:
        pos = mask & (y == 1)
        z = X[pos] @ theta
        s = _sigmoid(-z)
        softs.append(float(s.mean()))
        # d/dtheta mean sigma(-z) = mean(-sigma(-z) sigma(z) x)
        grads.append(-(s * _sigmoid(z)) @ X[pos] / pos.sum())
    penalty = 0.0
    grad_f = np.zeros_like(theta)
    for i in range(len(softs)):
        for j in range(i + 1, len(softs)):
            diff = softs[i] - softs[j]
            penalty += diff * diff
            grad_f += 2.0 * diff * (grads[i] - grads[j])
    soft_gap = max(softs) - min(softs) if softs else 0.0

    if lam == 0.0:
        return loss, grad_l, (loss, penalty, soft_gap)
    return loss + lam * penalty, grad_l + lam * grad_f, (loss, penalty, soft_gap)


def train_constrained(dataset, cfg: TrainConfig):
    """Projected-gradient training of the toy classifier.

    ``dataset`` needs X (n x d), y (n,), group (n, int codes) attributes.
    Returns (ToyModel, TrainTrace). With lam == 0 the update reduces exactly
    to plain projected gradient descent on the log-loss.
    """
    X = np.asarray(dataset.X, dtype=float)
    y = np.asarray(dataset.y, dtype=float)
    group = np.asarray(dataset.group)
    n_groups = int(group.max()) + 1 if group.size else 0
    if n_groups < 2:
        raise DegenerateData("need at least 2 groups")
    group_masks = [group == g for g in range(n_groups)]
    for g, mask in enumerate(group_masks):
        if not np.any(mask & (y == 1)) or not np.any(mask & (y == 0)):
            raise DegenerateData(f"group {g} lacks a label class")

    d = X.shape[1]
    lower = np.broadcast_to(np.asarray(cfg.box_lower, dtype=float), (d,))
    upper = np.broadcast_to(np.asarray(cfg.box_upper, dtype=float), (d,))
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    theta = project_box(rng.standard_normal(d) * 0.01, lower, upper)

    trace = TrainTrace()
    for _ in range(cfg.epochs):
        _, grad, (loss, penalty, soft_gap) = loss_and_grad(theta, X, y, group_masks, cfg.lam)
        new_theta = project_box(theta - cfg.eta * grad, lower, upper)
        if not np.all(np.isfinite(new_theta)):
            trace.aborted = True
            model = ToyModel(theta=theta.copy(), version=1, feature_dim=d)
            raise NonFinite("training diverged", last_model=model, trace=trace)
        theta = new_theta
        trace.loss.append(loss)
        trace.penalty.append(cfg.lam * penalty)
        trace.soft_gap.append(soft_gap)
        trace.hard_gap.append(hard_fnr_gap(theta, X, y, group_masks))
        trace.theta.append(theta.copy())

    return ToyModel(theta=theta, version=1, feature_dim=d), trace


# ---------------------------------------------------------------------------
# model registry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegistryEntry:
    version: int
    theta: np.ndarray
    origin: str          # "initial" | "trained" | "rollback"
    source_version: Optional[int] = None  # for rollbacks


class ModelRegistry:
    """Versioned parameter store; rollback appends, never rewrites."""

    def __init__(self):
        self._entries: list = []
        self.active_version: Optional[int] = None

    def __len__(self):
        return len(self._entries)

    def register(self, theta, origin: str = "trained",
                 source_version: Optional[int] = None) -> RegistryEntry:
        theta = np.array(theta, dtype=float, copy=True)
        entry = RegistryEntry(version=len(self._entries) + 1, theta=theta,
                              origin=origin, source_version=source_version)
        self._entries.append(entry)
        self.active_version = entry.version
        return entry

    def get(self, version: int) -> RegistryEntry:
        if not 1 <= version <= len(self._entries):
            raise UnknownVersion(f"no model version {version}")
        return self._entries[version - 1]

    def active(self) -> ToyModel:
        entry = self.get(self.active_version)
        return ToyModel(theta=entry.theta.copy(), version=entry.version,
                        feature_dim=entry.theta.shape[0])

    def rollback(self, target_version: int) -> ToyModel:
        """Reactivate stored parameters by appending a new registry entry."""
        target = self.get(target_version)
        entry = self.register(target.theta, origin="rollback",
                              source_version=target.version)
        return ToyModel(theta=entry.theta.copy(), version=entry.version,
                        feature_dim=entry.theta.shape[0])

    @property
    def entries(self) -> list:
        return list(self._entries)
