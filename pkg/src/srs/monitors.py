"""Windowed telemetry -> responsibility signal vector -> barrier evaluation.

The window is a column store over decision records; every metric is a pure
numpy reduction over the records of the last ``window_len`` ticks, so
identical window contents give bit-identical signal vectors.

Signals (the closed registry constraints may bind):

    d_f      worst-group base-2 Jensen-Shannon divergence of the score
             distribution against the frozen calibration baseline
    a_p      autonomy preservation (decision- or interaction-level)
    c_b      weighted cognitive burden (switch time, explain time, TLX)
    e_c      mean explanation-comprehension score
    r_t      phenomenological reliance level
    dr_dt    backward-difference reliance trend
    fnr_gap  max pairwise false-negative-rate disparity across groups

``d_f``, ``e_c`` and ``fnr_gap`` degrade to an Insufficient status (never a
breach) when the window lacks samples.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .errors import (
    BinMismatch,
    EmptyWindow,
    MissingSignal,
    UnknownGroup,
)

SIGNAL_IDS = ("a_p", "c_b", "d_f", "dr_dt", "e_c", "fnr_gap", "r_t")
LOWER_BOUND_SIGNALS = frozenset({"a_p", "e_c"})


class _Insufficient:
    """Marker for metrics that lack the samples to be trustworthy."""

    __slots__ = ()

    def __repr__(self):
        return "Insufficient"


INSUFFICIENT = _Insufficient()


class AutonomyMode(str, Enum):
    DECISION = "decision"        # 1 - automation_only/total
    INTERACTION = "interaction"  # 1 - (forced + irreversible)/total


# ---------------------------------------------------------------------------
# records and window
# ---------------------------------------------------------------------------

@dataclass
class DecisionRecord:
    tick: int
    group_id: str
    score: float
    predicted_label: int
    true_label: Optional[int] = None
    uncertainty: float = 0.0
    confidence: float = 0.0
    automation_only: bool = False
    forced: bool = False
    irreversible: bool = False
    overridden: bool = False
    accepted: bool = True
    t_switch: float = 0.0
    t_explain: float = 0.0
    tlx: float = 0.0
    explanation_clarity_score: Optional[float] = None
    influence: float = 0.0
    explanation_clarity_signal: float = 0.0

    def __post_init__(self):
        if self.tick < 0:
            raise ValueError("tick must be non-negative")
        for name in ("score", "confidence", "influence"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.t_switch < 0 or self.t_explain < 0:
            raise ValueError("interaction times must be >= 0")

    def to_dict(self) -> dict:
        return {
            "tick": self.tick,
            "group_id": self.group_id,
            "score": self.score,
            "predicted_label": self.predicted_label,
            "true_label": self.true_label,
            "uncertainty": self.uncertainty,
            "confidence": self.confidence,
            "automation_only": self.automation_only,
            "forced": self.forced,
            "irreversible": self.irreversible,
            "overridden": self.overridden,
            "accepted": self.accepted,
            "t_switch": self.t_switch,
            "t_explain": self.t_explain,
            "tlx": self.tlx,
            "explanation_clarity_score": self.explanation_clarity_score,
            "influence": self.influence,
            "explanation_clarity_signal": self.explanation_clarity_signal,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionRecord":
        return cls(**d)


_FLOAT_COLS = (
    "score", "true_label", "uncertainty", "confidence", "t_switch",
    "t_explain", "tlx", "explanation_clarity_score", "influence",
    "explanation_clarity_signal",
)
_BOOL_COLS = ("automation_only", "forced", "irreversible", "overridden", "accepted", "audited")


class TelemetryWindow:
    """Rolling column store over decision records.

    Appends are single-writer (the runtime loop); reads slice numpy views of
    the last ``window_len`` ticks. History is retained for telemetry export;
    only the active span feeds metrics.
    """

    def __init__(self, window_len: int, min_samples: int = 25, bins: int = 10,
                 audit_sample_rate: float = 1.0, audit_seed: int = 0):
        if window_len < 1:
            raise ValueError("window_len must be >= 1")
        if not 0.0 < audit_sample_rate <= 1.0:
            raise ValueError("audit_sample_rate must be in (0, 1]")
        self.window_len = window_len
        self.min_samples = min_samples
        self.bins = bins
        self.audit_sample_rate = audit_sample_rate
        self.baseline_snapshot: dict = {}
        self.reliance_history: dict = {}
        self.groups: list = []
        self._group_index: dict = {}
        self._records: list = []
        self._cap = 1024
        self._n = 0
        self._tick = np.empty(self._cap, dtype=np.int64)
        self._group = np.empty(self._cap, dtype=np.int32)
        self._pred = np.empty(self._cap, dtype=np.int8)
        self._floats = {name: np.empty(self._cap) for name in _FLOAT_COLS}
        self._bools = {name: np.empty(self._cap, dtype=bool) for name in _BOOL_COLS}
        self._audit_rng = np.random.Generator(np.random.PCG64(audit_seed))

    def __len__(self):
        return self._n

    @property
    def records(self) -> list:
        """All retained records (exported telemetry order)."""
        return list(self._records)

    def _grow(self, needed: int):
        while self._cap < needed:
            self._cap *= 2
        self._tick = np.resize(self._tick, self._cap)
        self._group = np.resize(self._group, self._cap)
        self._pred = np.resize(self._pred, self._cap)
        for name in _FLOAT_COLS:
            self._floats[name] = np.resize(self._floats[name], self._cap)
        for name in _BOOL_COLS:
            self._bools[name] = np.resize(self._bools[name], self._cap)

    def append(self, records):
        for rec in records:
            if self._n and rec.tick < int(self._tick[self._n - 1]):
                raise ValueError("records must arrive in tick order")
            if self._n + 1 > self._cap:
                self._grow(self._n + 1)
            i = self._n
            gid = self._group_index.get(rec.group_id)
            if gid is None:
                gid = len(self.groups)
                self.groups.append(rec.group_id)
                self._group_index[rec.group_id] = gid
            self._tick[i] = rec.tick
            self._group[i] = gid
            self._pred[i] = rec.predicted_label
            f = self._floats
            f["score"][i] = rec.score
            f["true_label"][i] = math.nan if rec.true_label is None else rec.true_label
            f["uncertainty"][i] = rec.uncertainty
            f["confidence"][i] = rec.confidence
            f["t_switch"][i] = rec.t_switch
            f["t_explain"][i] = rec.t_explain
            f["tlx"][i] = rec.tlx
            f["explanation_clarity_score"][i] = (
                math.nan if rec.explanation_clarity_score is None
                else rec.explanation_clarity_score)
            f["influence"][i] = rec.influence
            f["explanation_clarity_signal"][i] = rec.explanation_clarity_signal
            b = self._bools
            b["automation_only"][i] = rec.automation_only
            b["forced"][i] = rec.forced
            b["irreversible"][i] = rec.irreversible
            b["overridden"][i] = rec.overridden
            b["accepted"][i] = rec.accepted
            b["audited"][i] = (self.audit_sample_rate >= 1.0
                               or self._audit_rng.random() < self.audit_sample_rate)
            self._records.append(rec)
            self._n += 1

    def _span(self):
        """(start, stop) row range covering the last window_len ticks."""
        if self._n == 0:
            return 0, 0
        newest = int(self._tick[self._n - 1])
        start = int(np.searchsorted(self._tick[:self._n], newest - self.window_len + 1, side="left"))
        return start, self._n

    def col(self, name: str) -> np.ndarray:
        start, stop = self._span()
        if name == "tick":
            return self._tick[start:stop]
        if name == "group":
            return self._group[start:stop]
        if name == "predicted_label":
            return self._pred[start:stop]
        if name in self._floats:
            return self._floats[name][start:stop]
        return self._bools[name][start:stop]

    def group_mask(self, group_id: str) -> np.ndarray:
        gid = self._group_index.get(group_id)
        if gid is None:
            raise UnknownGroup(f"group {group_id!r} never observed")
        return self.col("group") == gid

    def snapshot_baseline(self):
        """Freeze the per-group score distribution of the current span."""
        self.baseline_snapshot = {}
        for group in self.groups:
            dist = estimate_distribution(self, group, self.bins)
            if dist is not INSUFFICIENT:
                self.baseline_snapshot[group] = dist
        return self.baseline_snapshot


# ---------------------------------------------------------------------------
# distributions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiscreteDistribution:
    bins: tuple  # ((label, mass), ...)

    def __post_init__(self):
        labels = [b[0] for b in self.bins]
        masses = np.array([b[1] for b in self.bins], dtype=float)
        if len(set(labels)) != len(labels):
            raise ValueError("bin labels must be unique")
        if np.any(masses < 0):
            raise ValueError("masses must be >= 0")
        if abs(float(masses.sum()) - 1.0) > 1e-9:
            raise ValueError(f"masses sum to {masses.sum()}, not 1")

    @property
    def labels(self) -> tuple:
        return tuple(b[0] for b in self.bins)

    def masses(self) -> np.ndarray:
        return np.array([b[1] for b in self.bins], dtype=float)

    @classmethod
    def from_masses(cls, labels, masses) -> "DiscreteDistribution":
        return cls(tuple(zip(labels, (float(m) for m in masses))))


def estimate_distribution(window: TelemetryWindow, group: str, bins: int):
    """Smoothed score histogram for one group over the window.

    Returns INSUFFICIENT below ``window.min_samples`` qualifying records.
    Smoothing adds 1e-6 per bin and renormalizes, so no bin is ever empty.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    mask = window.group_mask(group) & window.col("audited")
    scores = window.col("score")[mask]
    if scores.size < window.min_samples:
        return INSUFFICIENT
    counts, _ = np.histogram(scores, bins=bins, range=(0.0, 1.0))
    masses = counts / counts.sum()
    masses = (masses + 1e-6) / (1.0 + bins * 1e-6)
    labels = [f"b{i:02d}" for i in range(bins)]
    return DiscreteDistribution.from_masses(labels, masses)


def jsd(p: DiscreteDistribution, q: DiscreteDistribution) -> float:
    """Base-2 Jensen-Shannon divergence; symmetric, in [0, 1], 0 iff p == q."""
    if set(p.labels) != set(q.labels):
        raise BinMismatch(f"bin labels differ: {p.labels} vs {q.labels}")
    pm = p.masses()
    order = {label: i for i, label in enumerate(p.labels)}
    qm = np.empty_like(pm)
    for label, mass in q.bins:
        qm[order[label]] = mass
    m = 0.5 * (pm + qm)
    with np.errstate(divide="ignore", invalid="ignore"):
        left = np.where(pm > 0, pm * np.log2(np.where(pm > 0, pm / m, 1.0)), 0.0)
        right = np.where(qm > 0, qm * np.log2(np.where(qm > 0, qm / m, 1.0)), 0.0)
    value = 0.5 * float(left.sum()) + 0.5 * float(right.sum())
    return min(max(value, 0.0), 1.0)


# ---------------------------------------------------------------------------
# signal metrics
# ---------------------------------------------------------------------------

def fairness_drift(window: TelemetryWindow):
    """Worst-group JSD between current and baseline score distributions."""
    if not window.baseline_snapshot:
        return INSUFFICIENT
    worst = None
    for group, baseline in window.baseline_snapshot.items():
        try:
            current = estimate_distribution(window, group, len(baseline.bins))
        except UnknownGroup:
            continue
        if current is INSUFFICIENT:
            continue
        d = jsd(current, baseline)
        if worst is None or d > worst:
            worst = d
    return INSUFFICIENT if worst is None else worst


def autonomy_preservation(window: TelemetryWindow,
                          mode: AutonomyMode = AutonomyMode.DECISION) -> float:
    total = window.col("tick").size
    if total == 0:
        raise EmptyWindow("autonomy_preservation over empty window")
    if mode == AutonomyMode.DECISION:
        lost = int(window.col("automation_only").sum())
    else:
        lost = int(window.col("forced").sum()) + int(window.col("irreversible").sum())
    return 1.0 - lost / total


def cognitive_burden(window: TelemetryWindow, weights) -> float:
    alpha, beta, gamma = (float(w) for w in weights)
    for w in (alpha, beta, gamma):
        if not math.isfinite(w) or w < 0:
            raise ValueError("burden weights must be finite and >= 0")
    if window.col("tick").size == 0:
        raise EmptyWindow("cognitive_burden over empty window")
    return (alpha * float(window.col("t_switch").mean())
            + beta * float(window.col("t_explain").mean())
            + gamma * float(window.col("tlx").mean()))


def explanation_clarity(window: TelemetryWindow):
    scores = window.col("explanation_clarity_score")
    scores = scores[~np.isnan(scores)]
    if scores.size < window.min_samples:
        return INSUFFICIENT
    return float(scores.mean())


def reliance(window: TelemetryWindow, coeffs, smoothing_k: int):
    """(r_t, dr_dt) from window means and the stored per-tick history."""
    if smoothing_k < 1:
        raise ValueError("smoothing_k must be >= 1")
    if window.col("tick").size == 0:
        raise EmptyWindow("reliance over empty window")
    alpha, beta, gamma = (float(c) for c in coeffs)
    r_t = (alpha * float(window.col("confidence").mean())
           + beta * float(window.col("explanation_clarity_signal").mean())
           + gamma * float(window.col("influence").mean()))
    tick = int(window.col("tick")[-1])
    window.reliance_history[tick] = r_t
    past = tick - smoothing_k
    if past in window.reliance_history:
        dr_dt = (r_t - window.reliance_history[past]) / smoothing_k
    else:
        earlier = [t for t in window.reliance_history if t < tick]
        if earlier:
            t0 = max(earlier)
            dr_dt = (r_t - window.reliance_history[t0]) / (tick - t0)
        else:
            dr_dt = 0.0
    return r_t, dr_dt


def fnr_gap(window: TelemetryWindow):
    """Max pairwise |FNR_i - FNR_j| over groups with enough positives."""
    true = window.col("true_label")
    pred = window.col("predicted_label")
    audited = window.col("audited")
    group = window.col("group")
    rates = []
    for gid in range(len(window.groups)):
        positives = (group == gid) & (true == 1.0) & audited
        n_pos = int(positives.sum())
        if n_pos < window.min_samples:
            continue
        misses = int((pred[positives] == 0).sum())
        rates.append(misses / n_pos)
    if len(rates) < 2:
        return INSUFFICIENT
    rates = np.array(rates)
    return float(np.max(rates) - np.min(rates))


# ---------------------------------------------------------------------------
# signal vector and barriers
# ---------------------------------------------------------------------------

VALID = "valid"
INSUFFICIENT_STATUS = "insufficient"


@dataclass(frozen=True)
class SignalVector:
    tick: int
    values: dict  # signal_id -> float (nan when insufficient)
    status: dict  # signal_id -> VALID | INSUFFICIENT_STATUS

    def __post_init__(self):
        for sid, st in self.status.items():
            if st == VALID and not math.isfinite(self.values[sid]):
                raise ValueError(f"signal {sid} flagged valid but not finite")

    def value(self, signal_id: str):
        if signal_id not in self.values:
            raise MissingSignal(f"signal {signal_id!r} not in vector")
        if self.status[signal_id] != VALID:
            return INSUFFICIENT
        return self.values[signal_id]

    @classmethod
    def build(cls, tick: int, **signals) -> "SignalVector":
        values, status = {}, {}
        for sid, raw in signals.items():
            if raw is INSUFFICIENT or raw is None:
                values[sid] = math.nan
                status[sid] = INSUFFICIENT_STATUS
            else:
                values[sid] = float(raw)
                status[sid] = VALID
        return cls(tick=tick, values=values, status=status)

    @property
    def d_f(self):
        return self.value("d_f")

    @property
    def a_p(self):
        return self.value("a_p")

    @property
    def c_b(self):
        return self.value("c_b")

    @property
    def e_c(self):
        return self.value("e_c")

    @property
    def r_t(self):
        return self.value("r_t")


@dataclass(frozen=True)
class BarrierEntry:
    constraint_id: str
    signal_id: str
    barrier: float          # signed margin; nan when insufficient
    breached: bool
    insufficient: bool
    severity: object        # valuespec.Severity
    threshold: float
    observed: float


@dataclass(frozen=True)
class BarrierVector:
    tick: int
    entries: dict  # signal_id -> BarrierEntry

    def breached(self) -> list:
        return [e for e in self.entries.values() if e.breached]

    def insufficient(self) -> list:
        return [e for e in self.entries.values() if e.insufficient]

    def all_admissible(self) -> bool:
        return not self.breached()


def evaluate_barriers(y: SignalVector, constraint_set) -> BarrierVector:
    """Signed margins of every active constraint against the signal vector.

    Upper bounds give ``threshold - signal``, lower bounds ``signal -
    threshold``; a breach is a strictly negative margin. Insufficient
    signals never breach; their entries carry the insufficient flag so the
    runtime can log them.
    """
    entries = {}
    for spec in constraint_set.active():
        if spec.signal_id not in y.values:
            raise MissingSignal(f"constraint {spec.id!r} needs signal {spec.signal_id!r}")
        observed = y.values[spec.signal_id]
        if y.status[spec.signal_id] != VALID:
            entries[spec.signal_id] = BarrierEntry(
                constraint_id=spec.id, signal_id=spec.signal_id,
                barrier=math.nan, breached=False, insufficient=True,
                severity=spec.severity, threshold=spec.threshold, observed=observed)
            continue
        if spec.direction.value == "upper":
            barrier = spec.threshold - observed
        else:
            barrier = observed - spec.threshold
        entries[spec.signal_id] = BarrierEntry(
            constraint_id=spec.id, signal_id=spec.signal_id,
            barrier=barrier, breached=barrier < 0.0, insufficient=False,
            severity=spec.severity, threshold=spec.threshold, observed=observed)
    return BarrierVector(tick=y.tick, entries=entries)


def admissible(y: SignalVector, constraint_set) -> bool:
    """True iff every active constraint with a valid signal is satisfied."""
    for spec in constraint_set.active():
        if spec.signal_id not in y.values:
            raise MissingSignal(f"constraint {spec.id!r} needs signal {spec.signal_id!r}")
        if y.status[spec.signal_id] != VALID:
            continue
        if not spec.satisfied_by(y.values[spec.signal_id]):
            return False
    return True


# ---------------------------------------------------------------------------
# per-tick evaluation
# ---------------------------------------------------------------------------

@dataclass
class MonitorConfig:
    window_len: int = 200
    min_samples: int = 25
    bins: int = 10
    cb_weights: tuple = (1.0, 1.0, 1.0)
    reliance_coeffs: tuple = (0.5, 0.3, 0.2)
    smoothing_k: int = 5
    autonomy_mode: AutonomyMode = AutonomyMode.DECISION
    audit_sample_rate: float = 1.0


class SignalEngine:
    """Evaluates the full signal vector once per tick."""

    def __init__(self, config: MonitorConfig, audit_seed: int = 0):
        self.config = config
        self.window = TelemetryWindow(
            window_len=config.window_len,
            min_samples=config.min_samples,
            bins=config.bins,
            audit_sample_rate=config.audit_sample_rate,
            audit_seed=audit_seed,
        )

    def observe(self, records):
        self.window.append(records)

    def evaluate(self, tick: int) -> SignalVector:
        cfg = self.config
        w = self.window
        if len(w) == 0 or w.col("tick").size == 0:
            return SignalVector.build(
                tick, d_f=INSUFFICIENT, a_p=INSUFFICIENT, c_b=INSUFFICIENT,
                e_c=INSUFFICIENT, r_t=INSUFFICIENT, dr_dt=INSUFFICIENT,
                fnr_gap=INSUFFICIENT)
        r_t, dr_dt = reliance(w, cfg.reliance_coeffs, cfg.smoothing_k)
        return SignalVector.build(
            tick,
            d_f=fairness_drift(w),
            a_p=autonomy_preservation(w, cfg.autonomy_mode),
            c_b=cognitive_burden(w, cfg.cb_weights),
            e_c=explanation_clarity(w),
            r_t=r_t,
            dr_dt=dr_dt,
            fnr_gap=fnr_gap(w),
        )
