"""Deterministic simulated socio-technical plant.

The plant advances tick by tick, producing decision records through the
active model version: per decision it samples a group, a ground-truth label
and a feature vector whose separation is the group's skill, scores it with
the active model, gates on uncertainty, and samples user behavior from the
latent reliance level modulated by the intervention state. Scheduled
disturbances perturb the generative parameters; the observation channel
adds clamped Gaussian noise to the human-interaction fields.

All randomness flows from numpy PCG64 generators seeded by
``SeedSequence(scenario.seed).spawn(...)``, one child stream per channel
(plant, observation, audit sampling, dataset), so a (scenario, seed) pair
fully determines every trace. The reliance ramp/decay dynamics are an
invented process: the latent level moves additively along scheduled ramps
and decays in proportion to applied interface friction.
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np
import yaml

from .errors import HorizonExceeded, ParseError
from .interventions import InterventionVector
from .monitors import DecisionRecord, MonitorConfig, AutonomyMode
from .safeguards import GateConfig, ModelRegistry, uncertainty_gate


class DisturbanceKind(str, Enum):
    COVARIATE_SHIFT = "covariate_shift"
    LABEL_SHIFT = "label_shift"
    RELIANCE_RAMP = "reliance_ramp"
    ADVERSARIAL_SPOOF = "adversarial_spoof"


@dataclass(frozen=True)
class DisturbanceEvent:
    at_tick: int
    kind: DisturbanceKind
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.at_tick < 0:
            raise ParseError("disturbance at_tick must be >= 0")


_BEHAVIOR_DEFAULTS = {
    "auto_gain": 0.3,             # automation propensity per unit reliance
    "friction_damp": 0.3,         # automation damping per unit friction
    "override_gain": 0.5,         # override propensity per unit (1 - reliance)
    "p_forced": 0.01,
    "p_irreversible": 0.01,
    "p_scored": 0.6,
    "clarity_mean": 0.86,
    "clarity_sd": 0.08,
    "t_switch_mean": 2.0,
    "t_switch_sd": 0.4,
    "t_explain_mean": 3.0,
    "t_explain_sd": 0.6,
    "tlx_mean": 40.0,
    "tlx_sd": 6.0,
    "influence_base": 0.25,
    "influence_reliance_gain": 0.5,
    "friction_time_gain": 0.5,    # t_switch/t_explain multiplier per unit friction
    "friction_tlx_gain": 10.0,
    "friction_reliance_decay": 0.002,
}


@dataclass
class Scenario:
    name: str
    seed: int
    horizon: int
    groups: list
    decisions_per_tick: int
    constraint_spec: dict                 # loaded spec document
    calibration_window: int = 100
    observation_noise_std: float = 0.0
    group_weights: list = None
    base_rate: dict = None
    skill: dict = None
    reliance_level: float = 0.5
    behavior: dict = None
    models: list = None                   # [{"name", "theta"}], last is active
    gate: GateConfig = None
    monitors: MonitorConfig = None
    disturbances: list = field(default_factory=list)
    supervisor: dict = field(default_factory=dict)
    dataset: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    path: Path = None

    def __post_init__(self):
        if self.horizon <= self.calibration_window:
            raise ParseError("horizon must exceed the calibration window")
        if self.group_weights is None:
            self.group_weights = [1.0 / len(self.groups)] * len(self.groups)
        if len(self.group_weights) != len(self.groups):
            raise ParseError("group_weights must match groups")
        if self.base_rate is None:
            self.base_rate = {g: 0.3 for g in self.groups}
        if self.skill is None:
            self.skill = {g: 2.5 for g in self.groups}
        behavior = dict(_BEHAVIOR_DEFAULTS)
        behavior.update(self.behavior or {})
        self.behavior = behavior
        if self.gate is None:
            self.gate = GateConfig(tau_u=0.85)
        if self.monitors is None:
            self.monitors = MonitorConfig()
        if self.models is None:
            # default linear model: informative x1, ignore x2, mild bias
            d = 2 + (len(self.groups) - 1) + 1
            theta = [1.5] + [0.0] * (d - 2) + [-0.6]
            self.models = [{"name": "default", "theta": theta}]

    @property
    def feature_dim(self) -> int:
        return 2 + (len(self.groups) - 1) + 1


def load_scenario(path) -> Scenario:
    """Load a scenario YAML file, resolving the constraint-spec reference."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ParseError(f"unparseable scenario {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"scenario {path} must be a mapping")

    spec_ref = doc.get("constraint_spec")
    if isinstance(spec_ref, str):
        spec_doc = yaml.safe_load((path.parent / spec_ref).read_text(encoding="utf-8"))
    elif isinstance(spec_ref, dict):
        spec_doc = spec_ref
    else:
        raise ParseError("scenario needs a constraint_spec (path or inline mapping)")

    plant = doc.get("plant") or {}
    monitors_doc = doc.get("monitors") or {}
    mon = MonitorConfig(
        window_len=int(monitors_doc.get("window_len", 200)),
        min_samples=int(monitors_doc.get("min_samples", 25)),
        bins=int(monitors_doc.get("bins", 10)),
        cb_weights=tuple(monitors_doc.get("cb_weights", (1.0, 1.0, 1.0))),
        reliance_coeffs=tuple(monitors_doc.get("reliance_coeffs", (0.5, 0.3, 0.2))),
        smoothing_k=int(monitors_doc.get("smoothing_k", 5)),
        autonomy_mode=AutonomyMode(monitors_doc.get("autonomy_mode", "decision")),
        audit_sample_rate=float(monitors_doc.get("audit_sample_rate", 1.0)),
    )
    gate_doc = doc.get("gate") or {}
    gate = GateConfig(tau_u=float(gate_doc.get("tau_u", 0.85)),
                      tau_h=float(gate_doc.get("tau_h", 0.5)))
    disturbances = [
        DisturbanceEvent(at_tick=int(d["at_tick"]),
                         kind=DisturbanceKind(d["kind"]),
                         params=dict(d.get("params") or {}))
        for d in doc.get("disturbances") or []
    ]
    return Scenario(
        name=str(doc.get("name", path.stem)),
        seed=int(doc["seed"]),
        horizon=int(doc["horizon"]),
        groups=list(doc["groups"]),
        decisions_per_tick=int(doc.get("decisions_per_tick", 16)),
        constraint_spec=spec_doc,
        calibration_window=int(doc.get("calibration_window", 100)),
        observation_noise_std=float(doc.get("observation_noise_std", 0.0)),
        group_weights=doc.get("group_weights"),
        base_rate=plant.get("base_rate"),
        skill=plant.get("skill"),
        reliance_level=float(plant.get("reliance_level", 0.5)),
        behavior=plant.get("behavior"),
        models=doc.get("models"),
        gate=gate,
        monitors=mon,
        disturbances=disturbances,
        supervisor=dict(doc.get("supervisor") or {}),
        dataset=dict(doc.get("dataset") or {}),
        train=dict(doc.get("train") or {}),
        path=path,
    )


@dataclass
class PlantState:
    tick: int
    base_rate: dict
    skill: dict
    feature_shift: dict
    reliance_level: float
    drift_phase: str
    active_model_version: int
    intervention: InterventionVector


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


class Plant:
    """Single-driver simulation; snapshots handed out are copies."""

    def __init__(self, scenario: Scenario, registry: ModelRegistry = None, seed_streams=None):
        self.scenario = scenario
        self.registry = registry or build_registry(scenario)
        if seed_streams is None:
            seed_streams = np.random.SeedSequence(scenario.seed).spawn(4)
        self._rng = np.random.Generator(np.random.PCG64(seed_streams[0]))
        self.observe_rng = np.random.Generator(np.random.PCG64(seed_streams[1]))
        self.audit_seed = seed_streams[2].entropy if hasattr(seed_streams[2], "entropy") else 0
        self._audit_stream = seed_streams[2]
        self._reliance0 = scenario.reliance_level
        self._ramps = []   # (start, length, per_tick)
        self._spoof_until = -1
        self._spoof_boost = 0.0
        self.state = PlantState(
            tick=0,
            base_rate=dict(scenario.base_rate),
            skill=dict(scenario.skill),
            feature_shift={g: 0.0 for g in scenario.groups},
            reliance_level=scenario.reliance_level,
            drift_phase="nominal",
            active_model_version=self.registry.active_version,
            intervention=InterventionVector.zero(),
        )

    # -- dynamics ----------------------------------------------------------

    def _apply_disturbances(self, tick: int):
        st = self.state
        for event in self.scenario.disturbances:
            if event.at_tick != tick:
                continue
            p = event.params
            if event.kind == DisturbanceKind.COVARIATE_SHIFT:
                group = p["group"]
                st.feature_shift[group] = st.feature_shift.get(group, 0.0) + float(p.get("feature_shift", 0.0))
                st.skill[group] = st.skill[group] + float(p.get("skill_delta", 0.0))
                st.drift_phase = p.get("phase", "covariate_shift")
            elif event.kind == DisturbanceKind.LABEL_SHIFT:
                group = p["group"]
                st.base_rate[group] = min(max(st.base_rate[group] + float(p.get("delta", 0.0)), 0.0), 1.0)
                st.drift_phase = p.get("phase", "label_shift")
            elif event.kind == DisturbanceKind.RELIANCE_RAMP:
                length = int(p.get("length", 1))
                self._ramps.append((tick, length, float(p.get("delta", 0.0)) / length))
            elif event.kind == DisturbanceKind.ADVERSARIAL_SPOOF:
                self._spoof_until = tick + int(p.get("length", 1))
                self._spoof_boost = float(p.get("influence_boost", 0.2))
                st.drift_phase = p.get("phase", "adversarial_spoof")

        for start, length, per_tick in self._ramps:
            if start <= tick < start + length:
                st.reliance_level += per_tick
        decay = self.scenario.behavior["friction_reliance_decay"]
        st.reliance_level -= decay * st.intervention.friction_level
        st.reliance_level = min(max(st.reliance_level, 0.0), 1.0)

    def step(self, u: InterventionVector):
        """Advance one tick under intervention state ``u``; returns records."""
        sc = self.scenario
        st = self.state
        if st.tick >= sc.horizon:
            raise HorizonExceeded(f"tick {st.tick} at horizon {sc.horizon}")
        st.intervention = u
        tick = st.tick
        self._apply_disturbances(tick)

        b = sc.behavior
        rng = self._rng
        theta = self.registry.get(st.active_model_version).theta
        gate_cfg = GateConfig(tau_u=max(0.0, sc.gate.tau_u + u.d_tau_u),
                              tau_h=sc.gate.tau_h, fallback=sc.gate.fallback)
        weights = np.cumsum(sc.group_weights) / sum(sc.group_weights)
        allowed_auto = int(math.floor(u.rate_limit * sc.decisions_per_tick))
        p_auto = b["auto_gain"] * st.reliance_level * (1.0 - u.human_review_rate) \
            * (1.0 - b["friction_damp"] * u.friction_level)
        p_auto = min(max(p_auto, 0.0), 1.0)
        spoof = self._spoof_boost if tick < self._spoof_until else 0.0
        influence = b["influence_base"] \
            + b["influence_reliance_gain"] * (st.reliance_level - self._reliance0) + spoof
        influence = min(max(influence, 0.0), 1.0)

        records = []
        auto_count = 0
        for _ in range(sc.decisions_per_tick):
            gi = int(np.searchsorted(weights, rng.random(), side="right"))
            gi = min(gi, len(sc.groups) - 1)
            group = sc.groups[gi]
            y = 1 if rng.random() < st.base_rate[group] else 0
            x1 = (2 * y - 1) * st.skill[group] / 2.0 + rng.standard_normal()
            x2 = st.feature_shift[group] + rng.standard_normal()
            x = np.zeros(sc.feature_dim)
            x[0], x[1] = x1, x2
            if gi > 0:
                x[1 + gi] = 1.0
            x[-1] = 1.0
            score = _sigmoid(float(theta @ x))
            uncertainty = 1.0 - abs(2.0 * score - 1.0)
            confidence = 1.0 - uncertainty
            outcome = uncertainty_gate(score, uncertainty, gate_cfg)
            if not outcome.delivered:
                automation_only = False
            elif auto_count < allowed_auto and rng.random() < p_auto:
                automation_only = True
                auto_count += 1
            else:
                automation_only = False
            if automation_only:
                overridden = False
                accepted = True
            else:
                overridden = rng.random() < b["override_gain"] * (1.0 - st.reliance_level)
                accepted = not overridden
            friction = u.friction_level
            t_switch = max(0.0, rng.normal(b["t_switch_mean"] * (1 + b["friction_time_gain"] * friction),
                                           b["t_switch_sd"]))
            t_explain = max(0.0, rng.normal(b["t_explain_mean"] * (1 + b["friction_time_gain"] * friction),
                                            b["t_explain_sd"]))
            tlx = min(max(rng.normal(b["tlx_mean"] + b["friction_tlx_gain"] * friction, b["tlx_sd"]), 0.0), 100.0)
            clarity_signal = min(max(rng.normal(b["clarity_mean"], b["clarity_sd"]), 0.0), 1.0)
            if rng.random() < b["p_scored"]:
                clarity_score = min(max(rng.normal(b["clarity_mean"], b["clarity_sd"]), 0.0), 1.0)
            else:
                clarity_score = None
            records.append(DecisionRecord(
                tick=tick,
                group_id=group,
                score=score,
                predicted_label=int(score >= 0.5),
                true_label=y,
                uncertainty=uncertainty,
                confidence=confidence,
                automation_only=automation_only,
                forced=rng.random() < b["p_forced"],
                irreversible=rng.random() < b["p_irreversible"],
                overridden=overridden,
                accepted=accepted,
                t_switch=t_switch,
                t_explain=t_explain,
                tlx=tlx,
                explanation_clarity_score=clarity_score,
                influence=influence,
                explanation_clarity_signal=clarity_signal,
            ))
        st.tick = tick + 1
        return records

    def snapshot(self) -> PlantState:
        st = self.state
        return replace(st, base_rate=dict(st.base_rate), skill=dict(st.skill),
                       feature_shift=dict(st.feature_shift))


# field -> noise scale multiplied by the scenario's observation_noise_std
_NOISE_SCALES = {"t_switch": 0.5, "t_explain": 0.5, "tlx": 5.0, "clarity": 0.05}


def observe(records, noise_std: float, rng) -> list:
    """Observation channel: seeded Gaussian noise on the human-interaction
    telemetry, clamped to valid ranges. ``noise_std = 0`` is the identity."""
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    if noise_std == 0.0:
        return list(records)
    out = []
    for rec in records:
        clarity_score = rec.explanation_clarity_score
        if clarity_score is not None:
            clarity_score = min(max(clarity_score + rng.normal(0.0, noise_std * _NOISE_SCALES["clarity"]), 0.0), 1.0)
        out.append(replace(
            rec,
            t_switch=max(0.0, rec.t_switch + rng.normal(0.0, noise_std * _NOISE_SCALES["t_switch"])),
            t_explain=max(0.0, rec.t_explain + rng.normal(0.0, noise_std * _NOISE_SCALES["t_explain"])),
            tlx=min(max(rec.tlx + rng.normal(0.0, noise_std * _NOISE_SCALES["tlx"]), 0.0), 100.0),
            explanation_clarity_score=clarity_score,
            explanation_clarity_signal=min(max(
                rec.explanation_clarity_signal + rng.normal(0.0, noise_std * _NOISE_SCALES["clarity"]), 0.0), 1.0),
        ))
    return out


def build_registry(scenario: Scenario) -> ModelRegistry:
    registry = ModelRegistry()
    for model in scenario.models:
        theta = np.asarray(model["theta"], dtype=float)
        if theta.shape[0] != scenario.feature_dim:
            raise ParseError(
                f"model {model.get('name')!r} has dim {theta.shape[0]}, "
                f"scenario needs {scenario.feature_dim}")
        registry.register(theta, origin="initial")
    return registry


# ---------------------------------------------------------------------------
# synthetic training data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SampleSet:
    X: np.ndarray
    y: np.ndarray
    group: np.ndarray  # integer codes


@dataclass(frozen=True)
class Dataset:
    train: SampleSet
    test: SampleSet
    groups: tuple

    @property
    def X(self):
        return self.train.X

    @property
    def y(self):
        return self.train.y

    @property
    def group(self):
        return self.train.group


def make_dataset(scenario: Scenario, n: int) -> Dataset:
    """Seeded synthetic dataset with a group-dependent FNR gap baked in.

    Feature layout matches the plant channel: [x1, x2, group one-hots, 1].
    The lower-skill group's positives sit closer to the boundary, so an
    unconstrained model misses them more often. Split 70/30 train/held-out.
    """
    if n <= 0:
        raise ValueError("n must be > 0")
    cfg = scenario.dataset
    sep = cfg.get("sep", scenario.skill)
    base_rate = cfg.get("base_rate", scenario.base_rate)
    seed_streams = np.random.SeedSequence(scenario.seed).spawn(4)
    rng = np.random.Generator(np.random.PCG64(seed_streams[3]))

    groups = list(scenario.groups)
    weights = np.asarray(scenario.group_weights, dtype=float)
    weights = weights / weights.sum()
    g = rng.choice(len(groups), size=n, p=weights)
    rates = np.array([base_rate[name] for name in groups])
    y = (rng.random(n) < rates[g]).astype(np.int8)
    seps = np.array([sep[name] for name in groups])
    x1 = (2 * y - 1) * seps[g] / 2.0 + rng.standard_normal(n)
    x2 = rng.standard_normal(n)
    X = np.zeros((n, scenario.feature_dim))
    X[:, 0] = x1
    X[:, 1] = x2
    for gi in range(1, len(groups)):
        X[:, 1 + gi] = (g == gi).astype(float)
    X[:, -1] = 1.0

    split = int(round(n * 0.7))
    train = SampleSet(X=X[:split], y=y[:split].astype(float), group=g[:split])
    test = SampleSet(X=X[split:], y=y[split:].astype(float), group=g[split:])
    return Dataset(train=train, test=test, groups=tuple(groups))
