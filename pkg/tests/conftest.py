import numpy as np
import pytest

from srs.monitors import DecisionRecord, MonitorConfig, TelemetryWindow
from srs.plant import Scenario
from srs.safeguards import GateConfig

SPEC_DOC = {
    "values": [
        {"id": "equity", "subcomponents": ["error_parity"]},
        {"id": "autonomy", "subcomponents": ["choice"]},
        {"id": "transparency", "subcomponents": ["clarity", "workload"]},
    ],
    "constraints": [
        {"id": "df-cap", "value": "equity", "signal": "d_f",
         "threshold": 0.05, "severity": "governance_escalation"},
        {"id": "ap-floor", "value": "autonomy", "signal": "a_p",
         "threshold": 0.80, "severity": "governance_escalation"},
        {"id": "ec-floor", "value": "transparency", "signal": "e_c",
         "threshold": 0.80, "severity": "advisory"},
        {"id": "cb-cap", "value": "transparency", "signal": "c_b",
         "threshold": "baseline", "severity": "advisory"},
    ],
    "calibration": {"window": 100, "slack": 1.2},
}


def record(tick=0, group="a", score=0.5, **kw):
    defaults = dict(
        tick=tick, group_id=group, score=score,
        predicted_label=int(score >= 0.5), true_label=None,
        uncertainty=1.0 - abs(2 * score - 1.0), confidence=abs(2 * score - 1.0),
    )
    defaults.update(kw)
    return DecisionRecord(**defaults)


def window_of(records, window_len=100, min_samples=5, bins=10, **kw):
    w = TelemetryWindow(window_len=window_len, min_samples=min_samples, bins=bins, **kw)
    w.append(records)
    return w


@pytest.fixture
def spec_doc():
    return {k: ([dict(x) for x in v] if isinstance(v, list) else dict(v))
            for k, v in SPEC_DOC.items()}


def tiny_scenario(**overrides) -> Scenario:
    base = dict(
        name="tiny", seed=5, horizon=160, groups=["a", "b"],
        decisions_per_tick=10, constraint_spec=SPEC_DOC, calibration_window=40,
        base_rate={"a": 0.3, "b": 0.3}, skill={"a": 3.0, "b": 2.2},
        reliance_level=0.55,
        models=[{"name": "v1", "theta": [1.5, 0.05, 0.2, -0.8]},
                {"name": "v2", "theta": [1.5, 0.8, 0.2, -0.8]}],
        gate=GateConfig(tau_u=0.85),
        monitors=MonitorConfig(window_len=30, min_samples=10, bins=8),
        dataset={"n": 1200, "sep": {"a": 3.0, "b": 1.2},
                 "base_rate": {"a": 0.35, "b": 0.35}},
        train={"eta": 0.5, "epochs": 200, "lambda": 10.0, "seed": 3},
    )
    base.update(overrides)
    return Scenario(**base)


def rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))
