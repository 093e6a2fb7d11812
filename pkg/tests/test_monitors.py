import math

import numpy as np
import pytest

from conftest import record, rng, window_of
from srs.errors import BinMismatch, EmptyWindow, MissingSignal, UnknownGroup
from srs.monitors import (
    INSUFFICIENT,
    AutonomyMode,
    DiscreteDistribution,
    SignalVector,
    TelemetryWindow,
    admissible,
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
from srs.valuespec import compile_spec


# --- independent JSD oracle (scalar closed form, written before the
# implementation was exercised; the package path is vectorized numpy) -------

def jsd_oracle(p, q):
    total = 0.0
    for pi, qi in zip(p, q):
        mi = 0.5 * (pi + qi)
        if pi > 0:
            total += 0.5 * pi * math.log2(pi / mi)
        if qi > 0:
            total += 0.5 * qi * math.log2(qi / mi)
    return total


def dist(*masses, labels=None):
    labels = labels or [f"b{i:02d}" for i in range(len(masses))]
    return DiscreteDistribution.from_masses(labels, masses)


class TestJsd:
    def test_identity_zero(self):
        p = dist(0.25, 0.25, 0.5)
        assert jsd(p, p) == 0.0

    def test_disjoint_support_is_one(self):
        assert jsd(dist(1.0, 0.0), dist(0.0, 1.0)) == pytest.approx(1.0, abs=1e-12)

    def test_matches_oracle_frozen_case(self):
        # frozen from the oracle: jsd_oracle((0.5,0.5),(0.9,0.1))
        expected = jsd_oracle([0.5, 0.5], [0.9, 0.1])
        assert expected == pytest.approx(0.1467931024360521, abs=1e-12)
        assert jsd(dist(0.5, 0.5), dist(0.9, 0.1)) == pytest.approx(expected, abs=1e-9)

    def test_oracle_equivalence_random(self):
        r = rng(17)
        for _ in range(300):
            k = int(r.integers(2, 17))
            p = r.random(k) + 1e-9
            q = r.random(k) + 1e-9
            p /= p.sum()
            q /= q.sum()
            dp, dq = dist(*p), dist(*q)
            assert jsd(dp, dq) == pytest.approx(jsd_oracle(p, q), abs=1e-9)

    def test_symmetry_and_bounds(self):
        r = rng(23)
        for _ in range(200):
            k = int(r.integers(2, 12))
            p = r.random(k) + 1e-9
            q = r.random(k) + 1e-9
            p /= p.sum()
            q /= q.sum()
            dp, dq = dist(*p), dist(*q)
            a, b = jsd(dp, dq), jsd(dq, dp)
            assert a == pytest.approx(b, abs=1e-12)
            assert 0.0 <= a <= 1.0

    def test_bin_mismatch(self):
        with pytest.raises(BinMismatch):
            jsd(dist(1.0, 0.0), dist(1.0, 0.0, 0.0))

    def test_label_alignment_not_positional(self):
        p = DiscreteDistribution.from_masses(["x", "y"], [0.7, 0.3])
        q = DiscreteDistribution.from_masses(["y", "x"], [0.3, 0.7])
        assert jsd(p, q) == pytest.approx(0.0, abs=1e-12)


class TestDistribution:
    def test_all_mass_one_bin_smoothed(self):
        w = window_of([record(score=0.0) for _ in range(100)])
        d = estimate_distribution(w, "a", 2)
        masses = d.masses()
        assert masses[0] == pytest.approx(1.0 - 5e-7, abs=1e-6)
        assert masses[1] == pytest.approx(5e-7, abs=1e-6)
        assert masses.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(masses > 0)

    def test_insufficient_below_min_samples(self):
        w = window_of([record(score=0.5)], min_samples=5)
        assert estimate_distribution(w, "a", 4) is INSUFFICIENT

    def test_even_split(self):
        recs = [record(score=0.2) for _ in range(50)] + \
               [record(score=0.8) for _ in range(50)]
        w = window_of(recs)
        d = estimate_distribution(w, "a", 2)
        assert d.masses()[0] == pytest.approx(0.5, abs=1e-6)
        assert d.masses()[1] == pytest.approx(0.5, abs=1e-6)

    def test_unknown_group(self):
        w = window_of([record()])
        with pytest.raises(UnknownGroup):
            estimate_distribution(w, "ghost", 2)

    def test_validation(self):
        with pytest.raises(ValueError):
            DiscreteDistribution.from_masses(["a", "b"], [0.7, 0.7])
        with pytest.raises(ValueError):
            DiscreteDistribution.from_masses(["a", "a"], [0.5, 0.5])


class TestFairnessDrift:
    def build(self, scores_a, scores_b, min_samples=10):
        recs = [record(group="a", score=s) for s in scores_a]
        recs += [record(group="b", score=s) for s in scores_b]
        return window_of(recs, min_samples=min_samples, bins=4)

    def test_zero_when_equal_to_baseline(self):
        w = self.build([0.1] * 30 + [0.9] * 30, [0.5] * 30)
        w.snapshot_baseline()
        assert fairness_drift(w) == 0.0

    def test_single_drifted_group_dominates(self):
        r = rng(4)
        scores_a = list(r.random(200))
        scores_b = list(r.random(200))
        w = self.build(scores_a, scores_b)
        w.snapshot_baseline()
        # group b drifts: shifted scores arrive while the originals are
        # still inside the window span
        drifted = [record(tick=50, group="b", score=min(1.0, s * 0.3 + 0.7))
                   for s in r.random(200)]
        w.append(drifted)
        da = jsd(estimate_distribution(w, "a", 4), w.baseline_snapshot["a"])
        db = jsd(estimate_distribution(w, "b", 4), w.baseline_snapshot["b"])
        assert db > da
        assert fairness_drift(w) == pytest.approx(max(da, db), abs=1e-12)

    def test_insufficient_without_baseline(self):
        w = self.build([0.5] * 20, [0.5] * 20)
        assert fairness_drift(w) is INSUFFICIENT

    def test_insufficient_when_all_groups_below_min(self):
        w = self.build([0.5] * 20, [0.5] * 20)
        w.snapshot_baseline()
        w2 = window_of([record(tick=500, group="a", score=0.5)], min_samples=10, bins=4)
        w2.baseline_snapshot = w.baseline_snapshot
        assert fairness_drift(w2) is INSUFFICIENT


class TestAutonomy:
    def test_all_human_reviewed(self):
        w = window_of([record() for _ in range(10)])
        assert autonomy_preservation(w) == 1.0

    def test_twenty_of_hundred_auto(self):
        recs = [record(automation_only=(i < 20)) for i in range(100)]
        assert autonomy_preservation(window_of(recs)) == pytest.approx(0.8)

    def test_interaction_mode(self):
        recs = [record(forced=(i < 5), irreversible=(5 <= i < 10)) for i in range(100)]
        assert autonomy_preservation(window_of(recs), AutonomyMode.INTERACTION) \
            == pytest.approx(0.9)

    def test_empty_window(self):
        with pytest.raises(EmptyWindow):
            autonomy_preservation(TelemetryWindow(window_len=10))

    def test_adding_auto_record_never_increases(self):
        r = rng(9)
        recs = [record(automation_only=bool(r.integers(2))) for _ in range(50)]
        w = window_of(recs)
        before = autonomy_preservation(w)
        w.append([record(automation_only=True)])
        assert autonomy_preservation(w) <= before


class TestCognitiveBurden:
    def test_zero_weights(self):
        w = window_of([record(t_switch=5, t_explain=5, tlx=90)])
        assert cognitive_burden(w, (0, 0, 0)) == 0.0

    def test_unit_weights_sum_means(self):
        recs = [record(t_switch=2.0, t_explain=3.0, tlx=40.0) for _ in range(7)]
        assert cognitive_burden(window_of(recs), (1, 1, 1)) == pytest.approx(45.0)

    def test_hand_computed_ten_records(self):
        # means: t_switch 1.55, t_explain 2.9, tlx 42.1 (spreadsheet-style sums)
        switches = [1.0, 2.0, 1.5, 1.8, 1.2, 1.6, 1.4, 1.7, 1.3, 2.0]
        explains = [3.0, 2.5, 3.5, 2.0, 3.1, 2.9, 3.3, 2.7, 3.0, 3.0]
        tlxs = [40, 45, 38, 42, 44, 41, 43, 39, 46, 43]
        assert sum(switches) / 10 == pytest.approx(1.55)
        assert sum(explains) / 10 == pytest.approx(2.9)
        assert sum(tlxs) / 10 == pytest.approx(42.1)
        recs = [record(t_switch=s, t_explain=e, tlx=t)
                for s, e, t in zip(switches, explains, tlxs)]
        expected = 0.5 * 1.55 + 2.0 * 2.9 + 0.1 * 42.1
        assert cognitive_burden(window_of(recs), (0.5, 2.0, 0.1)) \
            == pytest.approx(expected, abs=1e-12)

    def test_weight_validation(self):
        w = window_of([record()])
        with pytest.raises(ValueError):
            cognitive_burden(w, (-1, 0, 0))


class TestClarity:
    def test_all_ones(self):
        recs = [record(explanation_clarity_score=1.0) for _ in range(10)]
        assert explanation_clarity(window_of(recs)) == 1.0

    def test_table_floor_case(self):
        recs = [record(explanation_clarity_score=0.6),
                record(explanation_clarity_score=1.0)] * 5
        assert explanation_clarity(window_of(recs)) == pytest.approx(0.8)

    def test_unscored_records_excluded_and_insufficient(self):
        recs = [record() for _ in range(30)]
        assert explanation_clarity(window_of(recs)) is INSUFFICIENT


class TestReliance:
    def test_projection_on_confidence(self):
        recs = [record(confidence=0.7) for _ in range(10)]
        r_t, dr = reliance(window_of(recs), (1, 0, 0), 5)
        assert r_t == pytest.approx(0.7)
        assert dr == 0.0

    def test_constant_history_zero_slope(self):
        w = TelemetryWindow(window_len=10, min_samples=1)
        for t in range(8):
            w.append([record(tick=t, confidence=0.6)])
            r_t, dr = reliance(w, (1, 0, 0), 3)
        assert dr == pytest.approx(0.0, abs=1e-12)

    def test_linear_ramp_recovers_slope(self):
        # confidence ramps 0.004/tick; window mean ramps at the same slope
        w = TelemetryWindow(window_len=5, min_samples=1)
        slope = 0.004
        dr = None
        for t in range(30):
            w.append([record(tick=t, confidence=0.3 + slope * t)])
            _, dr = reliance(w, (1, 0, 0), 5)
        assert dr == pytest.approx(slope, abs=1e-9)

    def test_empty_window(self):
        with pytest.raises(EmptyWindow):
            reliance(TelemetryWindow(window_len=4), (1, 0, 0), 1)


class TestFnrGap:
    def build(self, a_misses, a_pos, b_misses, b_pos):
        recs = []
        for i in range(a_pos):
            recs.append(record(group="a", true_label=1, score=0.2 if i < a_misses else 0.8,
                               predicted_label=0 if i < a_misses else 1))
        for i in range(b_pos):
            recs.append(record(group="b", true_label=1, score=0.2 if i < b_misses else 0.8,
                               predicted_label=0 if i < b_misses else 1))
        return window_of(recs, min_samples=10)

    def test_identical_behavior_zero(self):
        w = self.build(5, 50, 5, 50)
        assert fnr_gap(w) == pytest.approx(0.0)

    def test_exact_constructed_gap(self):
        # group a FNR 0.30 (15/50), group b FNR 0.10 (5/50) -> gap 0.20
        w = self.build(15, 50, 5, 50)
        assert fnr_gap(w) == pytest.approx(0.20, abs=1e-12)

    def test_group_without_positives_excluded(self):
        recs = []
        for i in range(40):
            recs.append(record(group="a", true_label=1,
                               predicted_label=0 if i < 12 else 1))
        for i in range(40):
            recs.append(record(group="b", true_label=1,
                               predicted_label=0 if i < 4 else 1))
        recs += [record(group="c", true_label=0) for _ in range(40)]
        w = window_of(recs, min_samples=10)
        assert fnr_gap(w) == pytest.approx(0.3 - 0.1, abs=1e-12)

    def test_insufficient_single_group(self):
        recs = [record(group="a", true_label=1) for _ in range(40)]
        assert fnr_gap(window_of(recs, min_samples=10)) is INSUFFICIENT


class TestBarriers:
    def cset(self, spec_doc):
        return compile_spec(spec_doc, calibration_measurements={"c_b": 45.0})

    def test_upper_bound_margin(self, spec_doc):
        y = SignalVector.build(0, d_f=0.02, a_p=0.9, e_c=0.9, c_b=40.0)
        b = evaluate_barriers(y, self.cset(spec_doc))
        assert b.entries["d_f"].barrier == pytest.approx(0.03)
        assert not b.entries["d_f"].breached

    def test_lower_bound_breach(self, spec_doc):
        y = SignalVector.build(0, d_f=0.02, a_p=0.79, e_c=0.9, c_b=40.0)
        b = evaluate_barriers(y, self.cset(spec_doc))
        assert b.entries["a_p"].barrier == pytest.approx(-0.01)
        assert b.entries["a_p"].breached

    def test_boundary_not_breached(self, spec_doc):
        y = SignalVector.build(0, d_f=0.05, a_p=0.80, e_c=0.80, c_b=54.0)
        b = evaluate_barriers(y, self.cset(spec_doc))
        assert not b.breached()

    def test_insufficient_never_breaches(self, spec_doc):
        y = SignalVector.build(0, d_f=INSUFFICIENT, a_p=0.5, e_c=0.9, c_b=40.0)
        b = evaluate_barriers(y, self.cset(spec_doc))
        assert b.entries["d_f"].insufficient
        assert not b.entries["d_f"].breached
        assert b.entries["a_p"].breached

    def test_missing_signal(self, spec_doc):
        y = SignalVector(tick=0, values={"d_f": 0.01}, status={"d_f": "valid"})
        with pytest.raises(MissingSignal):
            evaluate_barriers(y, self.cset(spec_doc))

    def test_admissibility_equivalence_property(self, spec_doc):
        cset = self.cset(spec_doc)
        r = rng(31)
        for _ in range(2000):
            y = SignalVector.build(
                0,
                d_f=float(r.random() * 0.1),
                a_p=float(r.random()),
                e_c=float(r.random()),
                c_b=float(r.random() * 100.0),
            )
            b = evaluate_barriers(y, cset)
            all_nonneg = all(e.barrier >= 0 for e in b.entries.values()
                             if not e.insufficient)
            assert all_nonneg == admissible(y, cset)

    def test_tightening_never_unbreaches(self, spec_doc):
        cset = self.cset(spec_doc)
        r = rng(37)
        from srs.roles import GovernanceRole, Role
        from srs.valuespec import tighten

        gb = GovernanceRole(Role.GOVERNANCE_BOARD, "gb")
        tighter = tighten(cset, "df-cap", 0.03, gb)
        for _ in range(500):
            y = SignalVector.build(0, d_f=float(r.random() * 0.1), a_p=0.9,
                                   e_c=0.9, c_b=40.0)
            before = evaluate_barriers(y, cset).entries["d_f"].breached
            after = evaluate_barriers(y, tighter).entries["d_f"].breached
            assert not (before and not after)


def test_determinism_bit_identical(spec_doc):
    r1, r2 = rng(5), rng(5)

    def build(r):
        recs = [record(tick=i // 4, group="ab"[int(r.integers(2))],
                       score=float(r.random()), t_switch=float(r.random() * 3),
                       tlx=float(r.random() * 80),
                       explanation_clarity_score=float(r.random()))
                for i in range(400)]
        w = window_of(recs, min_samples=10)
        w.snapshot_baseline()
        from srs.monitors import MonitorConfig, SignalEngine

        eng = SignalEngine(MonitorConfig(window_len=100, min_samples=10))
        eng.window = w
        return eng.evaluate(99)

    y1, y2 = build(r1), build(r2)
    assert y1.values == y2.values
    assert y1.status == y2.status


def test_audit_sampling_subsets_deep_metrics():
    recs = [record(group="a", score=0.3, true_label=1, predicted_label=0)
            for _ in range(200)]
    full = window_of(recs, min_samples=10, audit_sample_rate=1.0)
    half = window_of(recs, min_samples=10, audit_sample_rate=0.5, audit_seed=3)
    assert int(full.col("audited").sum()) == 200
    sampled = int(half.col("audited").sum())
    assert 60 < sampled < 140
    # deterministic given the seed
    half2 = window_of(recs, min_samples=10, audit_sample_rate=0.5, audit_seed=3)
    assert np.array_equal(half.col("audited"), half2.col("audited"))
