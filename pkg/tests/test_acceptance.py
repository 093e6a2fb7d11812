"""Acceptance suite: one test per release criterion, each printing a
pass/fail line with its runtime. Budgets are asserted, not aspirational.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import rng
from srs.auditlog import AuditLog, replay, verify
from srs.monitors import (
    DiscreteDistribution,
    SignalVector,
    admissible,
    evaluate_barriers,
    jsd,
)
from srs.plant import load_scenario, make_dataset
from srs.runtime import ScriptedDecisions, run_loop
from srs.safeguards import TrainConfig, hard_fnr_gap, loss_and_grad, train_constrained
from srs.supervisor import solve_mitigation
from srs.valuespec import compile_spec
from test_monitors import jsd_oracle
from test_safeguards import plain_gd_oracle
from test_supervisor import grid_oracle, random_instance

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def report(name, budget_s, started):
    elapsed = time.monotonic() - started
    print(f"\n[PASS] {name}  ({elapsed:.2f}s, budget {budget_s:.0f}s)")
    assert elapsed < budget_s, f"{name} exceeded its {budget_s}s budget ({elapsed:.2f}s)"


def test_scorecard_thresholds_no_disturbance(tmp_path):
    """Final scorecard of the seeded no-disturbance triage run passes every
    threshold: d_f <= 0.05 (base-2 JSD), a_p >= 0.80, e_c >= 0.80, c_b <=
    calibrated baseline."""
    t0 = time.monotonic()
    scenario = load_scenario(SCENARIOS / "triage_baseline.yaml")
    rep = run_loop(scenario, decision_source=ScriptedDecisions("approve_all"),
                   run_dir=tmp_path)
    rows = {r["signal"]: r for r in rep.scorecard}
    assert rows["d_f"]["threshold"] == 0.05 and rows["d_f"]["observed"] <= 0.05
    assert rows["a_p"]["threshold"] == 0.80 and rows["a_p"]["observed"] >= 0.80
    assert rows["e_c"]["threshold"] == 0.80 and rows["e_c"]["observed"] >= 0.80
    assert rows["c_b"]["observed"] <= rows["c_b"]["threshold"]
    assert all(r["status"] == "pass" for r in rep.scorecard)
    assert rep.exit_code == 0
    report("scorecard thresholds on no-disturbance scenario", 10, t0)


def test_worked_example_closed_loop(tmp_path):
    """approve_all: the audit log contains, in order, Breach(d_f),
    Breach(a_p), ProposalCreated carrying rollback + uncertainty-gate
    tightening, GovernanceDecision(approve), RollbackApplied; both signals
    re-admissible before the horizon. deny_all: breaches persist, exit 2."""
    t0 = time.monotonic()
    scenario = load_scenario(SCENARIOS / "triage_worked_example.yaml")
    rep = run_loop(scenario, decision_source=ScriptedDecisions("approve_all"),
                   run_dir=tmp_path / "approve")
    stages = []
    for e in replay(rep.audit_path):
        if e.kind == "Breach" and e.payload["signal"] == "d_f" and not stages:
            stages.append("breach_df")
        elif e.kind == "Breach" and e.payload["signal"] == "a_p" \
                and stages == ["breach_df"]:
            stages.append("breach_ap")
        elif e.kind == "ProposalCreated" and stages == ["breach_df", "breach_ap"]:
            du = e.payload["delta_u"]
            if du["rollback_to"] is not None and du["d_tau_u"] < 0:
                stages.append("proposal")
        elif e.kind == "GovernanceDecision" and stages[-1:] == ["proposal"] \
                and e.payload["decision"] == "approve":
            stages.append("approved")
        elif e.kind == "RollbackApplied" and stages[-1:] == ["approved"]:
            stages.append("rollback_applied")
    assert stages == ["breach_df", "breach_ap", "proposal", "approved",
                      "rollback_applied"]
    assert all(ep.end_tick is not None and ep.end_tick < scenario.horizon
               for ep in rep.episodes)
    assert rep.exit_code == 0

    denied = run_loop(load_scenario(SCENARIOS / "triage_worked_example.yaml"),
                      decision_source=ScriptedDecisions("deny_all"),
                      run_dir=tmp_path / "deny")
    assert denied.unresolved > 0
    assert denied.exit_code == 2
    report("worked-example closed loop (approve_all / deny_all)", 30, t0)


def test_jsd_oracle_equivalence():
    """Vectorized JSD matches the independent scalar closed form within
    1e-9 on 1000 random pairs, 2-16 bins."""
    t0 = time.monotonic()
    r = rng(2024)
    for _ in range(1000):
        k = int(r.integers(2, 17))
        p = r.random(k) + 1e-12
        q = r.random(k) + 1e-12
        p /= p.sum()
        q /= q.sum()
        labels = [f"b{i:02d}" for i in range(k)]
        got = jsd(DiscreteDistribution.from_masses(labels, p),
                  DiscreteDistribution.from_masses(labels, q))
        assert got == pytest.approx(jsd_oracle(p, q), abs=1e-9)
    report("jsd equivalence vs closed-form oracle (1000 pairs)", 5, t0)


def test_mitigation_optimizer_vs_grid():
    """solve_mitigation cost matches brute-force grid search (1e-3
    resolution) within 1e-3 on 100 randomized small instances; exact zero
    on every feasible-at-origin instance."""
    t0 = time.monotonic()
    r = rng(777)
    solved = zeros = 0
    for _ in range(100):
        y, cset, cfg, box, actions = random_instance(r)
        res = solve_mitigation(y, cset, cfg, delta_box=box, discrete_actions=actions)
        if admissible(y, cset):
            assert res.delta_u.continuous() == (0.0, 0.0, 0.0, 0.0)
            assert res.cost == 0.0 and res.feasible
            zeros += 1
            continue
        oracle = grid_oracle(y, cset, cfg, box, actions)
        if oracle is None:
            assert not res.feasible
            continue
        assert res.feasible
        assert abs(res.cost - oracle) <= 1e-3 or res.cost < oracle
        solved += 1
    assert solved >= 50 and zeros >= 5
    report(f"mitigation optimizer vs grid oracle ({solved} solves, {zeros} zero-cases)",
           60, t0)


def test_constrained_training_effect():
    """On the shipped biased dataset: lambda=0 held-out hard FNR gap > 0.10,
    lambda=10 <= 0.05; lambda=0 trajectory bit-matches plain gradient
    descent; analytic gradient within 1e-4 relative of central differences
    at 10 seeded points."""
    t0 = time.monotonic()
    scenario = load_scenario(SCENARIOS / "triage_worked_example.yaml")
    dataset = make_dataset(scenario, int(scenario.dataset["n"]))
    masks_test = [dataset.test.group == g for g in range(len(dataset.groups))]

    cfg0 = TrainConfig(eta=0.5, lam=0.0, epochs=400, seed=7)
    cfg10 = TrainConfig(eta=0.5, lam=10.0, epochs=400, seed=7)
    m0, trace0 = train_constrained(dataset, cfg0)
    m10, _ = train_constrained(dataset, cfg10)
    gap0 = hard_fnr_gap(m0.theta, dataset.test.X, dataset.test.y, masks_test)
    gap10 = hard_fnr_gap(m10.theta, dataset.test.X, dataset.test.y, masks_test)
    assert gap0 > 0.10, f"unconstrained gap {gap0}"
    assert gap10 <= 0.05, f"penalized gap {gap10}"

    for mine, ref in zip(trace0.theta, plain_gd_oracle(dataset, cfg0)):
        assert np.array_equal(mine, ref)

    masks_train = [dataset.group == g for g in range(len(dataset.groups))]
    r = rng(99)
    h = 1e-6
    for _ in range(10):
        theta = r.standard_normal(dataset.X.shape[1]) * 0.5
        _, grad, _ = loss_and_grad(theta, dataset.X, dataset.y, masks_train, 10.0)
        fd = np.empty_like(grad)
        for j in range(theta.size):
            e = np.zeros_like(theta)
            e[j] = h
            op, _, _ = loss_and_grad(theta + e, dataset.X, dataset.y, masks_train, 10.0)
            om, _, _ = loss_and_grad(theta - e, dataset.X, dataset.y, masks_train, 10.0)
            fd[j] = (op - om) / (2 * h)
        assert np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-12) < 1e-4
    report(f"constrained training (gap {gap0:.3f} -> {gap10:.3f}, bit-match, gradcheck)",
           30, t0)


def test_tamper_evidence_at_scale(tmp_path):
    """Flipping any single byte of any event in a 10,000-event log yields
    TamperedAt(k) with k <= the modified event's index; 100 random flips."""
    t0 = time.monotonic()
    path = tmp_path / "big.log"
    log = AuditLog(path)
    for i in range(10_000):
        log.append("SignalSample", i, {"v": i * 0.001, "s": "payload"})
    log.close()
    assert verify(path).valid
    original = path.read_bytes()
    # index the byte extent of every line
    extents = []
    pos = 0
    for line in original.split(b"\n")[:-1]:
        extents.append((pos, len(line) + 1))  # include the newline
        pos += len(line) + 1
    r = rng(4242)
    for _ in range(100):
        k = int(r.integers(0, len(extents)))
        start, length = extents[k]
        offset = int(r.integers(0, length))
        mutated = bytearray(original)
        mutated[start + offset] ^= int(r.integers(1, 256))
        path.write_bytes(bytes(mutated))
        result = verify(path)
        assert not result.valid, f"flip in event {k} went undetected"
        assert result.tampered_at <= k, (result.tampered_at, k)
    report("tamper evidence: 100 random flips over 10k events", 10, t0)


def test_run_determinism(tmp_path):
    """Two executions with identical (scenario, seed, schedule) produce
    byte-identical signals.csv and the same audit chain head."""
    t0 = time.monotonic()
    reports = []
    for sub in ("a", "b"):
        scenario = load_scenario(SCENARIOS / "triage_worked_example.yaml")
        reports.append(run_loop(scenario,
                                decision_source=ScriptedDecisions("approve_all"),
                                run_dir=tmp_path / sub))
    sig_a = (tmp_path / "a" / "signals.csv").read_bytes()
    sig_b = (tmp_path / "b" / "signals.csv").read_bytes()
    assert sig_a == sig_b
    assert reports[0].chain_head == reports[1].chain_head
    report("replay determinism (signals.csv bytes + chain head)", 30, t0)


def test_authority_soundness_all_shipped_scenarios(tmp_path):
    """No slow InterventionApplied or RollbackApplied event without a
    preceding approved GovernanceDecision for the same proposal id, on every
    shipped scenario under both schedules."""
    t0 = time.monotonic()
    for name in ("triage_baseline", "triage_worked_example"):
        for schedule in ("approve_all", "deny_all"):
            rep = run_loop(load_scenario(SCENARIOS / f"{name}.yaml"),
                           decision_source=ScriptedDecisions(schedule),
                           run_dir=tmp_path / f"{name}-{schedule}")
            approved = set()
            for e in replay(rep.audit_path):
                if e.kind == "GovernanceDecision" \
                        and e.payload.get("decision") == "approve":
                    approved.add(e.payload["proposal_id"])
                if e.kind == "InterventionApplied" and e.payload.get("scope") == "slow":
                    assert e.payload["proposal_id"] in approved
                if e.kind == "RollbackApplied":
                    assert e.payload["proposal_id"] in approved
    report("authority soundness via log replay (all shipped scenarios)", 30, t0)


def test_barrier_admissibility_equivalence(spec_doc):
    """10,000 random signal vectors: every barrier >= 0 iff every active
    constraint is satisfied."""
    t0 = time.monotonic()
    cset = compile_spec(spec_doc, calibration_measurements={"c_b": 45.0})
    r = rng(31337)
    for _ in range(10_000):
        y = SignalVector.build(
            0,
            d_f=float(r.uniform(0.0, 0.12)),
            a_p=float(r.random()),
            e_c=float(r.random()),
            c_b=float(r.uniform(0.0, 110.0)),
            r_t=float(r.random()),
        )
        barriers = evaluate_barriers(y, cset)
        non_negative = all(e.barrier >= 0.0 for e in barriers.entries.values()
                           if not e.insufficient)
        assert non_negative == admissible(y, cset)
        assert all(e.breached == (e.barrier < 0.0)
                   for e in barriers.entries.values() if not e.insufficient)
    report("barrier/admissibility equivalence (10k random vectors)", 30, t0)
