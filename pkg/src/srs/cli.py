"""Command line entry points.

    srs run --scenario <file> [--decisions approve_all|deny_all|<schedule.yaml>]
            [--serve <port>] [--out <dir>]
    srs verify-log <path>
    srs report <run-dir>
    srs train-demo --config <scenario.yaml> [--out <dir>]

Exit codes: 0 success; 1 failure; 2 run finished with unresolved breaches.
``SRS_RUN_DIR`` overrides the default output directory root.
"""

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from . import auditlog
from .errors import SrsError
from .plant import load_scenario, make_dataset
from .runtime import ScriptedDecisions, default_run_dir, run_loop
from .safeguards import TrainConfig, train_constrained


def _cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    run_dir = Path(args.out) if args.out else default_run_dir(scenario)

    if args.serve:
        from .gateway import LiveRun
        from .server import serve

        console_dir = None
        candidate = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        if candidate.is_dir():
            console_dir = candidate
        run = LiveRun(scenario, run_dir=run_dir, interactive=True,
                      timeout_s=args.decision_timeout).start()
        print(f"serving run {run.handle.run_id} on http://127.0.0.1:{args.serve}  "
              f"(run dir: {run_dir})")
        if console_dir is not None:
            print(f"console: http://127.0.0.1:{args.serve}/console")
        serve(run, port=args.serve, linger_s=args.linger, console_dir=console_dir)
        report = run.join()
    else:
        if args.decisions in ("approve_all", "deny_all"):
            source = ScriptedDecisions(args.decisions)
        else:
            source = ScriptedDecisions.from_file(args.decisions)
        report = run_loop(scenario, decision_source=source, run_dir=run_dir)

    print(f"run complete: {report.scenario} seed={report.seed} "
          f"ticks={report.horizon} run_dir={report.run_dir}")
    _print_scorecard(report.scorecard)
    if report.unresolved:
        print(f"{report.unresolved} breach episode(s) unresolved at horizon")
        return 2
    return 0


def _cmd_verify_log(args) -> int:
    result = auditlog.verify(args.path)
    if result.valid:
        print(f"{args.path}: chain valid")
        return 0
    print(f"{args.path}: TAMPERED at seq {result.tampered_at}")
    return 1


def _print_scorecard(rows):
    if not rows:
        print("no scorecard (constraints never calibrated)")
        return
    width = max(len(r["constraint_id"]) for r in rows)
    print("scorecard:")
    for r in rows:
        bound = "<=" if r["direction"] == "upper" else ">="
        obs = r["observed"]
        obs_s = "n/a" if obs is None or obs != obs else f"{obs:.4f}"
        print(f"  {r['constraint_id']:<{width}}  {r['signal']:>7} {bound} "
              f"{r['threshold']:.4f}  observed {obs_s:>8}  [{r['status'].upper()}]")


def _cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    card = run_dir / "scorecard.csv"
    if not card.exists():
        print(f"no scorecard.csv under {run_dir}", file=sys.stderr)
        return 1
    with open(card, encoding="utf-8") as fh:
        rows = []
        for row in csv.DictReader(fh):
            row["direction"] = row["direction"]
            row["threshold"] = float(row["threshold"])
            row["observed"] = float(row["observed"]) if row["observed"] else float("nan")
            rows.append(row)
    _print_scorecard(rows)
    meta_path = run_dir / "meta.json"
    if meta_path.exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        print(f"chain head: {meta.get('chain_head')}")
        print(f"unresolved breaches: {meta.get('unresolved_breaches')}")
    result = auditlog.verify(run_dir / "audit.log")
    print(f"audit log: {'valid' if result.valid else f'TAMPERED at {result.tampered_at}'}")
    if not result.valid:
        return 1
    return 0 if all(r["status"] == "pass" for r in rows) else 2


def _cmd_train_demo(args) -> int:
    scenario = load_scenario(args.config)
    dataset = make_dataset(scenario, int(scenario.dataset.get("n", 3000)))
    out = Path(args.out) if args.out else default_run_dir(scenario)
    out.mkdir(parents=True, exist_ok=True)
    for lam in (0.0, float(scenario.train.get("lambda", 10.0))):
        cfg = TrainConfig(eta=float(scenario.train.get("eta", 0.1)),
                          lam=lam,
                          epochs=int(scenario.train.get("epochs", 400)),
                          seed=int(scenario.train.get("seed", scenario.seed)))
        model, trace = train_constrained(dataset, cfg)
        from .safeguards import hard_fnr_gap
        import numpy as np

        test = dataset.test
        masks = [test.group == g for g in range(len(dataset.groups))]
        gap = hard_fnr_gap(model.theta, test.X, test.y, masks)
        path = out / f"train_trace_lambda{lam:g}.csv"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("epoch,loss,penalty,soft_gap,hard_gap\n")
            for row in trace.rows():
                fh.write(f"{row['epoch']},{row['loss']!r},{row['penalty']!r},"
                         f"{row['soft_gap']!r},{row['hard_gap']!r}\n")
        print(f"lambda={lam:g}: train hard gap {trace.hard_gap[-1]:.4f}  "
              f"held-out hard gap {gap:.4f}  trace -> {path}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="srs", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario under supervision")
    p_run.add_argument("--scenario", required=True)
    p_run.add_argument("--decisions", default="approve_all",
                       help="approve_all | deny_all | path to a schedule YAML")
    p_run.add_argument("--serve", type=int, default=None, metavar="PORT",
                       help="serve the gateway API and run interactively")
    p_run.add_argument("--out", default=None, help="run directory")
    p_run.add_argument("--decision-timeout", type=float, default=None,
                       help="interactive: seconds to wait for a decision before expiry")
    p_run.add_argument("--linger", type=float, default=5.0,
                       help="interactive: seconds to keep serving after finish")
    p_run.set_defaults(fn=_cmd_run)

    p_vl = sub.add_parser("verify-log", help="verify an audit log's hash chain")
    p_vl.add_argument("path")
    p_vl.set_defaults(fn=_cmd_verify_log)

    p_rep = sub.add_parser("report", help="render the scorecard of a finished run")
    p_rep.add_argument("run_dir")
    p_rep.set_defaults(fn=_cmd_report)

    p_td = sub.add_parser("train-demo", help="constrained-training demo on the synthetic dataset")
    p_td.add_argument("--config", required=True, help="scenario file providing dataset/train sections")
    p_td.add_argument("--out", default=None)
    p_td.set_defaults(fn=_cmd_train_demo)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except SrsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
