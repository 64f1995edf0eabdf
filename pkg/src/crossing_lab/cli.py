"""Command-line toolkit: headless batches, analysis, estimation, replay, serve.

Exit codes are a stable contract: 0 success, 1 verification failure, 2 input
error, 3 estimation error. Outputs are byte-identical across runs on the same
inputs.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import records
from .agents import CalibrationTargets, PolicyPopulation, agent_factory, calibrated_population
from .analytics import (
    compute_trial_metrics,
    metrics_csv,
    sensitivity_bins,
    sensitivity_csv,
    summarize,
)
from .mnl import (
    DEFAULT_DESIGNS,
    DesignSpec,
    EstimationError,
    InvalidDesignError,
    build_design,
    estimate,
    report,
)
from .records import SchemaError
from .traffic import RoadGeometry, TrafficConfig
from .trial import (
    Condition,
    ReplayInputSource,
    SessionPlan,
    run_session,
    run_trial,
)

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_INPUT = 2
EXIT_ESTIMATION = 3

OUTPUT_ROOT_ENV = "CROSSING_LAB_OUT"


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _load_config(path: str | None) -> tuple[TrafficConfig, RoadGeometry]:
    if path is None:
        return TrafficConfig(), RoadGeometry()
    with open(path, "r", encoding="utf-8") as fp:
        data = json.load(fp)
    config = TrafficConfig.from_dict(data.get("traffic", {}))
    geometry = RoadGeometry.from_dict(data.get("geometry", {}))
    return config, geometry


def _parse_trials(text: str) -> dict[Condition, int]:
    if "=" not in text:
        n = int(text)
        return {c: n for c in Condition}
    counts: dict[Condition, int] = {}
    for part in text.split(","):
        key, value = part.split("=", 1)
        counts[Condition(key.strip())] = int(value)
    return counts


def _out_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    root = os.environ.get(OUTPUT_ROOT_ENV, ".")
    return Path(root) / "crossing-lab-out"


def cmd_simulate(args) -> int:
    try:
        config, geometry = _load_config(args.config)
        counts = _parse_trials(args.trials)
        for n in counts.values():
            if n < 1:
                raise ValueError("trial counts must be >= 1")
        if args.population:
            population = PolicyPopulation.from_json(
                Path(args.population).read_text(encoding="utf-8")
            )
        else:
            population = calibrated_population(
                CalibrationTargets(), n=args.participants, seed=args.seed
            )
    except (OSError, ValueError, KeyError) as exc:
        return _fail(str(exc), EXIT_INPUT)

    out = _out_dir(args)
    sessions_dir = out / "sessions"
    sessions_dir.mkdir(parents=True, exist_ok=True)
    plan = SessionPlan.from_counts(counts)

    manifest = {
        "config": {"traffic": config.to_dict(), "geometry": geometry.to_dict()},
        "seed": args.seed,
        "trials": {c.value: n for c, n in counts.items()},
        "participants": len(population.members),
        "threshold": args.threshold,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )

    tallies = {"success": 0, "failed": 0, "timeout": 0}
    for i, member in enumerate(population.members):
        session_seed = int(
            np.random.SeedSequence([args.seed, i]).generate_state(1, np.uint64)[0]
        )
        session = run_session(
            config,
            geometry,
            plan,
            agent_factory(member, i),
            session_seed,
            participant=member.meta,
        )
        sdir = sessions_dir / f"p{i:03d}"
        sdir.mkdir(parents=True, exist_ok=True)
        with open(sdir / "trials.jsonl", "w", encoding="utf-8") as fp:
            records.write_session(fp, session)
        for status, count in session.tallies().items():
            tallies[status] += count
    total = sum(tallies.values())
    print(f"{len(population.members)} sessions, {total} trials")
    for status in ("success", "failed", "timeout"):
        share = 100.0 * tallies[status] / total if total else 0.0
        print(f"  {status:8s} {tallies[status]:5d}  ({share:.1f}%)")
    print(f"logs in {sessions_dir}")
    return EXIT_OK


def _load_metrics(logs: str, threshold: float):
    paths: list[Path] = []
    root = Path(logs)
    if root.is_dir():
        paths = sorted(root.rglob("*.jsonl"))
    elif root.exists():
        paths = [root]
    if not paths:
        raise FileNotFoundError(f"no .jsonl logs under {logs}")
    metrics = []
    for path in paths:
        _, trials = records.load_records(path)
        pid = path.parent.name if path.parent.name.startswith("p") else path.stem
        for rec in trials:
            if rec.practice:
                continue
            metrics.append(compute_trial_metrics(rec, threshold=threshold, participant_id=pid))
    if not metrics:
        raise FileNotFoundError(f"no trials found under {logs}")
    return metrics


def cmd_analyze(args) -> int:
    try:
        metrics = _load_metrics(args.logs, args.threshold)
    except (OSError, ValueError, SchemaError) as exc:
        return _fail(str(exc), EXIT_INPUT)

    group_keys = tuple(k.strip() for k in args.group_by.split(","))
    table = summarize(metrics, group_keys)
    bins = sensitivity_bins(metrics, threshold=args.threshold)

    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.csv").write_text(table.to_csv(), encoding="utf-8")
    (out / "summary.json").write_text(table.to_json() + "\n", encoding="utf-8")
    (out / "sensitivity.csv").write_text(sensitivity_csv(bins), encoding="utf-8")
    if args.format == "text":
        print(table.to_text())
    elif args.format == "json":
        print(table.to_json())
    else:
        print(table.to_csv(), end="")
    for warning in table.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    return EXIT_OK


def _designs_from_file(path: str, threshold: float) -> dict[Condition, DesignSpec]:
    with open(path, "r", encoding="utf-8") as fp:
        data = json.load(fp)
    designs = {}
    for key, spec in data.get("conditions", data).items():
        cond = Condition(key)
        designs[cond] = DesignSpec(
            condition=cond,
            covariates=tuple(spec["covariates"]),
            threshold=spec.get("threshold", threshold),
            standardize=spec.get("standardize", False),
        )
    return designs


def cmd_estimate(args) -> int:
    try:
        metrics = _load_metrics(args.logs, args.threshold)
        if args.design:
            designs = _designs_from_file(args.design, args.threshold)
        else:
            designs = {
                cond: DesignSpec(
                    condition=cond,
                    covariates=spec.covariates,
                    threshold=args.threshold,
                    standardize=spec.standardize,
                )
                for cond, spec in DEFAULT_DESIGNS.items()
            }
    except (OSError, ValueError, SchemaError) as exc:
        return _fail(str(exc), EXIT_INPUT)

    fits: dict[Condition, object] = {}
    failed = False
    try:
        for cond, spec in designs.items():
            try:
                obs = build_design(metrics, spec)
                fits[cond] = estimate(obs)
            except EstimationError as exc:
                failed = True
                cols = f" (columns: {', '.join(exc.columns)})" if exc.columns else ""
                fits[cond] = f"{exc}{cols}"
    except (InvalidDesignError, ValueError) as exc:
        return _fail(str(exc), EXIT_ESTIMATION)

    model_report = report(fits)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    (out / "fits.json").write_text(model_report.to_json() + "\n", encoding="utf-8")
    (out / "report.csv").write_text(model_report.to_csv(), encoding="utf-8")
    (out / "design.csv").write_text(metrics_csv(metrics), encoding="utf-8")
    print(model_report.to_text())
    if failed:
        return EXIT_ESTIMATION
    return EXIT_OK


def cmd_replay(args) -> int:
    try:
        _, trials = records.load_records(args.log)
    except SchemaError as exc:
        return _fail(str(exc), EXIT_INPUT)
    except (OSError, ValueError) as exc:
        return _fail(str(exc), EXIT_INPUT)
    if not trials:
        return _fail("log contains no trials", EXIT_INPUT)

    for rec in trials:
        replayed = run_trial(
            rec.config,
            rec.geometry,
            rec.condition,
            ReplayInputSource(rec),
            rec.seed,
            trial_id=rec.trial_id,
            practice=rec.practice,
            participant=rec.participant,
            params=rec.params,
        )
        original = list(records.trial_lines(rec))
        fresh = list(records.trial_lines(replayed))
        if original != fresh:
            first = next(
                (i for i, (a, b) in enumerate(zip(original, fresh)) if a != b),
                min(len(original), len(fresh)),
            )
            print(
                f"divergence in trial {rec.trial_id}: line {first} "
                f"(tick {first - 1 if first >= 1 else 'header'})"
            )
            return EXIT_VERIFY
    print(f"replay verified: {len(trials)} trial(s) bit-identical")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .gateway import build_app

    app = build_app(Path(args.root), default_pacing=args.pacing, ui_dir=args.ui)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossing-lab",
        description="Virtual crosswalk experiment platform",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run synthetic agent sessions")
    sim.add_argument("--config", help="JSON file with traffic/geometry settings")
    sim.add_argument("--population", help="population spec JSON (default: calibrated)")
    sim.add_argument("--participants", type=int, default=12)
    sim.add_argument("--trials", default="10", help='per-condition successes, e.g. 10 or "control=10,distracted=10"')
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--threshold", type=float, default=1.5)
    sim.add_argument("--out", help="output directory")
    sim.set_defaults(func=cmd_simulate)

    ana = sub.add_parser("analyze", help="summaries and sensitivity bins from logs")
    ana.add_argument("--logs", required=True, help="log file or directory of sessions")
    ana.add_argument("--group-by", default="condition,gender")
    ana.add_argument("--threshold", type=float, default=1.5)
    ana.add_argument("--format", choices=("csv", "json", "text"), default="text")
    ana.add_argument("--out", help="output directory")
    ana.set_defaults(func=cmd_analyze)

    est = sub.add_parser("estimate", help="fit per-condition safety models")
    est.add_argument("--logs", required=True)
    est.add_argument("--design", help="design spec JSON (default: built-in covariate sets)")
    est.add_argument("--threshold", type=float, default=1.5)
    est.add_argument("--out", help="output directory")
    est.set_defaults(func=cmd_estimate)

    rep = sub.add_parser("replay", help="re-simulate a log and verify bit-identity")
    rep.add_argument("log")
    rep.set_defaults(func=cmd_replay)

    srv = sub.add_parser("serve", help="run the live session gateway")
    srv.add_argument("--root", default="gateway-data")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8000)
    srv.add_argument("--pacing", choices=("realtime", "lockstep"), default="realtime")
    srv.add_argument("--ui", help="directory of built client assets to serve at /ui")
    srv.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
