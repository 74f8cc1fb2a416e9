"""Headless command line: scene/task generation, batch simulation,
offline audio rendering, statistics reports, and the live server.

Exit codes: 0 success, 2 usage error, 3 data error, 4 internal error.
Everything stochastic takes an explicit seed; two invocations with the same
flags produce byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from importlib import resources

import numpy as np

from . import __version__
from .audio import HrirError, render_offline
from .encoder import Mode
from .scene import SceneConfigError, load_scene, scene_from_config, scene_to_config
from .stats import anova_between_two, anova_rm_one, anova_rm_two, boxplot_summary
from .tasks import (
    EngineConfig,
    GenerationError,
    IncompleteLogError,
    SessionLog,
    gen_localization,
    gen_navigation,
    judge_obstacles,
    profile_for_task,
    score_localization,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4

REPORT_SCHEMA = "echogrid-report/1"

DATA_ERRORS = (
    SceneConfigError,
    GenerationError,
    IncompleteLogError,
    HrirError,
    FileNotFoundError,
    json.JSONDecodeError,
    ValueError,
    KeyError,
)


class UsageError(ValueError):
    pass


def _fmt(value: float) -> str:
    """Floats are serialized with 9 significant digits everywhere."""
    return f"{value:.9g}"


def _parse_seeds(text: str) -> list[int]:
    seeds: list[int] = []
    for part in str(text).split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    if not seeds:
        raise UsageError(f"no seeds in {text!r}")
    return seeds


def _agent_for(task_kind: str, requested: str | None) -> str:
    if requested:
        return requested
    return "sweep" if task_kind == "localization" else "updown"


def _engine_config(task_kind: str, mode: Mode, args) -> EngineConfig:
    kwargs = {"mode": mode, "profile": profile_for_task(task_kind)}
    if getattr(args, "tick_hz", None):
        kwargs["tick_hz"] = args.tick_hz
    if getattr(args, "azimuths", None):
        from .encoder import CellGrid
        azimuths = tuple(float(a) for a in args.azimuths.split(","))
        kwargs["grid"] = CellGrid(azimuths=azimuths)
    if getattr(args, "max_duration", None):
        kwargs["max_duration_s"] = args.max_duration
    return EngineConfig(**kwargs)


def _log_row(log: SessionLog, task, agent: str) -> dict:
    from .tasks import LocalizationTask

    row = {
        "participant": log.header.participant_id,
        "group": log.header.group or "",
        "session_number": log.header.session_number,
        "mode": log.header.mode,
        "task": log.header.task,
        "course": log.header.course if log.header.course is not None else "",
        "seed": log.header.seed,
        "agent": agent,
        "complete": int(log.header.complete),
    }
    if not log.header.complete:
        row.update({"duration_s": "", "mean_error_m": "", "missed_count": ""})
        return row
    if isinstance(task, LocalizationTask):
        result = score_localization(log, task)
        row["duration_s"] = _fmt(result.total_time)
        row["mean_error_m"] = _fmt(result.mean_error)
        row["missed_count"] = ""
    else:
        result = judge_obstacles(log, task)
        row["duration_s"] = _fmt(result.course_time)
        row["mean_error_m"] = ""
        row["missed_count"] = result.missed_count
    return row


CSV_COLUMNS = ["participant", "group", "session_number", "mode", "task", "course",
               "seed", "agent", "complete", "duration_s", "mean_error_m",
               "missed_count"]


def _write_csv(path: str, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _write_json(path: str, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- gen-scene ---------------------------------------------------------------------


def cmd_gen_scene(args) -> int:
    if args.task == "corridor":
        text = resources.files("echogrid.data").joinpath("corridor_scene.json").read_text()
        scene_from_config(text)  # validate the bundled template
    else:
        if args.seed is None:
            raise UsageError("--seed is required for generated scenes")
        task = gen_localization(args.seed) if args.task == "localization" \
            else gen_navigation(args.seed)
        text = scene_to_config(task.scene()) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(args.out)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- simulate ----------------------------------------------------------------------


def _simulate_one(task_kind: str, mode: Mode, agent: str, seed: int, args,
                  participant="agent", group=None, session_number=1, course=None):
    from .agents import run_scripted

    task = gen_localization(seed) if task_kind == "localization" else gen_navigation(seed)
    config = _engine_config(task_kind, mode, args)
    log = run_scripted(agent, task, config, seed, participant_id=participant,
                       group=group, session_number=session_number, course=course)
    return task, log


def _crossover_rows(args):
    """Table-1-shaped dataset: 2 groups x 2 sessions, paired task seeds."""
    participants = args.participants
    courses = args.courses
    logs = []
    rows = []
    for p in range(participants):
        group = "Group2D3D" if p < participants // 2 else "Group3D2D"
        order = ("2d", "3d") if group == "Group2D3D" else ("3d", "2d")
        base = args.seed + 1000 * p
        for session_number, mode_str in zip((1, 2), order):
            mode = Mode.parse(mode_str)
            pid = f"p{p:02d}"
            task, log = _simulate_one(
                "localization", mode, _agent_for("localization", args.agent_loc),
                base, args, participant=pid, group=group,
                session_number=session_number)
            logs.append((task, log, _agent_for("localization", args.agent_loc)))
            for course in range(1, courses + 1):
                task, log = _simulate_one(
                    "navigation", mode, _agent_for("navigation", args.agent_nav),
                    base + course, args, participant=pid, group=group,
                    session_number=session_number, course=course)
                logs.append((task, log, _agent_for("navigation", args.agent_nav)))
    for task, log, agent in logs:
        rows.append(_log_row(log, task, agent))
    return logs, rows


def cmd_simulate(args) -> int:
    out_dir = args.out_dir or "."
    logs_dir = os.path.join(out_dir, "logs")
    os.makedirs(logs_dir, exist_ok=True)

    if args.crossover:
        logs, rows = _crossover_rows(args)
    else:
        if not args.task:
            raise UsageError("--task is required without --crossover")
        mode = Mode.parse(args.mode)
        agent = _agent_for(args.task, args.agent)
        seeds = _parse_seeds(args.seeds)
        logs = []
        rows = []
        for seed in seeds:
            task, log = _simulate_one(args.task, mode, agent, seed, args,
                                      participant=f"seed{seed}")
            logs.append((task, log, agent))
            rows.append(_log_row(log, task, agent))

    for task, log, _agent in logs:
        h = log.header
        course = f"-c{h.course}" if h.course is not None else ""
        name = f"{h.participant_id}-s{h.session_number}-{h.task}{course}-{h.mode}.jsonl"
        with open(os.path.join(logs_dir, name), "w", encoding="utf-8") as fh:
            fh.write(log.to_jsonl())

    csv_path = os.path.join(out_dir, "summary.csv")
    _write_csv(csv_path, rows)
    report = {
        "schema": REPORT_SCHEMA,
        "kind": "simulation-summary",
        "rows": rows,
    }
    _write_json(os.path.join(out_dir, "report.json"), report)
    print(f"{len(rows)} runs -> {csv_path}")
    return EXIT_OK


# -- render ------------------------------------------------------------------------


def cmd_render(args) -> int:
    with open(args.log, "r", encoding="utf-8") as fh:
        log = SessionLog.from_jsonl(fh.read())
    generated = gen_localization(log.header.seed) if log.header.task == "localization" \
        else gen_navigation(log.header.seed)
    expected_scene = generated.scene()
    if args.scene:
        scene = load_scene(args.scene)
        if scene_to_config(scene) != scene_to_config(expected_scene):
            raise IncompleteLogError(
                f"scene file does not match the log's task "
                f"(task {log.header.task}, seed {log.header.seed})"
            )
    else:
        scene = expected_scene
    wav = render_offline(log, scene)
    with open(args.out, "wb") as fh:
        fh.write(wav)
    print(args.out)
    return EXIT_OK


# -- stats -------------------------------------------------------------------------


def _read_csv_table(path: str) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def _pivot_rm1(rows, subject_col, factor_col, value_col):
    subjects = sorted({r[subject_col] for r in rows})
    levels = sorted({r[factor_col] for r in rows})
    table = {(r[subject_col], r[factor_col]): float(r[value_col]) for r in rows}
    matrix = np.empty((len(subjects), len(levels)))
    for i, s in enumerate(subjects):
        for j, lvl in enumerate(levels):
            if (s, lvl) not in table:
                raise IncompleteLogError(
                    f"unbalanced design: missing cell (subject={s}, {factor_col}={lvl})"
                )
            matrix[i, j] = table[(s, lvl)]
    return matrix, subjects, levels


def _pivot_rm2(rows, subject_col, f1, f2, value_col):
    subjects = sorted({r[subject_col] for r in rows})
    levels1 = sorted({r[f1] for r in rows})
    levels2 = sorted({r[f2] for r in rows})
    table = {(r[subject_col], r[f1], r[f2]): float(r[value_col]) for r in rows}
    matrix = np.empty((len(subjects), len(levels1), len(levels2)))
    for i, s in enumerate(subjects):
        for j, l1 in enumerate(levels1):
            for k, l2 in enumerate(levels2):
                if (s, l1, l2) not in table:
                    raise IncompleteLogError(
                        f"unbalanced design: missing cell (subject={s}, "
                        f"{f1}={l1}, {f2}={l2})"
                    )
                matrix[i, j, k] = table[(s, l1, l2)]
    return matrix, subjects, levels1, levels2


def _print_anova_table(results) -> None:
    print(f"{'effect':<16} {'F':>12} {'df1':>8} {'df2':>8} {'p':>10}  eps")
    for r in results:
        eps = f"{r.epsilon:.3f}" if r.epsilon is not None else "-"
        print(f"{r.effect:<16} {r.F:>12.4f} {r.df1:>8.3g} {r.df2:>8.3g} "
              f"{r.p:>10.4g}  {eps}")


def _stats_from_csv(args) -> dict:
    rows = _read_csv_table(args.csv)
    if not rows:
        raise IncompleteLogError(f"{args.csv}: no data rows")
    cols = list(rows[0].keys())
    if args.design == "rm1":
        needed = ["subject", "factor1", "value"]
        if any(c not in cols for c in needed):
            raise IncompleteLogError(f"rm1 needs columns {needed}, got {cols}")
        matrix, subjects, levels = _pivot_rm1(rows, "subject", "factor1", "value")
        results = [anova_rm_one(matrix)]
    elif args.design == "rm2":
        needed = ["subject", "factor1", "factor2", "value"]
        if any(c not in cols for c in needed):
            raise IncompleteLogError(f"rm2 needs columns {needed}, got {cols}")
        matrix, *_ = _pivot_rm2(rows, "subject", "factor1", "factor2", "value")
        results = anova_rm_two(matrix)
    elif args.design == "between2":
        needed = ["factor1", "factor2", "value"]
        if any(c not in cols for c in needed):
            raise IncompleteLogError(f"between2 needs columns {needed}, got {cols}")
        values = [float(r["value"]) for r in rows]
        results = anova_between_two(values, [r["factor1"] for r in rows],
                                    [r["factor2"] for r in rows])
    else:
        raise UsageError(f"unknown design {args.design!r}")
    _print_anova_table(results)
    values = [float(r["value"]) for r in rows]
    return {
        "schema": REPORT_SCHEMA,
        "kind": f"csv-{args.design}",
        "boxplot": boxplot_summary(values).as_dict(),
        "anova": [r.as_dict() for r in results],
    }


def _load_log_dir(directory: str) -> list[SessionLog]:
    logs = []
    for name in sorted(os.listdir(directory)):
        if name.endswith(".jsonl"):
            with open(os.path.join(directory, name), "r", encoding="utf-8") as fh:
                logs.append(SessionLog.from_jsonl(fh.read()))
    if not logs:
        raise IncompleteLogError(f"no .jsonl logs under {directory}")
    return logs


def _stats_from_logs(args) -> dict:
    """Crossover report: boxplot summaries grouped the way the task figures
    are drawn, plus per-group repeated-measures ANOVAs."""
    logs = _load_log_dir(args.logs)
    loc_values = {}   # (participant, group, session, mode) -> mean error
    nav_time = {}     # (participant, group, session, mode, course) -> time
    nav_missed = {}
    for log in logs:
        h = log.header
        if not h.complete:
            continue
        if h.task == "localization":
            task = gen_localization(h.seed)
            result = score_localization(log, task)
            loc_values[(h.participant_id, h.group, h.session_number, h.mode)] = \
                result.mean_error
        else:
            task = gen_navigation(h.seed)
            result = judge_obstacles(log, task)
            key = (h.participant_id, h.group, h.session_number, h.mode, h.course)
            nav_time[key] = result.course_time
            nav_missed[key] = result.missed_count

    report = {"schema": REPORT_SCHEMA, "kind": "crossover", "localization": {},
              "navigation": {}}

    box_loc = {}
    for (pid, group, session, mode), err in loc_values.items():
        box_loc.setdefault(f"session{session}-{mode}", []).append(err)
    report["localization"]["boxplots"] = {
        key: boxplot_summary(vals).as_dict() for key, vals in sorted(box_loc.items())
    }
    anovas = {}
    for group in ("Group2D3D", "Group3D2D"):
        per_subject = {}
        for (pid, g, session, mode), err in loc_values.items():
            if g == group:
                per_subject.setdefault(pid, {})[mode] = err
        if per_subject and all(len(v) == 2 for v in per_subject.values()):
            matrix = np.array([[per_subject[p]["2d"], per_subject[p]["3d"]]
                               for p in sorted(per_subject)])
            result = anova_rm_one(matrix)
            anovas[group] = result.as_dict()
            print(f"localization {group}: mode effect")
            _print_anova_table([result])
    report["localization"]["anova_mode_per_group"] = anovas

    box_nav = {}
    for (pid, group, session, mode, course), t in nav_time.items():
        box_nav.setdefault(f"session{session}-{mode}-course{course}", []).append(t)
    report["navigation"]["boxplots"] = {
        key: boxplot_summary(vals).as_dict() for key, vals in sorted(box_nav.items())
    }
    nav_anovas = {}
    for group in ("Group2D3D", "Group3D2D"):
        per_subject = {}
        for (pid, g, session, mode, course), t in nav_time.items():
            if g == group:
                per_subject.setdefault(pid, {})[(mode, course)] = t
        if not per_subject:
            continue
        modes = sorted({m for v in per_subject.values() for (m, c) in v})
        courses = sorted({c for v in per_subject.values() for (m, c) in v})
        if all(len(v) == len(modes) * len(courses) for v in per_subject.values()):
            matrix = np.array([
                [[per_subject[p][(m, c)] for c in courses] for m in modes]
                for p in sorted(per_subject)
            ])
            results = anova_rm_two(matrix)
            nav_anovas[group] = [r.as_dict() for r in results]
            print(f"navigation {group}: mode x course on time")
            _print_anova_table(results)
    report["navigation"]["anova_mode_course_per_group"] = nav_anovas
    report["navigation"]["missed"] = {
        f"{k[0]}-s{k[2]}-{k[3]}-c{k[4]}": v for k, v in sorted(nav_missed.items())
    }
    return report


def cmd_stats(args) -> int:
    if bool(args.csv) == bool(args.logs):
        raise UsageError("give exactly one of --csv or --logs")
    report = _stats_from_csv(args) if args.csv else _stats_from_logs(args)
    if args.out:
        _write_json(args.out, report)
        print(args.out)
    else:
        json.dump(report, sys.stdout, indent=2, sort_keys=True)
        print()
    return EXIT_OK


# -- serve -------------------------------------------------------------------------


def cmd_serve(args) -> int:
    from .server import ServerConfig, serve

    config = ServerConfig(
        seed=args.seed if args.seed is not None else 0,
        participant_id=args.participant,
        group=args.group,
        courses=args.courses,
        tick_hz=args.tick_hz or 30.0,
    )
    banner = (f"echogrid server on ws://{args.host}:{args.port} "
              f"(group={config.group or 'free'}, seed={config.seed})")
    serve(args.host, args.port, config, args.out_dir, banner=banner)
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="echogrid",
        description="Simulator and sonification engine for a camera-to-audio "
                    "assistive device: generate tasks, run scripted agents, "
                    "render session audio, analyze results, or serve live sessions.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", metavar="PATH",
                        help="JSON file with default values for any flag")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scene", help="write a scene config document")
    p.add_argument("--task", choices=["corridor", "localization", "navigation"],
                   default="corridor")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", metavar="PATH")
    p.set_defaults(func=cmd_gen_scene)

    p = sub.add_parser("simulate", help="run scripted agents over seed batches")
    p.add_argument("--task", choices=["localization", "navigation"])
    p.add_argument("--mode", default="3d", help="2d or 3d")
    p.add_argument("--agent", help="oracle, sweep, or updown")
    p.add_argument("--seeds", default="0", help="e.g. 0..9 or 1,5,7")
    p.add_argument("--seed", type=int, default=0, help="base seed for --crossover")
    p.add_argument("--crossover", action="store_true",
                   help="emulate the two-group, two-session protocol")
    p.add_argument("--participants", type=int, default=16)
    p.add_argument("--courses", type=int, default=3)
    p.add_argument("--agent-loc", help="localization agent for --crossover")
    p.add_argument("--agent-nav", help="navigation agent for --crossover")
    p.add_argument("--tick-hz", type=float, dest="tick_hz")
    p.add_argument("--azimuths", help="comma-separated column azimuths")
    p.add_argument("--max-duration", type=float, dest="max_duration")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("render", help="render a session log to a stereo WAV")
    p.add_argument("--log", required=True)
    p.add_argument("--scene", help="optional scene file; must match the log's seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("stats", help="boxplots and ANOVA reports")
    p.add_argument("--csv", help="plain table: subject,factor1[,factor2],value")
    p.add_argument("--design", choices=["rm1", "rm2", "between2"], default="rm1")
    p.add_argument("--logs", help="directory of session logs from simulate")
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("serve", help="run the live WebSocket session server")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--participant", default="anon")
    p.add_argument("--group", choices=["Group2D3D", "Group3D2D"])
    p.add_argument("--courses", type=int, default=3)
    p.add_argument("--tick-hz", type=float, dest="tick_hz")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_serve)

    return parser


def _apply_config_file(args: argparse.Namespace) -> None:
    """Fill unset optional flags from a JSON config document."""
    if not args.config:
        return
    with open(args.config, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise UsageError("--config file must hold a JSON object")
    for key, value in doc.items():
        attr = key.replace("-", "_")
        if hasattr(args, attr) and getattr(args, attr) is None:
            setattr(args, attr, value)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        _apply_config_file(args)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - exit-code boundary
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
