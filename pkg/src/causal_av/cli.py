"""Command line: simulate, counterfactual, attribute, graph, rollout-check.

Exit codes: 0 success, 1 usage, 2 validation, 3 roll-out divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .counterfactual import (
    AttributionError,
    but_for_attribute,
    candidates_from_config,
    factual_from_simulation,
    replay_factual,
    resolve_candidate,
    run_counterfactual,
)
from .dynamics import PointMassSpec, build_point_mass_scm
from .io import dumps, export_dot, load_scenario, load_trajectories, rows_to_csv, write_trajectories
from .plotting import frames_from_result, scene_svg, speed_svg
from .rollout import check_rollout_equivalence
from .scenario import ScenarioConfig, ScenarioError, on_grid, parse_candidate
from .scene import build_scene, describe_scene, kinematics_scm, simulate
from .scm import ScmError
from .values import ZERO2, Vec2

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_DIVERGENCE = 0, 1, 2, 3
SEED_ENV = "CAUSAL_AV_SEED"

log = logging.getLogger("causal_av")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _JsonLines(logging.Formatter):
    def format(self, record):
        out = {"level": record.levelname.lower(), "logger": record.name, "msg": record.getMessage()}
        for k, v in getattr(record, "fields", {}).items():
            out[k] = v
        return json.dumps(out, sort_keys=True, default=str)


def _setup_logging(level: str):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonLines())
    log.handlers[:] = [handler]
    log.setLevel(level.upper())
    log.propagate = False


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="causal-av", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, formats, default):
        sp.add_argument("--scenario", required=True, help="scenario JSON")
        sp.add_argument("--out", help="output directory (files are written there)")
        sp.add_argument("--seed", type=int, help=f"RNG seed (overridden by ${SEED_ENV})")
        sp.add_argument("--horizon", type=float, help="simulated horizon in seconds")
        sp.add_argument("--format", choices=formats, default=default,
                        help="format printed to standard output")
        sp.add_argument("--log-level", default="warning",
                        choices=["debug", "info", "warning", "error"])

    s = sub.add_parser("simulate", help="run the scene forward")
    common(s, ["csv", "json", "svg"], "csv")
    c = sub.add_parser("counterfactual", help="splice one candidate and emit both worlds")
    common(c, ["json", "csv", "svg"], "json")
    c.add_argument("--trajectories", help="observed trajectory CSV (default: simulate)")
    c.add_argument("--candidate", action="append", default=[], help="agent=ID[,action=LABEL][,start=S]")
    a = sub.add_parser("attribute", help="but-for attribution over candidate actions")
    common(a, ["json", "csv", "table"], "json")
    a.add_argument("--trajectories", help="observed trajectory CSV (default: simulate)")
    a.add_argument("--candidate", action="append", default=[], help="agent=ID[,action=LABEL][,start=S]")
    a.add_argument("--jobs", type=int, default=1, help="concurrent candidate evaluations")
    g = sub.add_parser("graph", help="emit the scene SCM as DOT")
    common(g, ["dot", "json"], "dot")
    r = sub.add_parser("rollout-check", help="compare the engine against its explicit roll-out")
    common(r, ["json"], "json")
    r.add_argument("--tolerance", type=float, default=1e-9)
    return p


def _seed(args, cfg: ScenarioConfig) -> int:
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise ScenarioError(f"${SEED_ENV} must be an integer, got {env!r}") from None
    return cfg.seed if args.seed is None else args.seed


def _config(args) -> ScenarioConfig:
    cfg = load_scenario(args.scenario)
    changes = {"seed": _seed(args, cfg)}
    if args.horizon is not None:
        if not args.horizon > 0 or not on_grid(args.horizon, cfg.step_size):
            raise ScenarioError(f"--horizon {args.horizon} is not a positive multiple of "
                                f"{cfg.step_size}")
        changes["horizon"] = args.horizon
    return replace(cfg, **changes)


class _Writer:
    """Single funnel for every output file and for standard output."""

    def __init__(self, out: str | None):
        self.dir = Path(out) if out else None
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)

    def file(self, name: str, text: str):
        if self.dir is not None:
            (self.dir / name).write_text(text)
            log.info("wrote file", extra={"fields": {"path": str(self.dir / name)}})

    def stdout(self, text: str):
        sys.stdout.write(text)
        sys.stdout.flush()


def _record(args, cfg):
    if getattr(args, "trajectories", None):
        return replay_factual(cfg, load_trajectories(args.trajectories))
    return factual_from_simulation(cfg)


def _cmd_simulate(args, w: _Writer) -> int:
    cfg = _config(args)
    result = simulate(build_scene(cfg))
    from .counterfactual import summarize

    csv = write_trajectories(result.trajectory_rows())
    summary = dumps({"scenario": cfg.name, "seed": cfg.seed, **summarize(result).to_dict()})
    svg = scene_svg(frames_from_result(result), cfg.road, title=cfg.name)
    w.file("trajectories.csv", csv)
    w.file("outcome.json", summary)
    w.file("scene.svg", svg)
    w.stdout({"csv": csv, "json": summary, "svg": svg}[args.format])
    return EXIT_OK


def _cmd_counterfactual(args, w: _Writer) -> int:
    if len(args.candidate) != 1:
        raise _UsageError("counterfactual takes exactly one --candidate")
    cfg = _config(args)
    record = _record(args, cfg)
    cand = resolve_candidate(record.scene, parse_candidate(args.candidate[0]))
    world = run_counterfactual(record, cand)
    fact_csv = write_trajectories(record.result.trajectory_rows())
    cf_csv = write_trajectories(world.result.trajectory_rows())
    body = dumps({"scenario": cfg.name, "seed": cfg.seed, "candidate": cand.to_dict(),
                  "factual": record.outcome.to_dict(), "counterfactual": world.outcome.to_dict()})
    f_frames, c_frames = frames_from_result(record.result), frames_from_result(world.result)
    svg = scene_svg(c_frames, cfg.road, title=f"{cfg.name}: without {cand.label}")
    w.file("factual.csv", fact_csv)
    w.file("counterfactual.csv", cf_csv)
    w.file("worlds.json", body)
    w.file("scene_factual.svg", scene_svg(f_frames, cfg.road, title=f"{cfg.name}: factual"))
    w.file("scene_counterfactual.svg", svg)
    w.file("speeds.svg", speed_svg({"factual": f_frames, "counterfactual": c_frames}))
    w.stdout({"json": body, "csv": cf_csv, "svg": svg}[args.format])
    return EXIT_OK


def _report_rows(report) -> list[dict]:
    return [{"agent": v.candidate.agent, "action": v.candidate.label,
             "start_time": v.candidate.start_time, "factual": v.factual_outcome_class,
             "counterfactual": v.counterfactual_outcome_class, "verdict": v.verdict,
             "precedes_contact": v.precedes_contact} for v in report.verdicts]


def _cmd_attribute(args, w: _Writer) -> int:
    if args.jobs < 1:
        raise _UsageError("--jobs must be at least 1")
    cfg = _config(args)
    record = _record(args, cfg)
    specs = [parse_candidate(c) for c in args.candidate] or None
    cands = candidates_from_config(record.scene, specs)
    report = but_for_attribute(record, cands, jobs=args.jobs)
    body, table = report.to_json(), report.table()
    csv = rows_to_csv(_report_rows(report))
    w.file("report.json", body)
    w.file("report.txt", table)
    w.file("report.csv", csv)
    w.file("scene_factual.svg", scene_svg(frames_from_result(record.result), cfg.road,
                                          title=f"{cfg.name}: factual"))
    w.stdout({"json": body, "table": table, "csv": csv}[args.format])
    return EXIT_OK


def _cmd_graph(args, w: _Writer) -> int:
    cfg = _config(args)
    if cfg.model == "kinematics":
        scm = kinematics_scm()
        info = {"name": cfg.name, "variables": scm.node_count, "edges": scm.edge_count}
    elif cfg.model == "point_mass":
        scm = build_point_mass_scm(PointMassSpec(1.0), "pm")
        info = {"name": cfg.name, "variables": scm.node_count, "edges": scm.edge_count}
    else:
        scene = build_scene(cfg)
        scm = scene.scm
        info = describe_scene(scene)
    dot, js = export_dot(scm, cfg.name), dumps(info)
    w.file("graph.dot", dot)
    w.file("graph.json", js)
    w.stdout(dot if args.format == "dot" else js)
    return EXIT_OK


def rollout_target(cfg: ScenarioConfig):
    """(scm, steps, seeds) for the roll-out check of a scenario's model."""
    steps = cfg.steps
    if cfg.model == "kinematics":
        return kinematics_scm(), steps, {("kin.v_buff", 0): 0.0}
    if cfg.model == "point_mass":
        spec = PointMassSpec(1.0, ZERO2, Vec2(1.0, 0.0))
        seeds = {(k, 0): v for k, v in spec.seed_values("pm").items()}
        return build_point_mass_scm(spec, "pm"), steps, seeds
    scene = build_scene(cfg)
    return scene.scm, steps, dict(scene.initial_seeds)


def _cmd_rollout(args, w: _Writer) -> int:
    cfg = _config(args)
    scm, steps, seeds = rollout_target(cfg)
    report = check_rollout_equivalence(scm, steps, seed=cfg.seed, step_size=cfg.step_size,
                                       seeds=seeds)
    ok = report.ok(args.tolerance)
    body = dumps({"scenario": cfg.name, "steps": steps, "ok": ok,
                  "max_abs_error": report.max_abs_error,
                  "definedness_mismatches": [list(m) for m in report.definedness_mismatches]})
    w.file("rollout.json", report.to_json())
    w.stdout(body)
    if not ok:
        log.error("roll-out mismatch", extra={"fields": {"max_abs_error": report.max_abs_error}})
        return EXIT_DIVERGENCE
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "counterfactual": _cmd_counterfactual,
    "attribute": _cmd_attribute,
    "graph": _cmd_graph,
    "rollout-check": _cmd_rollout,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.log_level)
    try:
        return _COMMANDS[args.command](args, _Writer(args.out))
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"causal-av: error: {exc}\n")
        return EXIT_USAGE
    except (ScenarioError, ScmError, AttributionError, KeyError) as exc:
        log.error(str(exc), extra={"fields": {"kind": type(exc).__name__}})
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
