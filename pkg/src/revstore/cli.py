"""Command-line front end: run scenarios, sweep parameters, crash-sweep migrations."""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from importlib import resources
from pathlib import Path

from .engine import InvariantViolation, RunResult, crash_sweep, run_scenario
from .metrics import TIMELINE_HEADER, Metrics, Window
from .platform import PROFILES
from .scenario import Scenario, ScenarioError, parse_scenario, with_override
from .workload import PRESET_SWEEPS, PRESETS, WorkloadError

EXIT_OK, EXIT_INVALID, EXIT_INVARIANT = 0, 1, 2

TELEMETRY_HEADER = (
    "t_ms", "temp_C", "power_W", "host_util", "device_util", "host_freq_GHz",
    "queue_depth", "throttle_factor", "degrade_factor", "directive",
)
SUMMARY_HEADER = (
    "scenario", "seed", "duration_s", "submitted", "completed", "pending", "bytes_completed",
    "throughput_MBps", "p50_us", "p99_us", "p999_us", "mean_latency_us", "migrations",
    "switch_us_max", "peak_temp_C", "mean_host_util", "crashes",
)
SWEEP_HEADER = ("param", "value") + SUMMARY_HEADER


def _cell(v) -> str:
    # repr keeps floats exact so the CSV parses back to identical values
    return repr(v) if isinstance(v, float) else str(v)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def summary_row(result: RunResult) -> tuple:
    s = result.scenario
    m = result.metrics
    return (
        s.name, s.seed, s.duration_s, result.submitted, result.completed, result.pending,
        m.bytes_completed, m.throughput_MBps, m.p50_us, m.p99_us, m.p999_us, m.mean_latency_us,
        m.migrations, max(m.switch_us, default=0), m.peak_temp_C, m.mean_host_util, result.crashes,
    )


def emit_reports(result: RunResult, out_dir: str | os.PathLike) -> dict[str, Path]:
    """Write timeline, telemetry and summary CSVs plus the event log into ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ScenarioError(f"cannot create output directory {out}: {exc}") from None
    paths = {
        "timeline": out / "timeline.csv",
        "telemetry": out / "telemetry.csv",
        "summary": out / "summary.csv",
        "events": out / "events.log",
    }
    m = result.metrics
    _write_csv(paths["timeline"], TIMELINE_HEADER, (w.row() for w in m.windows))
    _write_csv(
        paths["telemetry"], TELEMETRY_HEADER,
        (
            (e.t / 1000, f["temp"], f["power"], f["host_util"], f["device_util"], f["freq"],
             f["qd"], f["throttle"], f["degrade"], f["directive"])
            for e in m.epochs for f in (e.fields,)
        ),
    )
    _write_csv(paths["summary"], SUMMARY_HEADER, [summary_row(result)])
    paths["events"].write_text(result.log.dumps())
    return paths


def read_timeline(path: str | os.PathLike) -> list[Window]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if tuple(header) != TIMELINE_HEADER:
            raise ValueError(f"unexpected timeline header {header}")
        types = [float, float, float, float, float, float, int, int, int]
        return [Window(*(t(v) for t, v in zip(types, row))) for row in reader]


def timeline_matches(metrics: Metrics, path) -> bool:
    return read_timeline(path) == metrics.windows


# scenario lookup -------------------------------------------------------------


def shipped_scenarios() -> dict[str, Path]:
    root = resources.files("revstore") / "scenarios"
    return {Path(p.name).stem: Path(str(p)) for p in root.iterdir() if p.name.endswith(".ini")}


def load(path_or_name: str) -> Scenario:
    path = Path(path_or_name)
    if not path.exists():
        shipped = shipped_scenarios()
        if path_or_name in shipped:
            path = shipped[path_or_name]
        else:
            raise ScenarioError(f"no scenario file or shipped scenario named {path_or_name!r}")
    return parse_scenario(path)


def apply_flags(s: Scenario, args) -> Scenario:
    if args.seed is not None:
        s = replace(s, seed=args.seed)
    if args.profile is not None:
        if args.profile not in PROFILES:
            raise ScenarioError(f"device.profile: unknown device profile {args.profile!r}")
        s = replace(s, device=PROFILES[args.profile])
    if args.no_migration:
        s = replace(s, migration=replace(s.migration, enabled=False, forced=()))
    if args.out_dir is not None:
        s = replace(s, output=replace(s.output, out_dir=args.out_dir))
    if args.duration is not None:
        s = replace(s, duration_s=args.duration)
    s.validate()
    return s


# subcommands -------------------------------------------------------------------


def _run_one(s: Scenario, out_dir: Path) -> tuple:
    result = run_scenario(s)
    emit_reports(result, out_dir)
    return summary_row(result)


def cmd_run(args) -> int:
    s = apply_flags(load(args.scenario), args)
    out = Path(s.output.out_dir) / s.name
    row = _run_one(s, out)
    for k, v in zip(SUMMARY_HEADER, row):
        print(f"{k:>16} {_cell(v)}")
    print(f"reports written to {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    base = apply_flags(load(args.scenario), args)
    if args.preset:
        if args.preset not in PRESET_SWEEPS:
            raise ScenarioError(f"unknown sweep preset {args.preset!r}; choose from {', '.join(PRESET_SWEEPS)}")
        param, values = PRESET_SWEEPS[args.preset]
        # the opcode picks the pipeline, which must match the scenario's actors
        wl = replace(PRESETS[args.preset], opcode=base.workload.opcode, flags=base.workload.flags)
        base = replace(base, workload=wl)
    else:
        if not args.param or not args.values:
            raise ScenarioError("sweep needs --param and --values, or --preset")
        param, values = args.param, [v.strip() for v in args.values.split(",") if v.strip()]
    variants = []
    for v in values:
        s = with_override(base, param, v)
        s = replace(s, name=f"{base.name}-{param.replace('.', '_')}-{v}")
        s.validate()
        variants.append(s)
    root = Path(base.output.out_dir) / f"{base.name}-sweep"
    dirs = [root / s.name for s in variants]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_run_one, variants, dirs))
    else:
        rows = [_run_one(s, d) for s, d in zip(variants, dirs)]
    root.mkdir(parents=True, exist_ok=True)
    _write_csv(root / "sweep.csv", SWEEP_HEADER, [(param, v) + row for v, row in zip(values, rows)])
    for v, row in zip(values, rows):
        print(f"{param}={v}: {row[7]:.3f} MB/s p99={row[9]} us")
    print(f"sweep written to {root / 'sweep.csv'}")
    return EXIT_OK


def cmd_faults(args) -> int:
    s = apply_flags(load(args.scenario), args)
    points = crash_sweep(s, args.migration)
    out = Path(s.output.out_dir) / f"{s.name}-faults"
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(
        out / "crash_sweep.csv", ("after_event", "t_us", "phase", "recovery", "ok", "problems"),
        ((p.after_event, p.t, p.phase, " ".join(p.actions), p.ok, "; ".join(p.problems)) for p in points),
    )
    bad = [p for p in points if not p.ok]
    print(f"{len(points)} crash points, {len(points) - len(bad)} recovered cleanly")
    for p in bad:
        print(f"  after event {p.after_event} ({p.phase}): {'; '.join(p.problems)}", file=sys.stderr)
    return EXIT_INVARIANT if bad else EXIT_OK


def cmd_presets(args) -> int:
    print("workload presets:")
    for name, spec in PRESETS.items():
        print(f"  {name:<16} {spec.pattern.value} {spec.mode.value} block={spec.block_size} qd={spec.qd}")
    print("sweep presets:")
    for name, (param, values) in PRESET_SWEEPS.items():
        print(f"  {name:<16} {param} over {len(values)} values")
    print("device profiles:")
    for name, p in PROFILES.items():
        table = ", ".join(f"{t:g}C->{f:g}" for t, f in p.throttle_table)
        print(f"  {name:<16} {table}")
    print("shipped scenarios:")
    for name in sorted(shipped_scenarios()):
        print(f"  {name}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir")
    common.add_argument("--no-migration", action="store_true", help="keep every actor where it starts")
    common.add_argument("--profile", help="device profile name")
    common.add_argument("--duration", type=float, help="override scenario.duration_s")

    p = argparse.ArgumentParser(prog="revstore", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", parents=[common], help="run one scenario")
    run.add_argument("scenario", help="scenario file or shipped scenario name")
    run.set_defaults(func=cmd_run)
    sweep = sub.add_parser("sweep", parents=[common], help="vary one parameter")
    sweep.add_argument("scenario")
    sweep.add_argument("--param", help="section.key to vary, e.g. workload.qd")
    sweep.add_argument("--values", help="comma-separated values")
    sweep.add_argument("--preset", help="named sweep: " + ", ".join(PRESET_SWEEPS))
    sweep.add_argument("--jobs", type=int, default=1)
    sweep.set_defaults(func=cmd_sweep)
    faults = sub.add_parser("faults", parents=[common], help="crash at every event boundary of a migration")
    faults.add_argument("scenario")
    faults.add_argument("--migration", type=int, default=0, help="index of the migration to sweep")
    faults.set_defaults(func=cmd_faults)
    presets = sub.add_parser("presets", help="list built-in presets, profiles and scenarios")
    presets.set_defaults(func=cmd_presets)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, WorkloadError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
