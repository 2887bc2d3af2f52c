"""End-to-end acceptance checks, one test per criterion.

Each test reports a single PASS/FAIL line through the ``verdict`` fixture;
the lines are repeated in the pytest terminal summary.
"""

import math
import random
import time
from dataclasses import replace

import numpy as np
import pytest

from oracles import ReferenceFifo, descriptor_bytes, thermal_closed_form, zipf_pmf
from revstore.actor import Descriptor, Placement, decode_descriptor, encode_descriptor
from revstore.cli import emit_reports, load
from revstore.engine import Simulation, crash_sweep, run_scenario
from revstore.platform import PROFILES, completion_stream, notify, step_thermal
from revstore.region import Ring
from revstore.scenario import ActorGroup, ForcedMove, MigrationConfig, Scenario
from revstore.workload import (
    Distribution,
    Mode,
    WorkloadSpec,
    ZipfSampler,
    format_trace,
    generate_stream,
    parse_trace,
    sample_blocks,
)
from test_workload import chi_square_p


def no_migration(s):
    return replace(s, migration=replace(s.migration, enabled=False, forced=()))


def cliff(name):
    """Run a thermal scenario without migration; return (pre, post, crossing_ms, factor, wall_s)."""
    s = no_migration(load(name))
    t0 = time.perf_counter()
    res = run_scenario(s)
    wall = time.perf_counter() - t0
    m = res.metrics
    first_threshold, factor = s.device.throttle_table[0]
    crossing = m.first_crossing_ms(first_threshold)
    window = s.output.window_ms
    # skip the window containing the crossing so both sides are steady state
    edge = math.floor(crossing / window) * window
    pre = m.throughput_between(0, edge)
    post = m.throughput_between(edge + window, s.duration_s * 1000)
    return pre, post, crossing, factor, wall


@pytest.fixture(scope="module")
def smartssd_cliff():
    return cliff("thermal_smartssd")


def test_criterion_1_thermal_cliff(verdict, smartssd_cliff):
    details, ok = [], True
    for name, result in (("smartssd", smartssd_cliff), ("scaleflux", cliff("thermal_scaleflux"))):
        pre, post, crossing, factor, wall = result
        ratio = post / pre
        good = abs(ratio / factor - 1) <= 0.02 and wall < 10
        ok &= good
        details.append(f"{name} crosses at {crossing / 1000:.1f}s, post/pre={ratio:.3f} "
                       f"(target {factor}), {wall:.1f}s wall")
    verdict(1, ok, "; ".join(details))


def test_criterion_2_elastic_tradeoff(verdict, smartssd_cliff):
    elastic = run_scenario(load("elastic_cxl"))
    free = run_scenario(load("unconstrained"))
    e, u = elastic.metrics.throughput_MBps, free.metrics.throughput_MBps
    throttled = smartssd_cliff[1]
    ok = e >= 0.95 * u and e >= 1.9 * throttled
    verdict(2, ok, f"elastic {e:.1f} MB/s = {e / u:.3f} of unconstrained, {e / throttled:.2f}x throttled smartssd "
                   f"({len(elastic.completed_migrations)} migrations)")


def test_criterion_3_migration_latency(verdict):
    res = run_scenario(load("migration_latency"))
    done = [e.fields for e in res.log.of("Phase") if e.fields["phase"] == "activated"]
    worst = max(f["switch_us"] for f in done)
    with_drain = max(f["total_us"] for f in done)
    ok = len(done) >= 100 and worst <= 50 and all(f["bytes_copied"] == 8192 for f in done)
    verdict(3, ok, f"{len(done)} migrations, checkpoint-to-active max {worst} us "
                   f"(including drain of in-flight work: max {with_drain} us)")


def test_criterion_4_crash_sweep(verdict):
    t0 = time.perf_counter()
    points = crash_sweep(load("crash_sweep"))
    wall = time.perf_counter() - t0
    bad = [p for p in points if not p.ok]
    phases = sorted({p.phase for p in points})
    ok = len(points) >= 20 and not bad and wall < 60
    verdict(4, ok, f"{len(points)} crash points over phases {phases}, {len(bad)} bad, {wall:.1f}s wall")


def random_scenario(seed):
    r = random.Random(seed)
    n = r.randint(2, 4)
    moves = tuple(
        ForcedMove(round(r.uniform(0.5, 9.5), 3), r.randrange(n), r.choice(list(Placement)))
        for _ in range(r.randint(1, 3))
    )
    wl = WorkloadSpec(mode=Mode.CLOSED, qd=r.randint(1, 8), block_size=r.choice([16384, 65536, 262144]),
                      opcode=1, read_fraction=r.random(), address_space=1 << 24)
    return Scenario(name=f"random-{seed}", seed=seed, duration_s=0.01, scheduler=False, workload=wl,
                    actors=(ActorGroup(count=n),), migration=MigrationConfig(forced=moves))


def test_criterion_5_zero_loss_no_duplication(verdict):
    failures, total = [], 0
    for seed in range(1000):
        sim = Simulation(random_scenario(seed))
        sim.run_until()
        ids = [e.fields["id"] for e in sim.log.of("Complete")]
        submitted = {e.fields["id"] for e in sim.log.of("Submit")}
        total += sim.submitted
        if (sim.submitted != len(sim.completed) + len(sim.pending) or len(ids) != len(set(ids))
                or set(ids) | set(sim.pending) != submitted or set(ids) & set(sim.pending)):
            failures.append(seed)
    verdict(5, not failures, f"1000 scenarios, {total} requests, failing seeds {failures[:5]}")


def test_criterion_6_hysteresis(verdict):
    osc = run_scenario(load("hysteresis"))
    moves = [(e.t, e.fields["actor"]) for e in osc.log.of("MigrateStart")]
    per_epoch = {}
    for t, _ in moves:
        per_epoch[t // osc.scenario.policy.epoch_us] = per_epoch.get(t // osc.scenario.policy.epoch_us, 0) + 1
    gaps = []
    for aid in {a for _, a in moves}:
        ts = [t for t, a in moves if a == aid]
        gaps += [b - a for a, b in zip(ts, ts[1:])]
    temps = [e.fields["temp"] for e in osc.log.of("EpochTick")]
    t_high = osc.scenario.policy.T_high
    crossings = sum((a > t_high) != (b > t_high) for a, b in zip(temps, temps[1:]))

    sat = run_scenario(load("saturated"))
    ticks = sat.log.of("EpochTick")
    factors = [e.fields["degrade"] for e in ticks]
    degrading = sum(e.fields["directive"].startswith("degrade") for e in ticks)
    monotone = all(b <= a for a, b in zip(factors, factors[1:]))

    ok = (len(moves) >= 2 and max(per_epoch.values()) <= 1 and min(gaps) >= 100_000
          and not sat.log.of("MigrateStart") and degrading > 0 and monotone)
    verdict(6, ok, f"oscillating run: {len(moves)} moves, {crossings} T_high crossings, max {max(per_epoch.values())} "
                   f"per epoch, min gap {min(gaps) / 1000:.0f} ms; saturated run: "
                   f"{len(sat.log.of('MigrateStart'))} migrations, {degrading} degrade epochs, "
                   f"factor {factors[0]} -> {factors[-1]} monotone={monotone}")


def test_criterion_7_notification_accounting(verdict):
    poll_cpu, _ = notify("poll", False, 1)
    wait_cpu, _ = notify("wait", False, 1)
    idle_wait = completion_stream("wait", 1, 10, 2000, gap_us=1000)
    idle_hybrid = completion_stream("hybrid", 1, 10, 2000, gap_us=1000)
    sat_poll = completion_stream("poll", 32, 10, 100_000)
    sat_hybrid = completion_stream("hybrid", 32, 10, 100_000)
    cpu_gap = abs(idle_hybrid.cpu_util - idle_wait.cpu_util)
    iops_ratio = sat_hybrid.iops / sat_poll.iops
    ok = poll_cpu == 1.0 and wait_cpu == 0.35 and cpu_gap <= 0.01 and abs(iops_ratio - 1) <= 0.05
    verdict(7, ok, f"QD1 cpu poll={poll_cpu} wait={wait_cpu}; idle hybrid-wait cpu gap {cpu_gap * 100:.2f} pp; "
                   f"saturated hybrid/poll iops {iops_ratio:.3f}")


def test_criterion_8_oracles(verdict):
    rng = np.random.default_rng(8)
    notes = []

    p = PROFILES["smartssd"]
    worst = 0.0
    for t in (1, 10, 60, 180):
        T = p.ambient
        for _ in range(round(t / 0.01)):
            T = step_thermal(p, 68, T, 0.01)
        ref = thermal_closed_form(p.ambient, p.ambient, 68, p.thermal_resistance, p.time_constant, t)
        worst = max(worst, abs(T - ref) / ref)
    thermal_ok = worst < 0.01
    notes.append(f"thermal max rel err {worst:.2e}")

    pvals = []
    ranks = ZipfSampler(1000, 0.99).sample(rng, 100_000)
    pvals.append(chi_square_p(np.bincount(ranks - 1, minlength=1000), zipf_pmf(1000, 0.99)))
    blocks = sample_blocks(WorkloadSpec(dist=Distribution.UNIFORM, block_size=4096, address_space=100 * 4096),
                           rng, 100_000)
    pvals.append(chi_square_p(np.bincount(blocks, minlength=100), np.full(100, 0.01)))
    j = np.arange(1, 101, dtype=float)
    mass = j ** -1.5 - (j + 1) ** -1.5
    blocks = sample_blocks(WorkloadSpec(dist=Distribution.PARETO, block_size=4096, address_space=100 * 4096),
                           rng, 100_000)
    pvals.append(chi_square_p(np.bincount(blocks, minlength=100), mass / mass.sum()))
    chi_ok = min(pvals) > 0.01
    notes.append(f"chi-square min p {min(pvals):.3f}")

    r = random.Random(8)
    desc_ok = True
    for _ in range(2000):
        args = (r.randrange(4), r.randrange(16), r.randrange(4), r.getrandbits(64), r.getrandbits(64),
                r.getrandbits(64))
        d = Descriptor(*args)
        raw = encode_descriptor(d)
        desc_ok &= raw == descriptor_bytes(*args) and decode_descriptor(raw) == d
    reqs = generate_stream(WorkloadSpec(dist=Distribution.ZIPFIAN, read_fraction=0.5, rate=5000, poisson=True,
                                        seed=8), count=5000)
    trace_ok = parse_trace(format_trace(reqs)) == reqs
    notes.append(f"descriptor round-trip {desc_ok}, trace round-trip {trace_ok}")

    fifo_ok = True
    for depth in (1, 2, 8, 64):
        ring, ref = Ring(None, depth), ReferenceFifo(depth)
        for i in range(20_000):
            if r.random() < 0.55:
                d = Descriptor(input_handle=i)
                fifo_ok &= ring.push(d) == ref.push(d)
            else:
                fifo_ok &= ring.pop() == ref.pop()
    notes.append(f"ring FIFO equivalence {fifo_ok}")

    verdict(8, thermal_ok and chi_ok and desc_ok and trace_ok and fifo_ok, "; ".join(notes))


def test_criterion_9_determinism(verdict, tmp_path):
    names = ("migration_latency", "hysteresis", "rocksdb_mix")
    mismatched = []
    for name in names:
        s = load(name)
        if name == "rocksdb_mix":
            s = replace(s, faults=replace(s.faults, crashes_ms=(500.0,)))
        outputs = []
        for run in ("a", "b"):
            paths = emit_reports(run_scenario(s), tmp_path / run / name)
            outputs.append({k: p.read_bytes() for k, p in paths.items()})
        if outputs[0] != outputs[1]:
            mismatched.append(name)
    suffix = f", mismatches in {mismatched}" if mismatched else ""
    verdict(9, not mismatched, f"{len(names)} scenarios run twice, byte-identical logs and CSVs{suffix}")
