"""Deterministic discrete-event engine.

Virtual time is an integer count of microseconds. Events are ordered by
``(t, seq)`` with ``seq`` taken from a single insertion counter, so a
scenario and seed fully determine the event log.

Persistence model used for crash injection: the region (placement table,
migration records, actor counters, written data) and the per-actor submission
queues survive a crash, as do client arrivals and device-side NAND draining.
Everything else (requests in service, protocol steps in flight, telemetry
ticks, actor sandboxes) is lost and rebuilt on restart.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable

from .actor import (
    ActorStatus,
    Placement,
    StorageActor,
    execute_stage,
    instantiate_pipeline,
)
from .metrics import EventLog, Metrics, collect_metrics
from .migration import (
    CorruptRecord,
    Migration,
    MigrationCosts,
    MigrationManager,
    MigrationPhase,
    RecoveryAction,
    recover,
)
from .platform import Notifier, Platform, device_power, step_thermal, throttle_factor
from .region import DurabilityState, GiB, Owner, SharedRegion, SpanClass
from .scenario import Scenario, ScenarioError
from .scheduler import (
    DirectiveKind,
    History,
    PlatformState,
    decide_placement,
    next_degrade_factor,
    record_migration,
    sample_telemetry,
)
from .workload import Kind, Mode, Request, RequestStream, replay_trace


class EventKind(str, Enum):
    SUBMIT = "Submit"
    STAGE_DONE = "StageDone"
    DRAIN_DONE = "DrainDone"
    DOORBELL = "Doorbell"
    EPOCH_TICK = "EpochTick"
    NAND_DRAIN = "NandDrain"
    CRASH = "Crash"
    BARRIER_DONE = "BarrierDone"
    CUSTOM = "Custom"


# kinds that survive a crash; CUSTOM survives only for forced moves and restart
_DURABLE = {EventKind.SUBMIT, EventKind.NAND_DRAIN, EventKind.CRASH}


class InvariantViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class CrashSnapshot:
    """What was durable and acknowledged at the instant of a crash."""

    t: int
    durable_writes: tuple[tuple[int, int, int], ...]
    completed: frozenset[int]
    interrupted: tuple[tuple[int, Placement, MigrationPhase], ...]


@dataclass
class RunResult:
    scenario: Scenario
    log: EventLog
    metrics: Metrics
    submitted: int
    completed: int
    pending: int
    bytes_submitted: int
    bytes_completed: int
    migrations: list[Migration] = field(default_factory=list)
    crashes: int = 0
    recoveries: list[Any] = field(default_factory=list)

    @property
    def completed_migrations(self) -> list[Migration]:
        return [m for m in self.migrations if m.phase == MigrationPhase.COMPLETED]


class Simulation:
    def __init__(self, scenario: Scenario):
        scenario.validate()
        self.s = scenario
        self.platform = Platform(scenario.host, scenario.device)
        self.policy = scenario.policy
        self.epoch_us = self.policy.epoch_us
        self.horizon = round(scenario.duration_s * 1e6)
        rc = scenario.region
        self.region = SharedRegion(
            capacity=int(rc.capacity_GiB * GiB), nand_drain_Bps=rc.nand_drain_GiBps * GiB, gpf_us=rc.gpf_us
        )
        mc = scenario.migration
        self.mig = MigrationManager(
            self.region,
            MigrationCosts(mc.checkpoint_fixed_us, mc.doorbell_us, mc.reconstruct_us, mc.pmr_write_GiBps * GiB),
            max_blob=mc.max_control_state,
        )
        self.log = EventLog()
        self.t = 0
        self._heap: list[tuple[int, int, EventKind, Any]] = []
        self._seq = 0
        self._cur_seq = 0
        self._nominal = 0
        self.events_processed = 0

        self.actors: dict[int, StorageActor] = {}
        self.queues: dict[int, deque[Request]] = {}
        self.busy: dict[int, tuple[Request, int, int] | None] = {}
        self.pools: dict[int, list[int]] = {}
        self._build_actors()

        wl = replace(scenario.workload, seed=scenario.seed)
        self.workload = wl
        self._trace: list[Request] | None = replay_trace(wl.trace) if wl.trace else None
        self._trace_pos = 0
        self.stream = RequestStream(wl)
        self._data_span = self._allocate_data(wl.address_space)

        self.pending: dict[int, Request] = {}
        self.completed: set[int] = set()
        self.submitted = 0
        self.bytes_submitted = 0
        self.bytes_completed = 0
        self._last_write: int | None = None
        self._drain_scheduled = False

        self.history = History(residency_since={aid: 0 for aid in self.actors})
        self.degrade = 1.0
        self.temp = scenario.device.ambient
        self.throttle = throttle_factor(scenario.device, self.temp)
        self.notifier = Notifier(scenario.notification)
        self._last_tick = 0
        self._busy_acc = {aid: 0 for aid in self.actors}
        self._io_acc = 0
        self._io_since: int | None = None
        self._saw_empty = False
        self._stalled: set[int] = set()

        self.down = False
        self.crashes = 0
        self.recoveries: list[Any] = []
        self.crash_snapshots: list[CrashSnapshot] = []
        self._crash_after = scenario.faults.crash_after_event

    # construction ------------------------------------------------------------

    def _build_actors(self) -> None:
        aid = 0
        for group in self.s.actors:
            for _ in range(group.count):
                shared = self.region.allocate(4096, SpanClass.METADATA, actor_tag=aid)
                page = self.region.pages[shared]
                page.owner = page.stable_owner = Owner.HOST if group.placement == Placement.HOST else Owner.DEVICE
                actor = StorageActor(
                    actor_id=aid,
                    stage=group.stage,
                    placement=group.placement,
                    request_class=group.request_class,
                    control_state_bytes=group.control_state_bytes,
                    shared_handles=[shared],
                )
                self.actors[aid] = actor
                self.queues[aid] = deque()
                self.busy[aid] = None
                self.pools.setdefault(int(group.stage), []).append(aid)
                self.mig.register(actor)
                self.region.meta.setdefault("counters", {})[aid] = (0, 0)
                aid += 1
        self._pipelines: dict[tuple[int, int], tuple] = {}

    def _allocate_data(self, span: int) -> tuple[int, int]:
        rc = self.s.region
        free = self.region.capacity - self.region._next - 64
        if span > free:
            if rc.nand_fallback_us <= 0:
                raise ScenarioError(
                    f"workload address space {span} B exceeds the persistent region; "
                    "set region.nand_fallback_us to model the NAND tier"
                )
            span = max(64, free)
        return self.region.allocate(span, SpanClass.DATA), span

    # event plumbing ----------------------------------------------------------

    def push(self, t: int, kind: EventKind, payload: Any = None) -> None:
        heapq.heappush(self._heap, (t, self._seq, kind, payload))
        self._seq += 1

    def _record(self, event: str, seq: int, /, **fields) -> None:
        self.log.append(self.t, seq, event, fields)

    # request lifecycle -------------------------------------------------------

    def _pipeline(self, req: Request):
        key = (req.opcode, req.flags)
        spec = self._pipelines.get(key)
        if spec is None:
            spec = instantiate_pipeline(req.descriptor, req.request_class).stages
            self._pipelines[key] = spec
        return spec

    def _actor_for(self, req: Request) -> int:
        head = self._pipeline(req)[0]
        pool = self.pools.get(int(head))
        if not pool:
            raise InvariantViolation(f"no actor serves stage {head.name.lower()}")
        return pool[req.id % len(pool)]

    def _submit(self, req: Request, seq: int) -> None:
        if req.id in self.pending or req.id in self.completed:
            raise InvariantViolation(f"request {req.id} submitted twice")
        self.pending[req.id] = req
        self.submitted += 1
        self.bytes_submitted += req.length
        if self._io_since is None:
            self._io_since = self.t
        aid = self._actor_for(req)
        self._record("Submit", seq, id=req.id, actor=aid, op=req.kind.value, len=req.length)
        self._route(req, aid)

    def _route(self, req: Request, aid: int) -> None:
        m = self.mig.active.get(aid)
        if m is not None:
            m.buffer.append(req)
            return
        self.queues[aid].append(req)
        self._kick(aid)

    def _kick(self, aid: int) -> None:
        if self.down or self.busy[aid] is not None or not self.queues[aid]:
            return
        actor = self.actors[aid]
        if actor.status is ActorStatus.MIGRATING:
            return
        slowdown = 1.0
        if actor.placement == Placement.DEVICE:
            if self.throttle <= 0.0:
                self._stalled.add(aid)
                return
            slowdown = 1.0 / self.throttle
        self._stalled.discard(aid)
        req = self.queues[aid].popleft()
        length = req.length
        total = 0
        for stage in self._pipeline(req):
            length, service = execute_stage(
                actor, length, None, self.platform,
                stage=stage, compression_ratio=self.s.compression_ratio, slowdown=slowdown,
            )
            total += service
        actor.in_flight += 1
        self.busy[aid] = (req, self.t, self.t + total)
        self.push(self.t + total, EventKind.STAGE_DONE, aid)

    def _on_stage_done(self, aid: int, seq: int) -> None:
        req, t_start, _ = self.busy[aid]
        self.busy[aid] = None
        actor = self.actors[aid]
        actor.in_flight -= 1
        self._busy_acc[aid] += self.t - max(t_start, self._last_tick)
        self._complete(req, aid, seq)
        m = self.mig.active.get(aid)
        if m is not None and m.phase == MigrationPhase.DRAINING and not self.queues[aid]:
            self.push(self.t, EventKind.DRAIN_DONE, aid)
        self._kick(aid)
        self._refill()

    def _complete(self, req: Request, aid: int, seq: int) -> None:
        if req.id in self.completed:
            raise InvariantViolation(f"request {req.id} completed twice")
        if req.id not in self.pending:
            raise InvariantViolation(f"request {req.id} completed without being pending")
        del self.pending[req.id]
        self.completed.add(req.id)
        self.bytes_completed += req.length
        actor = self.actors[aid]
        self.region.meta["counters"][aid] = (actor.bytes_processed, actor.requests_processed)
        wid = -1
        extra = 0
        if req.kind == Kind.WRITE:
            base, span = self._data_span
            off = req.address % span
            if req.address >= span:
                extra = self.s.region.nand_fallback_us
            if off + req.length > span:
                off = max(0, span - req.length)
            length = min(req.length, span)
            wid = self.region.record_write(base + off, length, self.t)
            self.region.acknowledge(wid)
            self._last_write = wid
            if not self._drain_scheduled:
                self.push(self.region.writes[wid].drain_done, EventKind.NAND_DRAIN)
                self._drain_scheduled = True
        _, wake = self.notifier.cost(len(self.pending) + 1)
        latency = self.t - req.t_submit + round(wake) + extra
        self._record("Complete", seq, id=req.id, actor=aid, lat=latency, bytes=req.length, write=wid)
        if not self.pending and self._io_since is not None:
            self._io_acc += self.t - max(self._io_since, self._last_tick)
            self._io_since = None
            self._saw_empty = True

    # workload sources --------------------------------------------------------

    def _closed(self) -> bool:
        return self._trace is None and self.workload.mode == Mode.CLOSED

    def _target_qd(self) -> int:
        return max(1, math.floor(self.workload.qd * self.degrade + 1e-9))

    def _refill(self) -> None:
        if not self._closed() or self.down:
            return
        while len(self.pending) < self._target_qd() and self.t < self.horizon:
            self._submit(self.stream.next(self.t), self._cur_seq)

    def _schedule_next_arrival(self) -> None:
        if self._trace is not None:
            if self._trace_pos < len(self._trace):
                req = self._trace[self._trace_pos]
                if req.t_submit < self.horizon:
                    self.push(req.t_submit, EventKind.SUBMIT, None)
            return
        nominal = self.stream.next_arrival()
        gap = max(0, nominal - self._nominal)
        self._nominal = nominal
        # admission throttling stretches inter-arrival gaps
        t = self.t + round(gap / self.degrade)
        if t < self.horizon:
            self.push(t, EventKind.SUBMIT, None)

    def _on_submit(self, seq: int) -> None:
        if self._trace is not None:
            req = self._trace[self._trace_pos]
            self._trace_pos += 1
            req = replace(req, t_submit=self.t)
        else:
            req = replace(self.stream.next(), t_submit=self.t)
        self._submit(req, seq)
        self._schedule_next_arrival()

    # migration ---------------------------------------------------------------

    def begin_migration(self, aid: int, dest: Placement, reason: str = "forced") -> Migration:
        actor = self.actors[aid]
        m = self.mig.begin(actor, dest, self.t, allow_self=self.s.migration.allow_self)
        seq = self._cur_seq
        self._record(
            "MigrateStart", seq, actor=aid, seq=m.seq,
            src=m.source.name.lower(), dest=m.dest.name.lower(), reason=reason,
            inflight=len(self.queues[aid]) + (self.busy[aid] is not None),
        )
        self._record("Phase", seq, actor=aid, phase=MigrationPhase.ROUTING.value)
        self._record("Phase", seq, actor=aid, phase=MigrationPhase.DRAINING.value)
        if self.busy[aid] is None and not self.queues[aid]:
            self.push(self.t, EventKind.DRAIN_DONE, aid)
        return m

    def _on_drain_done(self, aid: int, seq: int) -> None:
        m = self.mig.active.get(aid)
        if m is None or m.phase != MigrationPhase.DRAINING or self.busy[aid] is not None or self.queues[aid]:
            return
        actor = self.actors[aid]
        t_ready = self.mig.checkpoint(m, actor, self.t)
        self._record("DrainDone", seq, actor=aid, drain_us=self.t - m.t_start, ckpt_bytes=len(m.blob))
        self.push(t_ready, EventKind.CUSTOM, ("ready", aid))

    def _on_ready(self, aid: int, seq: int) -> None:
        m = self.mig.active[aid]
        t_bell = self.mig.mark_ready(m, self.t)
        self._record("Phase", seq, actor=aid, phase=MigrationPhase.CHECKPOINTED.value)
        self.push(t_bell, EventKind.DOORBELL, aid)

    def _on_doorbell(self, aid: int, seq: int) -> None:
        m = self.mig.active[aid]
        self._record("Doorbell", seq, actor=aid)
        self.push(self.mig.doorbell(m, self.t), EventKind.CUSTOM, ("active", aid))

    def _on_active(self, aid: int, seq: int) -> None:
        m = self.mig.active[aid]
        actor = self.mig.activate(m, self.t)
        self.actors[aid] = actor
        self._record(
            "Phase", seq, actor=aid, phase=MigrationPhase.ACTIVATED.value,
            switch_us=m.switch_us, total_us=self.t - m.t_start, bytes_copied=len(m.blob),
            placement=actor.placement.name.lower(),
        )
        self.mig.finish(m, self.t)
        self._record("Phase", seq, actor=aid, phase=MigrationPhase.COMPLETED.value)
        self.queues[aid].extend(m.buffer)
        m.buffer.clear()
        self._kick(aid)

    def _on_forced(self, aid: int, dest: Placement, seq: int) -> None:
        if self.down or aid in self.mig.active:
            self._record("MigrateSkip", seq, actor=aid, reason="down" if self.down else "in_flight")
            return
        self.history.residency_since[aid] = self.t
        self.begin_migration(aid, dest, "forced")

    # telemetry and scheduling -------------------------------------------------

    def _on_tick(self, seq: int) -> None:
        span = self.t - self._last_tick
        if span > 0:
            remaining = span
            while remaining > 0:
                step = min(remaining, self.epoch_us)
                dt = step / 1e6
                power_now = self._power(span)
                self.temp = step_thermal(self.s.device, power_now, self.temp, dt)
                remaining -= step
        power = self._power(span) if span > 0 else 0.0
        io = self._io_fraction(span)
        host_busy = 0.0
        for aid, actor in self.actors.items():
            busy = self._busy_acc[aid]
            entry = self.busy[aid]
            if entry is not None:
                busy += self.t - max(entry[1], self._last_tick)
            if actor.placement == Placement.HOST:
                host_busy += busy
        cpu, _ = self.notifier.notify(self._saw_empty or not self.pending, max(1, len(self.pending)))
        host = self.s.host
        host_util = host.background_util
        if span > 0:
            host_util += (host_busy / span + cpu * io) / host.cores
        host_util = min(1.0, host_util)
        self.throttle = throttle_factor(self.s.device, self.temp)
        tel = sample_telemetry(
            PlatformState(
                device_temp=self.temp, host_util=host_util, host_freq=host.freq,
                device_util=io, queue_depth=len(self.pending), device_power=power,
            ),
            self.t, self.epoch_us,
        )
        directive_text = "none"
        if self.s.scheduler:
            contributions = {
                aid: self.s.device.per_actor_power * self._busy_fraction(aid, span)
                for aid, a in self.actors.items() if a.placement == Placement.DEVICE
            }
            directive = decide_placement(
                tel, self.actors.values(), self.policy, self.history, power=contributions,
                host_throttling=host.freq < host.throttle_freq, busy=self.mig.active.keys(),
            )
            if directive.kind in (DirectiveKind.UPLOAD, DirectiveKind.OFFLOAD):
                if self.s.migration.enabled:
                    dest = Placement.HOST if directive.kind == DirectiveKind.UPLOAD else Placement.DEVICE
                    record_migration(self.history, directive.actor_id, self.t, self.policy)
                    self.begin_migration(directive.actor_id, dest, directive.kind.value)
                    directive_text = str(directive)
            else:
                directive_text = str(directive)
            self.degrade = next_degrade_factor(self.history, directive, self.policy)
            self.history.degrade_factor = self.degrade
            self.history.last_directive = directive
        self._record(
            "EpochTick", seq, temp=round(self.temp, 6), power=round(power, 6), host_util=round(host_util, 6),
            device_util=round(io, 6), freq=host.freq, qd=len(self.pending), throttle=self.throttle,
            degrade=round(self.degrade, 6), directive=directive_text,
        )
        self._last_tick = self.t
        self._busy_acc = {aid: 0 for aid in self.actors}
        self._io_acc = 0
        self._saw_empty = False
        for aid in sorted(self._stalled):
            self._kick(aid)
        self._refill()
        nxt = self.t + self.epoch_us
        if nxt <= self.horizon:
            self.push(nxt, EventKind.EPOCH_TICK)

    def _busy_fraction(self, aid: int, span: int) -> float:
        if span <= 0:
            return 0.0
        busy = self._busy_acc[aid]
        entry = self.busy[aid]
        if entry is not None:
            busy += self.t - max(entry[1], self._last_tick)
        return min(1.0, busy / span)

    def _io_fraction(self, span: int) -> float:
        if span <= 0:
            return 0.0
        acc = self._io_acc
        if self._io_since is not None:
            acc += self.t - max(self._io_since, self._last_tick)
        return min(1.0, acc / span)

    def _power(self, span: int) -> float:
        busy = [self._busy_fraction(aid, span) for aid, a in self.actors.items() if a.placement == Placement.DEVICE]
        return device_power(self.s.device, self._io_fraction(span), busy)

    # NAND drain --------------------------------------------------------------

    def _on_nand_drain(self, seq: int) -> None:
        landed = self.region.drain(self.t)
        self._drain_scheduled = False
        if landed:
            self._record("NandDrain", seq, writes=len(landed), last=landed[-1])
        cursor = self.region._cursor
        if cursor < len(self.region.writes):
            self.push(max(self.t, self.region.writes[cursor].drain_done), EventKind.NAND_DRAIN)
            self._drain_scheduled = True

    def persistence_barrier(self, up_to: int | None = None) -> int:
        """Schedule a barrier over writes ``<= up_to`` (default: latest); return its completion time."""
        if up_to is None:
            up_to = self._last_write
        done = self.region.persistence_barrier(up_to, self.t)
        self.push(done, EventKind.BARRIER_DONE, up_to)
        return done

    # crashes -----------------------------------------------------------------

    def crash(self, seq: int | None = None) -> None:
        self.crashes += 1
        seq = self._cur_seq if seq is None else seq
        lost = self.mig.forget_volatile(self.t)
        self.crash_snapshots.append(CrashSnapshot(
            t=self.t,
            durable_writes=tuple((w.write_id, w.offset, w.length) for w in self.region.completed_writes()),
            completed=frozenset(self.completed),
            interrupted=tuple((m.actor_id, m.dest, m.phase) for m in lost),
        ))
        in_service = sum(1 for b in self.busy.values() if b is not None)
        self._record("Crash", seq, interrupted=len(lost), in_service=in_service, pending=len(self.pending))
        for aid, entry in self.busy.items():
            if entry is not None:
                self.actors[aid].in_flight -= 1
                self.busy[aid] = None
        kept = [
            e for e in self._heap
            if e[2] in _DURABLE or (e[2] == EventKind.CUSTOM and e[3][0] == "forced")
        ]
        heapq.heapify(kept)
        self._heap = kept
        self.down = True
        self.push(self.t + self.s.faults.restart_us, EventKind.CUSTOM, ("restart", None))

    def _on_restart(self, seq: int) -> None:
        outcomes = recover(self.region)
        self.recoveries.append((self.t, outcomes))
        placement = self.region.meta["placement"]
        counters = self.region.meta["counters"]
        for aid, old in list(self.actors.items()):
            nbytes, nreqs = counters[aid]
            self.actors[aid] = StorageActor(
                actor_id=aid, stage=old.stage, placement=placement[aid], request_class=old.request_class,
                control_state_bytes=old.control_state_bytes, shared_handles=list(old.shared_handles),
                residency_since=self.t, bytes_processed=nbytes, requests_processed=nreqs,
            )
            self.history.residency_since[aid] = self.t
            self.queues[aid].clear()
        for o in outcomes:
            if o.action != RecoveryAction.NOOP or o.retry_dest is not None:
                self._record(
                    "Recover", seq, actor=o.actor_id, action=o.action.value,
                    placement=o.placement.name.lower(),
                    retry="" if o.retry_dest is None else o.retry_dest.name.lower(),
                )
        self.down = False
        for rid in sorted(self.pending):
            req = self.pending[rid]
            self.queues[self._actor_for(req)].append(req)
        for o in outcomes:
            if o.retry_dest is None:
                continue
            if self.s.migration.retry_interrupted:
                self.begin_migration(o.actor_id, o.retry_dest, "retry")
            else:
                self.region.meta["intents"].pop(o.actor_id, None)
        if self.pending and self._io_since is None:
            self._io_since = self.t
        for aid in self.actors:
            self._kick(aid)
        self._refill()
        nxt = (self.t // self.epoch_us + 1) * self.epoch_us
        if nxt <= self.horizon:
            self.push(nxt, EventKind.EPOCH_TICK)

    # main loop ----------------------------------------------------------------

    def start(self) -> None:
        self.push(0, EventKind.EPOCH_TICK)
        for move in self.s.migration.forced:
            self.push(round(move.t_ms * 1000), EventKind.CUSTOM, ("forced", (move.actor_id, move.dest)))
        for t_ms in self.s.faults.crashes_ms:
            self.push(round(t_ms * 1000), EventKind.CRASH)
        if self._closed():
            self._refill()
        else:
            self._schedule_next_arrival()
        self._started = True

    def step(self) -> bool:
        if not self._heap or self._heap[0][0] > self.horizon:
            return False
        t, seq, kind, payload = heapq.heappop(self._heap)
        if t < self.t:
            raise InvariantViolation(f"clock moved backwards: {t} < {self.t}")
        self.t = t
        self._cur_seq = seq
        self._dispatch(kind, payload, seq)
        self.events_processed += 1
        if self.events_processed == self._crash_after:
            self.crash()
        return True

    def _dispatch(self, kind: EventKind, payload: Any, seq: int) -> None:
        if kind == EventKind.SUBMIT:
            if self.down:
                restart = min(e[0] for e in self._heap if e[2] == EventKind.CUSTOM and e[3][0] == "restart")
                self.push(restart, EventKind.SUBMIT, payload)
                return
            self._on_submit(seq)
        elif kind == EventKind.STAGE_DONE:
            self._on_stage_done(payload, seq)
        elif kind == EventKind.EPOCH_TICK:
            self._on_tick(seq)
        elif kind == EventKind.NAND_DRAIN:
            self._on_nand_drain(seq)
        elif kind == EventKind.DRAIN_DONE:
            self._on_drain_done(payload, seq)
        elif kind == EventKind.DOORBELL:
            self._on_doorbell(payload, seq)
        elif kind == EventKind.CRASH:
            if not self.down:
                self.crash(seq)
        elif kind == EventKind.BARRIER_DONE:
            self._record("BarrierDone", seq, up_to=payload)
        elif kind == EventKind.CUSTOM:
            tag, arg = payload
            if tag == "ready":
                self._on_ready(arg, seq)
            elif tag == "active":
                self._on_active(arg, seq)
            elif tag == "forced":
                self._on_forced(arg[0], arg[1], seq)
            elif tag == "restart":
                self._on_restart(seq)
        else:  # pragma: no cover
            raise InvariantViolation(f"unknown event kind {kind}")

    def run_until(self, stop: Callable[[Simulation], bool] | None = None) -> None:
        if not getattr(self, "_started", False):
            self.start()
        while self.step():
            if stop is not None and stop(self):
                break

    def check_invariants(self) -> None:
        if self.submitted != len(self.completed) + len(self.pending):
            raise InvariantViolation(
                f"accounting: submitted={self.submitted} completed={len(self.completed)} pending={len(self.pending)}"
            )
        if self.bytes_submitted != self.bytes_completed + sum(r.length for r in self.pending.values()):
            raise InvariantViolation("byte conservation violated")

    def result(self) -> RunResult:
        self.check_invariants()
        metrics = collect_metrics(self.log, self.s.output.window_ms, self.horizon)
        return RunResult(
            scenario=self.s,
            log=self.log,
            metrics=metrics,
            submitted=self.submitted,
            completed=len(self.completed),
            pending=len(self.pending),
            bytes_submitted=self.bytes_submitted,
            bytes_completed=self.bytes_completed,
            migrations=list(self.mig.history) + list(self.mig.active.values()),
            crashes=self.crashes,
            recoveries=self.recoveries,
        )


def run_scenario(s: Scenario) -> RunResult:
    sim = Simulation(s)
    sim.run_until()
    return sim.result()


def inject_fault(s: Scenario, crashes_ms=(), crash_after_event: int | None = None) -> Scenario:
    """Return ``s`` with crash events added to its fault schedule."""
    faults = s.faults
    for t in crashes_ms:
        if not 0 <= t <= s.duration_s * 1000:
            raise ScenarioError(f"crash at {t} ms lies outside the horizon")
    faults = replace(
        faults,
        crashes_ms=tuple(sorted(faults.crashes_ms + tuple(float(t) for t in crashes_ms))),
        crash_after_event=faults.crash_after_event if crash_after_event is None else crash_after_event,
    )
    return replace(s, faults=faults)


def migrate_actor(sim: Simulation, actor_id: int, dest: Placement) -> list[tuple[int, MigrationPhase]]:
    """Start a migration now and advance the simulation until it completes or is lost."""
    if not getattr(sim, "_started", False):
        sim.start()
    if actor_id not in sim.actors:
        raise KeyError(f"unknown actor {actor_id}")
    m = sim.begin_migration(actor_id, dest)
    sim.run_until(lambda s: m.phase in (MigrationPhase.COMPLETED, MigrationPhase.ROLLED_BACK))
    return list(m.timeline)


def migration_status(sim: Simulation, actor_id: int) -> MigrationPhase:
    return sim.mig.status(actor_id)


def verify_recovery(sim: Simulation) -> list[str]:
    """Check a finished run that crashed at least once; return the problems found."""
    problems = []
    try:
        sim.check_invariants()
    except InvariantViolation as exc:
        problems.append(str(exc))
    region = sim.region
    for snap in sim.crash_snapshots:
        for wid, offset, length in snap.durable_writes:
            w = region.writes[wid] if wid < len(region.writes) else None
            if w is None or (w.offset, w.length) != (offset, length) or w.state < DurabilityState.COMPLETED:
                problems.append(f"write {wid} acknowledged before the crash at {snap.t} was lost")
        missing = snap.completed - sim.completed
        if missing:
            problems.append(f"{len(missing)} requests completed before the crash at {snap.t} are no longer complete")
    placement = region.meta["placement"]
    for aid, actor in sim.actors.items():
        migrating = aid in sim.mig.active
        if not migrating and placement[aid] != actor.placement:
            problems.append(f"actor {aid}: placement table says {placement[aid].name}, actor runs on {actor.placement.name}")
        try:
            sim.mig.read_record(aid)
        except CorruptRecord as exc:
            problems.append(f"actor {aid}: unreadable migration record ({exc})")
        for handle in actor.shared_handles:
            page = region.pages[handle]
            if page.owner is Owner.MIGRATING and not migrating:
                problems.append(f"actor {aid}: span {handle:#x} stuck mid-relocation")
            expected = Owner.HOST if actor.placement == Placement.HOST else Owner.DEVICE
            if page.owner is not Owner.MIGRATING and page.owner is not expected:
                problems.append(f"actor {aid}: span {handle:#x} owned by {page.owner.name}")
    if sim.s.migration.retry_interrupted:
        for snap in sim.crash_snapshots:
            for aid, dest, _ in snap.interrupted:
                if aid not in sim.mig.active and placement[aid] != dest and not region.meta["intents"].get(aid):
                    later = [m for m in sim.mig.history if m.actor_id == aid and m.t_start >= snap.t]
                    if not later:
                        problems.append(f"actor {aid}: interrupted migration to {dest.name} was never retried")
    return problems


@dataclass(frozen=True)
class CrashPoint:
    after_event: int
    t: int
    phase: str
    actions: tuple[str, ...]
    problems: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.problems


def migration_boundaries(s: Scenario, which: int = 0) -> tuple[list[int], dict[int, str]]:
    """Event indices spanning the ``which``-th migration of ``s``.

    Returns the indices ``n`` such that crashing right after the ``n``-th
    processed event lands just before, inside, or just after that
    migration, plus the migration phase observed after each of them.
    """
    sim = Simulation(replace(s, faults=replace(s.faults, crashes_ms=(), crash_after_event=-1)))
    sim.start()
    target = None
    phases: dict[int, str] = {}
    while sim.step():
        n = sim.events_processed
        if target is None:
            started = list(sim.mig.active.values()) + sim.mig.history
            if len(started) > which:
                target = sorted(started, key=lambda m: (m.t_start, m.actor_id))[which]
                phases[n - 1] = "before"
        if target is not None:
            phases[n] = target.phase.value
            if target.phase == MigrationPhase.COMPLETED:
                break
    if target is None:
        raise ScenarioError(f"scenario {s.name!r} performs fewer than {which + 1} migrations")
    return sorted(phases), phases


def crash_sweep(s: Scenario, which: int = 0) -> list[CrashPoint]:
    """Crash once at every event boundary of one migration and verify recovery each time."""
    points, phases = migration_boundaries(s, which)
    results = []
    for n in points:
        sim = Simulation(replace(s, faults=replace(s.faults, crashes_ms=(), crash_after_event=n)))
        problems: list[str] = []
        try:
            sim.run_until()
            problems = verify_recovery(sim)
        except (InvariantViolation, RuntimeError, ValueError) as exc:
            problems = [f"{type(exc).__name__}: {exc}"]
        actions = tuple(
            f"{o.actor_id}:{o.action.value}"
            for _, outcomes in sim.recoveries for o in outcomes if o.action != RecoveryAction.NOOP
        )
        t = sim.crash_snapshots[0].t if sim.crash_snapshots else -1
        if not sim.crash_snapshots:
            problems.append("crash was never injected")
        results.append(CrashPoint(n, t, phases[n], actions, tuple(problems)))
    return results
