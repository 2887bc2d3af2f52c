"""Drain-and-switch migration with a two-phase-commit checkpoint record.

Protocol per actor:

1. route new requests to the destination (buffered there, not executed);
2. let the source finish everything already queued at it;
3. write the control-state checkpoint into the region, then set ``ready``;
4. ring the destination's doorbell; it rebuilds the actor, reattaches the
   shared spans and sets ``active``.

Only the control-state blob is written. Shared spans change owner (epoch
bump) but their bytes never move.
"""

from __future__ import annotations

import math
import struct
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from .actor import (
    ActorStatus,
    Placement,
    StorageActor,
    checkpoint_control_state,
    restore_control_state,
)
from .region import GiB, Owner, RelocationError, SharedRegion, SpanClass

RECORD_MAGIC = b"RVSMIGR\x00"
_RECORD = struct.Struct("<8sQIBBBBQ")
RECORD_HEADER = _RECORD.size


class MigrationError(RuntimeError):
    pass


class CorruptRecord(ValueError):
    pass


class MigrationPhase(str, Enum):
    ROUTING = "routing"
    DRAINING = "draining"
    CHECKPOINTED = "checkpointed"
    ACTIVATED = "activated"
    COMPLETED = "completed"
    ROLLED_BACK = "rolled_back"


_LEGAL = {
    MigrationPhase.ROUTING: {MigrationPhase.DRAINING, MigrationPhase.ROLLED_BACK},
    MigrationPhase.DRAINING: {MigrationPhase.CHECKPOINTED, MigrationPhase.ROLLED_BACK},
    MigrationPhase.CHECKPOINTED: {MigrationPhase.ACTIVATED, MigrationPhase.ROLLED_BACK},
    MigrationPhase.ACTIVATED: {MigrationPhase.COMPLETED},
}


@dataclass(frozen=True)
class MigrationRecord:
    actor_id: int
    seq: int
    blob: bytes
    ready: bool = False
    active: bool = False
    source: Placement = Placement.HOST
    dest: Placement = Placement.DEVICE

    def __post_init__(self):
        if self.active and not self.ready:
            raise ValueError("active implies ready")

    def encode(self) -> bytes:
        # the two reserved header bytes carry source and destination placement
        return _RECORD.pack(
            RECORD_MAGIC, self.seq, self.actor_id, int(self.ready), int(self.active),
            int(self.source), int(self.dest), len(self.blob),
        ) + self.blob

    @classmethod
    def decode(cls, raw: bytes) -> MigrationRecord:
        if raw is None or len(raw) < RECORD_HEADER:
            raise CorruptRecord("truncated record")
        magic, seq, aid, ready, active, src, dst, blen = _RECORD.unpack_from(raw)
        if magic != RECORD_MAGIC:
            raise CorruptRecord("bad magic")
        if len(raw) != RECORD_HEADER + blen:
            raise CorruptRecord("blob length mismatch")
        if ready > 1 or active > 1 or (active and not ready) or src > 1 or dst > 1:
            raise CorruptRecord("invalid flag bytes")
        return cls(aid, seq, bytes(raw[RECORD_HEADER:]), bool(ready), bool(active), Placement(src), Placement(dst))


@dataclass(frozen=True)
class MigrationCosts:
    checkpoint_fixed_us: int = 5
    doorbell_us: int = 1
    reconstruct_us: int = 20
    pmr_write_Bps: float = 3.3 * GiB

    def checkpoint_us(self, blob_len: int) -> int:
        return math.ceil(blob_len * 1e6 / self.pmr_write_Bps) + self.checkpoint_fixed_us


@dataclass
class Migration:
    actor_id: int
    seq: int
    source: Placement
    dest: Placement
    t_start: int
    phase: MigrationPhase = MigrationPhase.ROUTING
    timeline: list[tuple[int, MigrationPhase]] = field(default_factory=list)
    buffer: deque = field(default_factory=deque)
    blob: bytes = b""
    t_drained: int | None = None
    t_active: int | None = None

    @property
    def switch_us(self) -> int | None:
        """Checkpoint through activation: the part of the protocol that is not draining."""
        if self.t_drained is None or self.t_active is None:
            return None
        return self.t_active - self.t_drained


def _owner(p: Placement) -> Owner:
    return Owner.HOST if p == Placement.HOST else Owner.DEVICE


class MigrationManager:
    """Bookkeeping for in-flight migrations. The engine drives the timing."""

    def __init__(self, region: SharedRegion, costs: MigrationCosts | None = None, max_blob: int = 8192):
        self.region = region
        self.costs = costs or MigrationCosts()
        self.max_blob = max_blob
        self.active: dict[int, Migration] = {}
        self.history: list[Migration] = []
        meta = region.meta
        meta.setdefault("record_slots", {})
        meta.setdefault("placement", {})
        meta.setdefault("seq", {})
        meta.setdefault("intents", {})

    # persistent slots ------------------------------------------------------

    def register(self, actor: StorageActor) -> None:
        slots = self.region.meta["record_slots"]
        if actor.actor_id not in slots:
            slots[actor.actor_id] = self.region.allocate(
                RECORD_HEADER + self.max_blob, SpanClass.METADATA, actor_tag=actor.actor_id
            )
        self.region.meta["placement"][actor.actor_id] = actor.placement

    def read_record(self, actor_id: int) -> MigrationRecord | None:
        raw = self.region.pages[self.region.meta["record_slots"][actor_id]].data
        return None if raw is None else MigrationRecord.decode(raw)

    def _write_record(self, rec: MigrationRecord) -> None:
        self.region.store(self.region.meta["record_slots"][rec.actor_id], rec.encode())

    # protocol --------------------------------------------------------------

    def status(self, actor_id: int) -> MigrationPhase:
        if actor_id not in self.region.meta["placement"]:
            raise KeyError(f"unknown actor {actor_id}")
        m = self.active.get(actor_id)
        return m.phase if m else MigrationPhase.COMPLETED

    def _advance(self, m: Migration, phase: MigrationPhase, t: int) -> None:
        if phase not in _LEGAL.get(m.phase, set()):
            raise MigrationError(f"illegal transition {m.phase.value} -> {phase.value}")
        m.phase = phase
        m.timeline.append((t, phase))

    def begin(self, actor: StorageActor, dest: Placement, t: int, allow_self: bool = True) -> Migration:
        aid = actor.actor_id
        if aid not in self.region.meta["placement"]:
            raise KeyError(f"unknown actor {aid}")
        if aid in self.active:
            raise MigrationError(f"actor {aid} is already migrating")
        if dest == actor.placement and not allow_self:
            raise MigrationError(f"actor {aid} already on {actor.placement.name.lower()}")
        seq = self.region.meta["seq"].get(aid, 0) + 1
        m = Migration(aid, seq, actor.placement, Placement(dest), t)
        m.timeline.append((t, MigrationPhase.ROUTING))
        self._advance(m, MigrationPhase.DRAINING, t)
        actor.status = ActorStatus.DRAINING
        self.active[aid] = m
        self.region.meta["intents"][aid] = Placement(dest)
        return m

    def checkpoint(self, m: Migration, actor: StorageActor, t: int) -> int:
        """Write the checkpoint (not yet ready); return when the write lands."""
        m.blob = checkpoint_control_state(actor, self.max_blob)
        m.t_drained = t
        self.region.meta["seq"][m.actor_id] = m.seq
        self._write_record(MigrationRecord(m.actor_id, m.seq, m.blob, False, False, m.source, m.dest))
        for handle in actor.shared_handles:
            self.region.begin_relocation(handle)
        actor.status = ActorStatus.MIGRATING
        return t + self.costs.checkpoint_us(len(m.blob))

    def mark_ready(self, m: Migration, t: int) -> int:
        """Set the ready flag; return the doorbell time."""
        self._write_record(MigrationRecord(m.actor_id, m.seq, m.blob, True, False, m.source, m.dest))
        self._advance(m, MigrationPhase.CHECKPOINTED, t)
        return t + self.costs.doorbell_us

    def doorbell(self, m: Migration, t: int) -> int:
        return t + self.costs.reconstruct_us

    def activate(self, m: Migration, t: int) -> StorageActor:
        """Rebuild the actor at the destination from the region and set active."""
        rec = self.read_record(m.actor_id)
        if rec is None or rec.seq != m.seq or not rec.ready:
            raise MigrationError(f"actor {m.actor_id}: no ready checkpoint for seq {m.seq}")
        actor = restore_control_state(rec.blob, m.dest, now=t)
        for handle in actor.shared_handles:
            self.region.complete_relocation(handle, _owner(m.dest))
        self._write_record(MigrationRecord(m.actor_id, m.seq, m.blob, True, True, m.source, m.dest))
        self.region.meta["placement"][m.actor_id] = m.dest
        self.region.meta["intents"].pop(m.actor_id, None)
        m.t_active = t
        self._advance(m, MigrationPhase.ACTIVATED, t)
        return actor

    def finish(self, m: Migration, t: int) -> None:
        self._advance(m, MigrationPhase.COMPLETED, t)
        del self.active[m.actor_id]
        self.history.append(m)

    def forget_volatile(self, t: int) -> list[Migration]:
        """Crash: in-flight protocol state is lost; return what was interrupted."""
        lost = list(self.active.values())
        for m in lost:
            m.timeline.append((t, MigrationPhase.ROLLED_BACK))
            m.phase = MigrationPhase.ROLLED_BACK
            self.history.append(m)
        self.active.clear()
        return lost


class RecoveryAction(str, Enum):
    NOOP = "noop"
    REPLAY_SOURCE = "replay_source"  # crash before ready
    ROLLBACK = "rollback"  # crash between ready and active
    COMMIT = "commit"  # crash after active; finish ownership transfer


@dataclass(frozen=True)
class RecoveryOutcome:
    actor_id: int
    action: RecoveryAction
    placement: Placement
    retry_dest: Placement | None = None


def recover(region: SharedRegion) -> list[RecoveryOutcome]:
    """Resolve every migration record left in the region after a crash.

    Spans caught mid-relocation are handed back to whichever side ends up
    owning the actor. A record that cannot be decoded is handled as if the
    crash hit before ``ready`` was set.
    """
    meta = region.meta
    placement = meta.get("placement", {})
    intents = meta.get("intents", {})
    outcomes = []
    for aid, slot in sorted(meta.get("record_slots", {}).items()):
        page = region.pages[slot]
        try:
            rec = None if page.data is None else MigrationRecord.decode(page.data)
        except CorruptRecord:
            rec = None
            page.data = None
            action = RecoveryAction.REPLAY_SOURCE
        else:
            if rec is None:
                action = RecoveryAction.NOOP
            elif rec.active:
                action = RecoveryAction.NOOP if placement.get(aid) == rec.dest else RecoveryAction.COMMIT
            elif rec.ready:
                action = RecoveryAction.ROLLBACK
            else:
                action = RecoveryAction.REPLAY_SOURCE

        if action == RecoveryAction.COMMIT:
            placement[aid] = rec.dest
        elif action in (RecoveryAction.ROLLBACK, RecoveryAction.REPLAY_SOURCE):
            if rec is not None:
                placement[aid] = rec.source
                page.data = None  # orphaned checkpoint discarded; seq stays consumed
        owner = _owner(placement[aid])
        for p in region.pages.values():
            if p.actor_tag == aid and p.owner is Owner.MIGRATING:
                try:
                    region.complete_relocation(p.offset, owner)
                except RelocationError:  # pragma: no cover - guarded by the owner check
                    pass
                if action == RecoveryAction.NOOP:
                    action = RecoveryAction.REPLAY_SOURCE
        retry = intents.get(aid)
        if retry is not None and action == RecoveryAction.NOOP and rec is None:
            action = RecoveryAction.REPLAY_SOURCE
        outcomes.append(RecoveryOutcome(aid, action, placement[aid], retry))
    return outcomes
