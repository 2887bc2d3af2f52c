"""Emulated persistent memory region shared coherently by host and device.

Spans are allocated bump-style and never overlap. Each span carries an epoch
counter and an owner tag; relocation advances the epoch and parks the span in
the ``MIGRATING`` state until the new owner is installed, so readers can
detect a move in progress and retry.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Any

from .actor import DESCRIPTOR_SIZE, Descriptor, decode_descriptor, encode_descriptor

GiB = 1 << 30
DEFAULT_CAPACITY = 32 * GiB
CACHE_LINE = 64


class Owner(Enum):
    HOST = "host"
    DEVICE = "device"
    MIGRATING = "migrating"


class SpanClass(Enum):
    METADATA = "metadata"
    DATA = "data"


class DurabilityState(IntEnum):
    VISIBLE = 0
    COMPLETED = 1
    PERSISTENT = 2


class RegionError(RuntimeError):
    pass


class CapacityExhausted(RegionError):
    pass


class RelocationError(RegionError):
    pass


@dataclass
class Page:
    offset: int
    len: int
    span_class: SpanClass
    epoch: int = 0
    owner: Owner = Owner.HOST
    actor_tag: int | None = None
    data: Any = None
    data_epoch: int = 0
    stable_owner: Owner = Owner.HOST  # owner before the current relocation


@dataclass(frozen=True)
class Retry:
    """Returned by :meth:`SharedRegion.epoch_read` while a span is being relocated."""

    epoch: int


@dataclass
class WriteRecord:
    write_id: int
    offset: int
    length: int
    t: int
    state: DurabilityState
    drain_done: int  # virtual µs at which the NAND copy lands


class SharedRegion:
    def __init__(
        self,
        capacity: int = DEFAULT_CAPACITY,
        nand_drain_Bps: float = 2 * GiB,
        gpf_us: int = 10,
    ):
        self.capacity = capacity
        self.nand_drain_Bps = nand_drain_Bps
        self.gpf_us = gpf_us
        self.pages: dict[int, Page] = {}
        self._starts: list[int] = []
        self._next = 0
        self._free: list[tuple[int, int]] = []
        self.writes: list[WriteRecord] = []
        self._drain_tail = 0
        self._cursor = 0
        # persistent key/value slots used by the runtime (placement table, records, counters)
        self.meta: dict[str, Any] = {}

    # allocation -------------------------------------------------------------

    @property
    def used(self) -> int:
        return sum(p.len for p in self.pages.values())

    def allocate(self, length: int, span_class: SpanClass = SpanClass.DATA, actor_tag: int | None = None) -> int:
        if length <= 0:
            raise RegionError(f"invalid allocation length {length}")
        aligned = -(-length // CACHE_LINE) * CACHE_LINE
        offset = None
        for i, (start, size) in enumerate(self._free):
            if size >= aligned:
                offset = start
                if size == aligned:
                    del self._free[i]
                else:
                    self._free[i] = (start + aligned, size - aligned)
                break
        if offset is None:
            if self._next + aligned > self.capacity:
                raise CapacityExhausted(
                    f"cannot allocate {length} bytes: {self.capacity - self._next} of {self.capacity} left"
                )
            offset = self._next
            self._next += aligned
        self.pages[offset] = Page(offset, length, span_class, actor_tag=actor_tag)
        bisect.insort(self._starts, offset)
        return offset

    def free(self, offset: int) -> None:
        page = self._page(offset)
        del self.pages[offset]
        self._starts.remove(offset)
        self._free.append((offset, -(-page.len // CACHE_LINE) * CACHE_LINE))

    def _page(self, offset: int) -> Page:
        try:
            return self.pages[offset]
        except KeyError:
            raise RegionError(f"offset {offset:#x} is not allocated") from None

    def check_allocated(self, offset: int) -> Page:
        return self._page(offset)

    def span_containing(self, offset: int, length: int) -> Page:
        i = bisect.bisect_right(self._starts, offset) - 1
        if i >= 0:
            page = self.pages[self._starts[i]]
            if offset + length <= page.offset + page.len:
                return page
        raise RegionError(f"span [{offset:#x}, +{length}) is outside any allocation")

    # epoch protocol ---------------------------------------------------------

    def epoch_read(self, offset: int) -> tuple[Any, int] | Retry:
        page = self._page(offset)
        if page.owner is Owner.MIGRATING:
            return Retry(page.epoch)
        return page.data, page.epoch

    def store(self, offset: int, value: Any) -> int:
        """Write a value into a span, tagged with the current epoch."""
        page = self._page(offset)
        if page.owner is Owner.MIGRATING:
            raise RelocationError(f"span {offset:#x} is being relocated")
        page.data = value
        page.data_epoch = page.epoch
        return page.epoch

    def begin_relocation(self, offset: int) -> int:
        page = self._page(offset)
        if page.owner is Owner.MIGRATING:
            raise RelocationError(f"span {offset:#x} is already being relocated")
        page.stable_owner = page.owner
        page.owner = Owner.MIGRATING
        page.epoch += 1
        return page.epoch

    def complete_relocation(self, offset: int, new_owner: Owner) -> int:
        page = self._page(offset)
        if page.owner is not Owner.MIGRATING:
            raise RelocationError(f"span {offset:#x} is not being relocated")
        if new_owner is Owner.MIGRATING:
            raise RelocationError("new owner must be host or device")
        page.owner = new_owner
        page.stable_owner = new_owner
        return page.epoch

    def relocate_page(self, offset: int, new_owner: Owner) -> int:
        self.begin_relocation(offset)
        return self.complete_relocation(offset, new_owner)

    # durability -------------------------------------------------------------

    def record_write(self, offset: int, length: int, t: int) -> int:
        if length <= 0:
            raise RegionError("zero-length write")
        self.span_containing(offset, length)
        start = max(self._drain_tail, t)
        self._drain_tail = start + max(1, round(length * 1e6 / self.nand_drain_Bps))
        wid = len(self.writes)
        self.writes.append(WriteRecord(wid, offset, length, t, DurabilityState.VISIBLE, self._drain_tail))
        return wid

    def acknowledge(self, write_id: int) -> None:
        """Completion is legal immediately: the region is in the persistence domain."""
        w = self.writes[write_id]
        if w.state == DurabilityState.VISIBLE:
            w.state = DurabilityState.COMPLETED

    def drain(self, now: int) -> list[int]:
        """Mark every write whose NAND copy has landed by ``now`` persistent; return their ids."""
        landed = []
        # FIFO drain: an unacknowledged or unlanded write blocks everything behind it
        while self._cursor < len(self.writes):
            w = self.writes[self._cursor]
            if w.drain_done > now or w.state == DurabilityState.VISIBLE:
                break
            w.state = DurabilityState.PERSISTENT
            landed.append(w.write_id)
            self._cursor += 1
        return landed

    def state(self, write_id: int) -> DurabilityState:
        return self.writes[write_id].state

    def persistence_barrier(self, up_to: int | None, now: int) -> int:
        """Virtual time at which every write with id <= ``up_to`` is persistent.

        Writes issued after ``up_to`` are never waited on. A barrier with
        outstanding drains pays one global persistent flush on top.
        """
        if up_to is None or not self.writes:
            return now
        if up_to >= len(self.writes):
            raise RegionError(f"unknown write id {up_to}")
        latest = max(w.drain_done for w in self.writes[: up_to + 1])
        if latest <= now:
            return now
        return latest + self.gpf_us

    def completed_writes(self) -> list[WriteRecord]:
        return [w for w in self.writes if w.state >= DurabilityState.COMPLETED]


class Ring:
    """Single-producer / single-consumer descriptor ring placed in the region."""

    def __init__(self, region: SharedRegion | None, depth: int):
        if depth <= 0 or depth & (depth - 1):
            raise ValueError("ring depth must be a power of two")
        self.depth = depth
        self.base = region.allocate(depth * DESCRIPTOR_SIZE, SpanClass.METADATA) if region else 0
        self.head = 0
        self.tail = 0
        self._slots = [bytes(DESCRIPTOR_SIZE)] * depth

    def __len__(self) -> int:
        return self.tail - self.head

    def push(self, d: Descriptor) -> bool:
        if self.tail - self.head >= self.depth:
            return False
        self._slots[self.tail & (self.depth - 1)] = encode_descriptor(d)
        self.tail += 1
        return True

    def pop(self) -> Descriptor | None:
        if self.tail == self.head:
            return None
        d = decode_descriptor(self._slots[self.head & (self.depth - 1)])
        self.head += 1
        return d


def ring_push(r: Ring, d: Descriptor) -> bool:
    return r.push(d)


def ring_pop(r: Ring) -> Descriptor | None:
    return r.pop()
