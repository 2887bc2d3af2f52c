"""Storage actors: descriptors, pipelines, stage execution and control-state checkpoints.

An actor is a plain value advanced by the event engine. The only thing that
moves between host and device is its control-state blob; shared state stays
in the region and is referenced through ``shared_handles``.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .platform import Platform
    from .region import SharedRegion


class StageKind(IntEnum):
    PASSTHROUGH = 0
    COMPRESS = 1
    ENCRYPT = 2
    CHECKSUM = 3
    INTEGRITY_VERIFY = 4
    FORMAT_CONVERT = 5


class Placement(IntEnum):
    HOST = 0
    DEVICE = 1


class RequestClass(IntEnum):
    LATENCY_SENSITIVE = 0
    BEST_EFFORT = 1


class ActorStatus(Enum):
    ACTIVE = "active"
    DRAINING = "draining"
    MIGRATING = "migrating"


# opcode -> base stage; the all-zero descriptor is a valid no-op
OPCODE_STAGES = {
    0: StageKind.PASSTHROUGH,
    1: StageKind.COMPRESS,
    2: StageKind.ENCRYPT,
    3: StageKind.CHECKSUM,
}
FLAG_INTEGRITY_VERIFY = 1 << 0
FLAG_FORMAT_CONVERT = 1 << 1
KNOWN_FLAGS = FLAG_INTEGRITY_VERIFY | FLAG_FORMAT_CONVERT
# fixed application order of modifier stages
FLAG_STAGES = (
    (FLAG_INTEGRITY_VERIFY, StageKind.INTEGRITY_VERIFY),
    (FLAG_FORMAT_CONVERT, StageKind.FORMAT_CONVERT),
)

DESCRIPTOR_SIZE = 32
_DESCRIPTOR = struct.Struct("<B3sIQQQ")
assert _DESCRIPTOR.size == DESCRIPTOR_SIZE

DEFAULT_CONTROL_STATE = 8192
DEFAULT_COMPRESSION_RATIO = 3.2


class MalformedDescriptor(ValueError):
    """Raised when descriptor fields or bytes violate the wire layout."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class ActorUnavailable(RuntimeError):
    """The actor is draining or migrating and cannot accept new work."""


class CheckpointError(RuntimeError):
    pass


class CorruptBlob(ValueError):
    pass


@dataclass(frozen=True)
class Descriptor:
    opcode: int = 0
    version: int = 0
    flags: int = 0
    input_handle: int = 0
    output_handle: int = 0
    state_handle: int = 0

    def validate(self) -> None:
        if not 0 <= self.opcode <= 0xF or self.opcode not in OPCODE_STAGES:
            raise MalformedDescriptor("opcode", f"unknown opcode {self.opcode}")
        if not 0 <= self.version <= 0xF:
            raise MalformedDescriptor("version", f"{self.version} does not fit in 4 bits")
        if not 0 <= self.flags <= 0xFFFFFFFF:
            raise MalformedDescriptor("flags", "does not fit in 32 bits")
        if self.flags & ~KNOWN_FLAGS:
            raise MalformedDescriptor("flags", f"reserved bits set: {self.flags & ~KNOWN_FLAGS:#x}")
        for name in ("input_handle", "output_handle", "state_handle"):
            value = getattr(self, name)
            if not 0 <= value < 1 << 64:
                raise MalformedDescriptor(name, "does not fit in 64 bits")


def encode_descriptor(d: Descriptor) -> bytes:
    d.validate()
    return _DESCRIPTOR.pack(
        (d.version << 4) | d.opcode,
        b"\x00\x00\x00",
        d.flags,
        d.input_handle,
        d.output_handle,
        d.state_handle,
    )


def decode_descriptor(b: bytes) -> Descriptor:
    if len(b) != DESCRIPTOR_SIZE:
        raise MalformedDescriptor("length", f"expected {DESCRIPTOR_SIZE} bytes, got {len(b)}")
    head, reserved, flags, inp, out, state = _DESCRIPTOR.unpack(bytes(b))
    if reserved != b"\x00\x00\x00":
        raise MalformedDescriptor("reserved", "bytes 1-3 must be zero")
    d = Descriptor(
        opcode=head & 0xF,
        version=head >> 4,
        flags=flags,
        input_handle=inp,
        output_handle=out,
        state_handle=state,
    )
    d.validate()
    return d


@dataclass(frozen=True)
class PipelineSpec:
    stages: tuple[StageKind, ...]
    request_class: RequestClass = RequestClass.BEST_EFFORT

    def __post_init__(self):
        if not self.stages:
            raise ValueError("pipeline must have at least one stage")


def instantiate_pipeline(
    d: Descriptor, request_class: RequestClass = RequestClass.BEST_EFFORT
) -> PipelineSpec:
    d.validate()
    stages = [OPCODE_STAGES[d.opcode]]
    stages.extend(stage for bit, stage in FLAG_STAGES if d.flags & bit)
    return PipelineSpec(tuple(stages), request_class)


@dataclass
class StorageActor:
    actor_id: int
    stage: StageKind
    placement: Placement
    request_class: RequestClass = RequestClass.BEST_EFFORT
    control_state_bytes: int = DEFAULT_CONTROL_STATE
    shared_handles: list[int] = field(default_factory=list)
    residency_since: int = 0
    bytes_processed: int = 0
    requests_processed: int = 0
    in_flight: int = 0
    status: ActorStatus = ActorStatus.ACTIVE


def output_length(stage: StageKind, input_len: int, compression_ratio: float) -> int:
    if stage == StageKind.COMPRESS:
        return max(1, round(input_len / compression_ratio))
    return input_len


def execute_stage(
    actor: StorageActor,
    input_len: int,
    shared: SharedRegion | None = None,
    platform: Platform | None = None,
    *,
    stage: StageKind | None = None,
    compression_ratio: float = DEFAULT_COMPRESSION_RATIO,
    slowdown: float = 1.0,
) -> tuple[int, int]:
    """Run one pipeline stage on ``actor``.

    ``stage`` defaults to the actor's own stage; modifier stages of the same
    pipeline are executed by the head actor. Returns ``(output_len,
    service_us)`` with service time in integer microsecond ticks.
    """
    from .platform import Platform

    if actor.status is ActorStatus.MIGRATING:
        raise ActorUnavailable(f"actor {actor.actor_id} is {actor.status.value}")
    if input_len <= 0:
        raise ValueError("input_len must be positive")
    stage = actor.stage if stage is None else stage
    platform = platform or Platform()
    if shared is not None:
        for handle in actor.shared_handles:
            shared.check_allocated(handle)
    out = output_length(stage, input_len, compression_ratio)
    service = platform.actor_service_time(stage, actor.placement, input_len) * slowdown
    actor.bytes_processed += input_len
    if stage == actor.stage:
        actor.requests_processed += 1
    return out, max(1, round(service))


# control-state blob header
BLOB_MAGIC = b"RVSACTR\x00"
BLOB_VERSION = 1
_BLOB_HEADER = struct.Struct("<8sIIQQIIII")  # magic ver stage bytes reqs id class nhandles crc


def checkpoint_control_state(a: StorageActor, max_bytes: int | None = None) -> bytes:
    if a.in_flight:
        raise CheckpointError(f"actor {a.actor_id} has {a.in_flight} requests in flight")
    footprint = a.control_state_bytes
    limit = max_bytes if max_bytes is not None else footprint
    handles = struct.pack(f"<{len(a.shared_handles)}Q", *a.shared_handles)
    if _BLOB_HEADER.size + len(handles) > footprint or footprint > limit:
        raise CheckpointError(f"control state exceeds {min(footprint, limit)} bytes")
    body = _BLOB_HEADER.pack(
        BLOB_MAGIC, BLOB_VERSION, int(a.stage), a.bytes_processed, a.requests_processed,
        a.actor_id, int(a.request_class), len(a.shared_handles), 0,
    ) + handles
    crc = zlib.crc32(body)
    body = body[: _BLOB_HEADER.size - 4] + struct.pack("<I", crc) + handles
    return body + bytes(footprint - len(body))


def restore_control_state(blob: bytes, dest: Placement, now: int = 0) -> StorageActor:
    if len(blob) < _BLOB_HEADER.size:
        raise CorruptBlob(f"truncated blob ({len(blob)} bytes)")
    magic, version, stage, nbytes, nreqs, aid, cls, nhandles, crc = _BLOB_HEADER.unpack_from(blob)
    if magic != BLOB_MAGIC:
        raise CorruptBlob("missing header magic")
    if version != BLOB_VERSION:
        raise CorruptBlob(f"unsupported blob version {version}")
    end = _BLOB_HEADER.size + 8 * nhandles
    if end > len(blob):
        raise CorruptBlob("truncated handle table")
    zeroed = blob[: _BLOB_HEADER.size - 4] + b"\x00" * 4 + blob[_BLOB_HEADER.size:end]
    if zlib.crc32(zeroed) != crc:
        raise CorruptBlob("checksum mismatch")
    try:
        stage_kind, request_class = StageKind(stage), RequestClass(cls)
    except ValueError as exc:
        raise CorruptBlob(str(exc)) from None
    handles = list(struct.unpack_from(f"<{nhandles}Q", blob, _BLOB_HEADER.size))
    return StorageActor(
        actor_id=aid,
        stage=stage_kind,
        placement=Placement(dest),
        request_class=request_class,
        control_state_bytes=len(blob),
        shared_handles=handles,
        residency_since=now,
        bytes_processed=nbytes,
        requests_processed=nreqs,
    )
