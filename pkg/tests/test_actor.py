import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import descriptor_bytes
from revstore.actor import (
    ActorStatus,
    ActorUnavailable,
    CheckpointError,
    CorruptBlob,
    Descriptor,
    MalformedDescriptor,
    Placement,
    RequestClass,
    StageKind,
    StorageActor,
    checkpoint_control_state,
    decode_descriptor,
    encode_descriptor,
    execute_stage,
    instantiate_pipeline,
    restore_control_state,
)
from revstore.platform import COMPUTE_MULTIPLIER, COPY_MULTIPLIER, Platform

descriptors = st.builds(
    Descriptor,
    opcode=st.integers(0, 3),
    version=st.integers(0, 15),
    flags=st.integers(0, 3),
    input_handle=st.integers(0, 2**64 - 1),
    output_handle=st.integers(0, 2**64 - 1),
    state_handle=st.integers(0, 2**64 - 1),
)


def actor(stage=StageKind.PASSTHROUGH, placement=Placement.DEVICE, **kw):
    return StorageActor(actor_id=kw.pop("actor_id", 1), stage=stage, placement=placement, **kw)


class TestDescriptor:
    def test_zero_descriptor_is_all_zero_bytes(self):
        assert encode_descriptor(Descriptor()) == bytes(32)
        assert decode_descriptor(bytes(32)) == Descriptor()

    def test_compress_with_integrity_flag(self):
        raw = encode_descriptor(Descriptor(opcode=1, flags=1))
        assert raw[0] & 0x0F == 0x1
        assert raw[4:8] == b"\x01\x00\x00\x00"

    def test_matches_hand_built_layout(self):
        d = Descriptor(opcode=2, version=3, flags=2, input_handle=0x1122, output_handle=7, state_handle=2**63)
        assert encode_descriptor(d) == descriptor_bytes(2, 3, 2, 0x1122, 7, 2**63)

    def test_round_trip_ten_thousand_seeded_samples(self):
        rng = random.Random(1234)
        for _ in range(10_000):
            d = Descriptor(
                opcode=rng.randrange(4), version=rng.randrange(16), flags=rng.randrange(4),
                input_handle=rng.getrandbits(64), output_handle=rng.getrandbits(64), state_handle=rng.getrandbits(64),
            )
            raw = encode_descriptor(d)
            assert len(raw) == 32
            assert decode_descriptor(raw) == d

    @given(descriptors)
    def test_round_trip_property(self, d):
        assert decode_descriptor(encode_descriptor(d)) == d

    def test_opcode_out_of_range(self):
        raw = bytearray(32)
        raw[0] = 0x0F
        with pytest.raises(MalformedDescriptor) as exc:
            decode_descriptor(bytes(raw))
        assert exc.value.field == "opcode"

    @pytest.mark.parametrize("byte", [1, 2, 3])
    def test_reserved_bytes_rejected(self, byte):
        raw = bytearray(32)
        raw[byte] = 1
        with pytest.raises(MalformedDescriptor) as exc:
            decode_descriptor(bytes(raw))
        assert exc.value.field == "reserved"

    @given(st.integers(2, 31))
    def test_reserved_flag_bits_rejected(self, bit):
        with pytest.raises(MalformedDescriptor) as exc:
            encode_descriptor(Descriptor(flags=1 << bit))
        assert exc.value.field == "flags"
        with pytest.raises(MalformedDescriptor):
            decode_descriptor(descriptor_bytes(0, 0, 1 << bit, 0, 0, 0))

    def test_wrong_length(self):
        with pytest.raises(MalformedDescriptor):
            decode_descriptor(bytes(31))


class TestPipeline:
    def test_checksum(self):
        assert instantiate_pipeline(Descriptor(opcode=3)).stages == (StageKind.CHECKSUM,)

    def test_passthrough(self):
        assert instantiate_pipeline(Descriptor()).stages == (StageKind.PASSTHROUGH,)

    @pytest.mark.parametrize(
        "flags, expected",
        [
            (0, (StageKind.COMPRESS,)),
            (1, (StageKind.COMPRESS, StageKind.INTEGRITY_VERIFY)),
            (2, (StageKind.COMPRESS, StageKind.FORMAT_CONVERT)),
            (3, (StageKind.COMPRESS, StageKind.INTEGRITY_VERIFY, StageKind.FORMAT_CONVERT)),
        ],
    )
    def test_modifier_order(self, flags, expected):
        assert instantiate_pipeline(Descriptor(opcode=1, flags=flags)).stages == expected

    def test_request_class_carried(self):
        spec = instantiate_pipeline(Descriptor(), RequestClass.LATENCY_SENSITIVE)
        assert spec.request_class is RequestClass.LATENCY_SENSITIVE


class TestExecuteStage:
    def test_passthrough_identity(self):
        out, t = execute_stage(actor(), 4096)
        assert out == 4096 and t >= 1

    def test_compress_ratio(self):
        out, _ = execute_stage(actor(StageKind.COMPRESS), 4096, compression_ratio=3.2)
        assert out == 1280

    @pytest.mark.parametrize("stage", [StageKind.CHECKSUM, StageKind.ENCRYPT])
    def test_length_preserving(self, stage):
        assert execute_stage(actor(stage), 5000)[0] == 5000

    def test_service_time_follows_platform(self):
        p = Platform()
        _, t = execute_stage(actor(StageKind.COMPRESS), 1 << 20, platform=p)
        assert t == round(p.actor_service_time(StageKind.COMPRESS, Placement.DEVICE, 1 << 20))
        _, t = execute_stage(actor(StageKind.CHECKSUM), 1 << 20, platform=p)
        native = (1 << 20) / p.device.actor_rate_MBps
        assert t == round(native * COPY_MULTIPLIER)
        assert COMPUTE_MULTIPLIER == 4.22

    def test_counters_updated(self):
        a = actor()
        execute_stage(a, 100)
        execute_stage(a, 200)
        assert (a.bytes_processed, a.requests_processed) == (300, 2)

    def test_deterministic(self):
        a, b = actor(StageKind.COMPRESS), actor(StageKind.COMPRESS)
        for n in (1, 4096, 123457):
            assert execute_stage(a, n) == execute_stage(b, n)
        assert a == b

    def test_migrating_actor_rejects_work(self):
        a = actor(status=ActorStatus.MIGRATING)
        with pytest.raises(ActorUnavailable):
            execute_stage(a, 10)

    def test_nonpositive_length(self):
        with pytest.raises(ValueError):
            execute_stage(actor(), 0)


class TestCheckpoint:
    def test_fresh_actor_has_zero_counters(self):
        restored = restore_control_state(checkpoint_control_state(actor()), Placement.HOST)
        assert (restored.bytes_processed, restored.requests_processed) == (0, 0)

    def test_default_blob_is_8k(self):
        assert len(checkpoint_control_state(actor())) == 8192

    @given(
        st.sampled_from(list(StageKind)), st.integers(0, 2**63), st.integers(0, 2**63),
        st.lists(st.integers(0, 2**64 - 1), max_size=16), st.sampled_from(list(RequestClass)),
    )
    def test_checkpoint_restore_checkpoint_identical(self, stage, nbytes, nreqs, handles, cls):
        a = actor(stage, bytes_processed=nbytes, requests_processed=nreqs, shared_handles=handles, request_class=cls)
        blob = checkpoint_control_state(a)
        assert len(blob) <= 8192
        b = restore_control_state(blob, Placement.HOST, now=77)
        assert (b.stage, b.bytes_processed, b.requests_processed, b.shared_handles, b.request_class) == (
            stage, nbytes, nreqs, handles, cls,
        )
        assert b.placement is Placement.HOST and b.residency_since == 77
        assert checkpoint_control_state(b) == blob

    def test_restored_actor_continues_in_lockstep(self):
        a, twin = actor(StageKind.COMPRESS), actor(StageKind.COMPRESS)
        sizes = [4096, 100, 77777, 12, 65536]
        for n in sizes[:2]:
            execute_stage(a, n)
            execute_stage(twin, n)
        moved = restore_control_state(checkpoint_control_state(a), Placement.DEVICE)
        for n in sizes[2:]:
            assert execute_stage(moved, n) == execute_stage(twin, n)
        assert (moved.bytes_processed, moved.requests_processed) == (twin.bytes_processed, twin.requests_processed)

    def test_self_migration_restore_is_valid(self):
        a = actor(placement=Placement.DEVICE)
        assert restore_control_state(checkpoint_control_state(a), Placement.DEVICE).placement is Placement.DEVICE

    def test_in_flight_rejected(self):
        with pytest.raises(CheckpointError):
            checkpoint_control_state(actor(in_flight=1))

    def test_exceeding_maximum_rejected(self):
        with pytest.raises(CheckpointError):
            checkpoint_control_state(actor(control_state_bytes=16384), max_bytes=8192)

    def test_zero_blob_rejected(self):
        with pytest.raises(CorruptBlob, match="magic"):
            restore_control_state(bytes(8192), Placement.HOST)

    def test_truncated_blob_rejected(self):
        with pytest.raises(CorruptBlob):
            restore_control_state(checkpoint_control_state(actor())[:20], Placement.HOST)

    @given(st.integers(8, 60), st.integers(1, 255))
    def test_bit_flip_detected(self, pos, xor):
        blob = bytearray(checkpoint_control_state(actor(shared_handles=[1, 2, 3], bytes_processed=9)))
        blob[pos] ^= xor
        with pytest.raises(CorruptBlob):
            restore_control_state(bytes(blob), Placement.HOST)
