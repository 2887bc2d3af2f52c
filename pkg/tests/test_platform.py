import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import thermal_closed_form
from revstore.actor import Placement, StageKind
from revstore.platform import (
    COMPUTE_MULTIPLIER,
    COPY_MULTIPLIER,
    PROFILES,
    DeviceProfile,
    HostProfile,
    NotificationStrategy,
    Notifier,
    actor_service_time,
    completion_stream,
    device_power,
    get_profile,
    notify,
    step_thermal,
    throttle_factor,
)

SMART = PROFILES["smartssd"]


def integrate(profile, power, T0, seconds, dt):
    T = T0
    for _ in range(round(seconds / dt)):
        T = step_thermal(profile, power, T, dt)
    return T


class TestThermal:
    def test_ambient_fixed_point(self):
        assert step_thermal(SMART, 0.0, SMART.ambient, 1.0) == SMART.ambient

    def test_settles_after_five_time_constants(self):
        steady = SMART.ambient + 50 * SMART.thermal_resistance
        T = integrate(SMART, 50, SMART.ambient, 5 * SMART.time_constant, 0.01)
        assert abs(T - steady) / steady < 0.01

    @pytest.mark.parametrize("t", [1, 10, 30, 60, 120, 300])
    def test_matches_closed_form_within_one_percent(self, t):
        p = SMART
        expected = thermal_closed_form(p.ambient, p.ambient, 68, p.thermal_resistance, p.time_constant, t)
        assert integrate(p, 68, p.ambient, t, 0.01) == pytest.approx(expected, rel=0.01)

    @pytest.mark.parametrize("dt", [1.0, 0.1, 0.01])
    def test_halving_step_moves_trajectory_less_than_half_degree(self, dt):
        for t in (10, 60, 180):
            coarse = integrate(SMART, 68, 30, t, dt)
            fine = integrate(SMART, 68, 30, t, dt / 2)
            assert abs(coarse - fine) < 0.5

    def test_rejects_nonpositive_dt(self):
        with pytest.raises(ValueError):
            step_thermal(SMART, 10, 30, 0)

    @given(st.floats(0, 70), st.floats(20, 110), st.floats(0.001, 5))
    def test_moves_toward_steady_state_without_overshoot(self, power, T, dt):
        steady = SMART.ambient + power * SMART.thermal_resistance
        T2 = step_thermal(SMART, power, T, dt)
        assert min(T, steady) - 1e-9 <= T2 <= max(T, steady) + 1e-9


class TestThrottle:
    @pytest.mark.parametrize(
        "profile, T, factor",
        [("smartssd", 64, 1.0), ("smartssd", 71, 0.5), ("scaleflux", 66, 0.4), ("smartssd", 100, 0.0),
         ("smartssd", 93, 0.35), ("smartssd", 97, 0.15), ("cxl-ssd", 84.9, 1.0), ("cxl-ssd", 85, 0.5)],
    )
    def test_lookup(self, profile, T, factor):
        assert throttle_factor(PROFILES[profile], T) == factor

    @given(st.sampled_from(sorted(PROFILES)), st.floats(0, 150), st.floats(0, 150))
    def test_monotone(self, name, a, b):
        lo, hi = sorted((a, b))
        p = PROFILES[name]
        assert throttle_factor(p, hi) <= throttle_factor(p, lo)

    def test_invalid_tables_rejected(self):
        with pytest.raises(ValueError):
            DeviceProfile("x", throttle_table=((70, 0.5), (60, 0.4)))
        with pytest.raises(ValueError):
            DeviceProfile("x", throttle_table=((60, 0.4), (70, 0.5)))
        with pytest.raises(ValueError):
            DeviceProfile("x", throttle_table=((60, 1.5),))

    def test_unknown_profile(self):
        with pytest.raises(KeyError):
            get_profile("nope")


class TestPower:
    def test_idle_is_zero(self):
        assert device_power(SMART, 0.0, []) == 0.0

    def test_base_plus_actors(self):
        assert device_power(SMART, 1.0, [1.0] * 7) == 12 + 56

    def test_clamped(self):
        assert device_power(SMART, 1.0, [1.0] * 20) == 70


class TestServiceTime:
    def test_copy_class_multiplier(self):
        native = actor_service_time(StageKind.CHECKSUM, Placement.DEVICE, 1 << 20, native=True)
        assert actor_service_time(StageKind.CHECKSUM, Placement.DEVICE, 1 << 20) == pytest.approx(0.74 * native)
        assert COPY_MULTIPLIER == 0.74

    def test_compute_class_multiplier(self):
        native = actor_service_time(StageKind.COMPRESS, Placement.HOST, 1 << 20, native=True)
        assert actor_service_time(StageKind.COMPRESS, Placement.HOST, 1 << 20) == pytest.approx(4.22 * native)
        assert COMPUTE_MULTIPLIER == 4.22

    @given(st.sampled_from(list(StageKind)), st.sampled_from(list(Placement)), st.integers(1, 1 << 30))
    def test_linear_in_bytes(self, stage, placement, n):
        assert actor_service_time(stage, placement, 2 * n) == pytest.approx(2 * actor_service_time(stage, placement, n))

    def test_host_scales_with_frequency(self):
        slow = HostProfile(freq=1.9)
        assert actor_service_time(StageKind.COMPRESS, Placement.HOST, 4096, host=slow) == pytest.approx(
            2 * actor_service_time(StageKind.COMPRESS, Placement.HOST, 4096)
        )

    def test_host_frequency_range_validated(self):
        with pytest.raises(ValueError):
            HostProfile(freq=4.5)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            actor_service_time(StageKind.PASSTHROUGH, Placement.HOST, 0)


class TestNotification:
    def test_poll_qd1(self):
        assert notify("poll", False, 1) == (1.0, 0.0)

    def test_wait_qd1(self):
        cpu, wake = notify("wait", False, 1)
        assert cpu == 0.35 and wake > 0

    def test_hybrid_switches_only_on_observed_empty(self):
        n = Notifier()
        assert n.notify(False, 4)[0] == 1.0
        assert n.mode is NotificationStrategy.POLL
        assert n.notify(True, 1) == notify("wait", True, 1)
        assert n.notify(False, 1)[0] == 1.0

    def test_hybrid_idle_trace_converges_within_one_observation(self):
        r = completion_stream("hybrid", 1, 10, 50, gap_us=1000)
        assert r.mode_trace[:2] == [NotificationStrategy.POLL, NotificationStrategy.WAIT]
        assert all(m is NotificationStrategy.WAIT for m in r.mode_trace[1::2])

    def test_wait_rearms_on_timeout(self):
        r = completion_stream("wait", 1, 10, 10, gap_us=1000)
        assert r.rearms == 10 * math.floor((1000 - 12) / 100)

    def test_hybrid_at_least_wait_throughput_at_high_qd(self):
        for qd in (8, 32, 128):
            assert completion_stream("hybrid", qd, 10, 10_000).iops >= completion_stream("wait", qd, 10, 10_000).iops
