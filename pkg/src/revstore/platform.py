"""Host and device models: thermal, power, throttling, actor cost, completion notification."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

from .actor import Placement, StageKind

# sandbox cost relative to native execution
COMPUTE_MULTIPLIER = 4.22
COPY_MULTIPLIER = 0.74
STAGE_MULTIPLIER = {
    StageKind.PASSTHROUGH: COPY_MULTIPLIER,
    StageKind.CHECKSUM: COPY_MULTIPLIER,
    StageKind.INTEGRITY_VERIFY: COPY_MULTIPLIER,
    StageKind.FORMAT_CONVERT: COPY_MULTIPLIER,
    StageKind.COMPRESS: COMPUTE_MULTIPLIER,
    StageKind.ENCRYPT: COMPUTE_MULTIPLIER,
}


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    base_power: float = 12.0
    per_actor_power: float = 8.0
    max_power: float = 70.0
    thermal_resistance: float = 0.9
    time_constant: float = 60.0
    ambient: float = 30.0
    throttle_table: tuple[tuple[float, float], ...] = ()
    actor_rate_MBps: float = 600.0  # native per-actor rate on a device core

    def __post_init__(self):
        thresholds = [t for t, _ in self.throttle_table]
        factors = [f for _, f in self.throttle_table]
        if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
            raise ValueError(f"{self.name}: throttle thresholds must be strictly increasing")
        if any(b > a for a, b in zip(factors, factors[1:])):
            raise ValueError(f"{self.name}: throttle factors must be non-increasing")
        if any(not 0.0 <= f <= 1.0 for f in factors):
            raise ValueError(f"{self.name}: throttle factors must lie in [0, 1]")
        if self.time_constant <= 0 or self.thermal_resistance < 0:
            raise ValueError(f"{self.name}: invalid thermal constants")
        if self.actor_rate_MBps <= 0:
            raise ValueError(f"{self.name}: actor_rate_MBps must be positive")


PROFILES: dict[str, DeviceProfile] = {
    "smartssd": DeviceProfile(
        "smartssd", throttle_table=((70.0, 0.5), (93.0, 0.35), (97.0, 0.15), (100.0, 0.0))
    ),
    "scaleflux": DeviceProfile("scaleflux", throttle_table=((65.0, 0.4), (100.0, 0.0))),
    "cxl-ssd": DeviceProfile("cxl-ssd", throttle_table=((85.0, 0.5), (100.0, 0.0))),
}


def get_profile(name: str) -> DeviceProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise KeyError(f"unknown device profile {name!r}") from None


@dataclass(frozen=True)
class HostProfile:
    cores: int = 24
    freq_min: float = 1.30
    freq_max: float = 3.80
    freq: float = 3.80
    actor_rate_MBps: float = 600.0  # native per-core rate at freq_max
    background_util: float = 0.0
    throttle_freq: float = 2.0  # below this the host counts as throttling

    def __post_init__(self):
        if self.cores <= 0:
            raise ValueError("host cores must be positive")
        if not self.freq_min <= self.freq <= self.freq_max:
            raise ValueError(f"host freq {self.freq} outside [{self.freq_min}, {self.freq_max}]")
        if not 0.0 <= self.background_util <= 1.0:
            raise ValueError("background_util must be in [0, 1]")


def step_thermal(profile: DeviceProfile, power: float, T: float, dt: float) -> float:
    """Advance the first-order thermal model by ``dt`` seconds (forward Euler)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    target = profile.ambient + power * profile.thermal_resistance
    return T + dt * (target - T) / profile.time_constant


def throttle_factor(profile: DeviceProfile, T: float) -> float:
    factor = 1.0
    for threshold, f in profile.throttle_table:
        if T >= threshold:
            factor = f
        else:
            break
    return factor


def device_power(profile: DeviceProfile, io_activity: float, actor_busy: list[float] | tuple = ()) -> float:
    """Base power scales with I/O activity; each busy device actor adds its share."""
    power = profile.base_power * io_activity + profile.per_actor_power * sum(actor_busy)
    return min(power, profile.max_power)


def actor_service_time(
    stage: StageKind,
    placement: Placement,
    nbytes: int,
    host: HostProfile | None = None,
    device: DeviceProfile | None = None,
    native: bool = False,
) -> float:
    """Service time in microseconds for ``nbytes`` through one stage."""
    if nbytes <= 0:
        raise ValueError("nbytes must be positive")
    host = host or HostProfile()
    device = device or PROFILES["cxl-ssd"]
    if placement == Placement.HOST:
        rate = host.actor_rate_MBps * host.freq / host.freq_max
    else:
        rate = device.actor_rate_MBps
    base = nbytes / rate  # bytes / (MB/s) == µs
    return base if native else base * STAGE_MULTIPLIER[StageKind(stage)]


@dataclass(frozen=True)
class Platform:
    host: HostProfile = field(default_factory=HostProfile)
    device: DeviceProfile = field(default_factory=lambda: PROFILES["cxl-ssd"])

    def actor_service_time(self, stage: StageKind, placement: Placement, nbytes: int) -> float:
        return actor_service_time(stage, placement, nbytes, self.host, self.device)

    def with_host(self, **changes) -> Platform:
        return replace(self, host=replace(self.host, **changes))


class NotificationStrategy(str, Enum):
    POLL = "poll"
    WAIT = "wait"
    HYBRID = "hybrid"


@dataclass(frozen=True)
class NotificationParams:
    strategy: NotificationStrategy = NotificationStrategy.HYBRID
    poll_cpu: float = 1.0
    wait_cpu: float = 0.35  # at QD=1
    wait_cpu_per_qd: float = 0.05
    wakeup_us: float = 2.0
    timeout_us: float = 100.0  # bounded MWAIT before re-arm
    rearm_cpu_us: float = 0.5


class Notifier:
    """Completion-notification state machine for one host completion thread.

    Hybrid polls while the queue has work and drops to MWAIT-style waiting
    after it observes an empty queue.
    """

    def __init__(self, params: NotificationParams | None = None):
        self.params = params or NotificationParams()
        self.mode = (
            NotificationStrategy.WAIT
            if self.params.strategy == NotificationStrategy.WAIT
            else NotificationStrategy.POLL
        )

    def observe(self, queue_empty: bool) -> NotificationStrategy:
        if self.params.strategy == NotificationStrategy.HYBRID:
            self.mode = NotificationStrategy.WAIT if queue_empty else NotificationStrategy.POLL
        return self.mode

    def cost(self, qd: int) -> tuple[float, float]:
        p = self.params
        if self.mode == NotificationStrategy.POLL:
            return p.poll_cpu, 0.0
        return min(1.0, p.wait_cpu + p.wait_cpu_per_qd * max(0, qd - 1)), p.wakeup_us

    def notify(self, queue_empty: bool, qd: int) -> tuple[float, float]:
        self.observe(queue_empty)
        return self.cost(qd)


def notify(
    strategy: NotificationStrategy | str,
    queue_empty: bool,
    qd: int,
    params: NotificationParams | None = None,
    state: Notifier | None = None,
) -> tuple[float, float]:
    """Return ``(cpu_util, wakeup_latency_us)`` for one completion wait."""
    strategy = NotificationStrategy(strategy)
    if state is None:
        state = Notifier(replace(params or NotificationParams(), strategy=strategy))
    return state.notify(queue_empty, qd)


@dataclass
class StreamResult:
    cpu_util: float
    iops: float
    elapsed_us: float
    completions: int
    rearms: int
    mode_trace: list[NotificationStrategy]


def completion_stream(
    strategy: NotificationStrategy | str,
    qd: int,
    service_us: float,
    n: int,
    gap_us: float | None = None,
    params: NotificationParams | None = None,
) -> StreamResult:
    """Drive one host completion thread through ``n`` requests.

    With ``gap_us=None`` the stream is closed-loop and saturated: ``qd``
    requests stay outstanding and each completion immediately resubmits.
    Otherwise one request arrives every ``gap_us`` (idle-dominated when the
    gap dwarfs the service time). CPU is accounted time-weighted per mode.
    """
    params = replace(params or NotificationParams(), strategy=NotificationStrategy(strategy))
    notifier = Notifier(params)
    busy_cpu = 0.0
    rearms = 0
    trace: list[NotificationStrategy] = []
    t = 0.0

    def account(span: float, outstanding: int) -> None:
        nonlocal busy_cpu, rearms
        if span <= 0:
            return
        notifier.observe(outstanding == 0)
        trace.append(notifier.mode)
        cpu, _ = notifier.cost(max(outstanding, 1))
        busy_cpu += cpu * span
        if notifier.mode == NotificationStrategy.WAIT and params.timeout_us > 0:
            extra = int(span // params.timeout_us)
            rearms += extra
            busy_cpu += extra * params.rearm_cpu_us

    if gap_us is None:
        # every completion is observed after the mode's wakeup latency, then resubmitted
        done = 0
        while done < n:
            notifier.observe(False)
            _, wake = notifier.cost(qd)
            span = service_us + wake
            account(span, qd)
            t += span
            done += qd
        completions = done
    else:
        for _ in range(n):
            notifier.observe(False)
            _, wake = notifier.cost(1)
            busy = service_us + wake
            account(busy, 1)
            idle = max(0.0, gap_us - busy)
            account(idle, 0)
            t += busy + idle
        completions = n
    return StreamResult(
        cpu_util=busy_cpu / t if t else 0.0,
        iops=completions / t * 1e6 if t else 0.0,
        elapsed_us=t,
        completions=completions,
        rearms=rearms,
        mode_trace=trace,
    )

