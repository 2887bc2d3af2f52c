"""Event log and the metrics derived from it.

All figures are computed from the log alone, so a saved log can be
re-analysed without re-running the simulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterator

TIMELINE_HEADER = (
    "t_ms", "throughput_MBps", "device_temp_C", "host_util", "throttle_factor",
    "degrade_factor", "migrations_cum", "p50_us", "p99_us",
)


@dataclass(frozen=True)
class LogEntry:
    t: int
    seq: int
    kind: str
    fields: dict[str, Any]

    def format(self) -> str:
        body = " ".join(f"{k}={v}" for k, v in self.fields.items())
        return f"{self.t} {self.seq} {self.kind}" + (f" {body}" if body else "")


class EventLog:
    def __init__(self):
        self.entries: list[LogEntry] = []

    def append(self, t: int, seq: int, kind: str, fields: dict[str, Any]) -> None:
        self.entries.append(LogEntry(t, seq, kind, fields))

    def __iter__(self) -> Iterator[LogEntry]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def of(self, *kinds: str) -> list[LogEntry]:
        return [e for e in self.entries if e.kind in kinds]

    def dumps(self) -> str:
        return "".join(e.format() + "\n" for e in self.entries)


def percentile(sorted_values: list[int] | list[float], q: float):
    """Nearest-rank percentile of an already sorted sequence; 0 when empty."""
    if not sorted_values:
        return 0
    if not 0 <= q <= 100:
        raise ValueError("q must be within [0, 100]")
    rank = max(1, math.ceil(q / 100 * len(sorted_values)))
    return sorted_values[rank - 1]


@dataclass(frozen=True)
class Window:
    t_ms: float
    throughput_MBps: float
    device_temp_C: float
    host_util: float
    throttle_factor: float
    degrade_factor: float
    migrations_cum: int
    p50_us: int
    p99_us: int

    def row(self) -> tuple:
        return tuple(getattr(self, name) for name in TIMELINE_HEADER)


@dataclass
class Metrics:
    duration_us: int
    completed: int = 0
    bytes_completed: int = 0
    throughput_MBps: float = 0.0
    p50_us: int = 0
    p99_us: int = 0
    p999_us: int = 0
    mean_latency_us: float = 0.0
    migrations: int = 0
    switch_us: list[int] = field(default_factory=list)
    drain_us: list[int] = field(default_factory=list)
    peak_temp_C: float = 0.0
    mean_host_util: float = 0.0
    windows: list[Window] = field(default_factory=list)
    epochs: list[LogEntry] = field(default_factory=list)

    def throughput_between(self, t0_ms: float, t1_ms: float) -> float:
        """Mean of the window throughputs whose start lies in ``[t0_ms, t1_ms)``."""
        sel = [w.throughput_MBps for w in self.windows if t0_ms <= w.t_ms < t1_ms]
        return sum(sel) / len(sel) if sel else 0.0

    def first_crossing_ms(self, temp: float) -> float | None:
        for e in self.epochs:
            if e.fields["temp"] >= temp:
                return e.t / 1000
        return None

    def summary(self) -> dict[str, Any]:
        return {
            "duration_s": self.duration_us / 1e6,
            "completed": self.completed,
            "bytes_completed": self.bytes_completed,
            "throughput_MBps": self.throughput_MBps,
            "p50_us": self.p50_us,
            "p99_us": self.p99_us,
            "p999_us": self.p999_us,
            "mean_latency_us": self.mean_latency_us,
            "migrations": self.migrations,
            "switch_us_max": max(self.switch_us, default=0),
            "peak_temp_C": self.peak_temp_C,
            "mean_host_util": self.mean_host_util,
        }


def collect_metrics(log: EventLog, window_ms: float, duration_us: int) -> Metrics:
    window_us = round(window_ms * 1000)
    if window_us <= 0:
        raise ValueError("window_ms must be positive")
    n_windows = math.ceil(duration_us / window_us)
    bytes_in = [0] * max(1, n_windows)
    lats: list[list[int]] = [[] for _ in range(max(1, n_windows))]
    last_tick: list[LogEntry | None] = [None] * max(1, n_windows)
    migs = [0] * max(1, n_windows)
    m = Metrics(duration_us=duration_us)
    all_lat: list[int] = []
    for e in log:
        w = min(max(n_windows - 1, 0), e.t // window_us)
        if e.kind == "Complete":
            bytes_in[w] += e.fields["bytes"]
            lats[w].append(e.fields["lat"])
            all_lat.append(e.fields["lat"])
            m.bytes_completed += e.fields["bytes"]
        elif e.kind == "EpochTick":
            last_tick[w] = e
            m.epochs.append(e)
        elif e.kind == "Phase" and e.fields["phase"] == "activated":
            migs[w] += 1
            m.switch_us.append(e.fields["switch_us"])
        elif e.kind == "DrainDone":
            m.drain_us.append(e.fields["drain_us"])

    m.completed = len(all_lat)
    all_lat.sort()
    m.p50_us = percentile(all_lat, 50)
    m.p99_us = percentile(all_lat, 99)
    m.p999_us = percentile(all_lat, 99.9)
    m.mean_latency_us = sum(all_lat) / len(all_lat) if all_lat else 0.0
    m.throughput_MBps = m.bytes_completed / duration_us if duration_us else 0.0
    m.migrations = len(m.switch_us)
    if m.epochs:
        m.peak_temp_C = max(e.fields["temp"] for e in m.epochs)
        m.mean_host_util = sum(e.fields["host_util"] for e in m.epochs) / len(m.epochs)

    cum = 0
    prev: LogEntry | None = None
    for i in range(n_windows):
        start = i * window_us
        span = min(window_us, duration_us - start)
        tick = last_tick[i] or prev
        prev = tick
        cum += migs[i]
        ls = sorted(lats[i])
        f = tick.fields if tick else {}
        m.windows.append(Window(
            t_ms=start / 1000,
            throughput_MBps=bytes_in[i] / span,  # bytes per µs == MB/s
            device_temp_C=f.get("temp", 0.0),
            host_util=f.get("host_util", 0.0),
            throttle_factor=f.get("throttle", 1.0),
            degrade_factor=f.get("degrade", 1.0),
            migrations_cum=cum,
            p50_us=percentile(ls, 50),
            p99_us=percentile(ls, 99),
        ))
    return m
