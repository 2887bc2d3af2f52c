"""Request stream generation: access patterns, skew distributions, presets and trace replay."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .actor import Descriptor, RequestClass

KiB = 1024
MiB = 1024 * KiB
GiB = 1024 * MiB


class Pattern(str, Enum):
    SEQUENTIAL = "sequential"
    RANDOM = "random"


class Distribution(str, Enum):
    UNIFORM = "uniform"
    ZIPFIAN = "zipfian"
    NORMAL = "normal"
    PARETO = "pareto"


class Kind(str, Enum):
    READ = "read"
    WRITE = "write"


class Mode(str, Enum):
    OPEN = "open"  # fixed arrival rate
    CLOSED = "closed"  # fixed queue depth


class WorkloadError(ValueError):
    pass


class TraceError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class WorkloadSpec:
    pattern: Pattern = Pattern.RANDOM
    dist: Distribution = Distribution.UNIFORM
    block_size: int = 4 * KiB
    read_fraction: float = 0.0
    mode: Mode = Mode.OPEN
    rate: float = 1000.0  # requests/s in open-loop mode
    qd: int = 1  # outstanding requests in closed-loop mode
    address_space: int = 1 * GiB
    theta: float = 0.99
    normal_mu: float = 0.5  # fraction of the address range
    normal_sigma: float = 0.1
    pareto_alpha: float = 1.5
    opcode: int = 0
    flags: int = 0
    request_class: RequestClass = RequestClass.BEST_EFFORT
    poisson: bool = False
    seed: int = 0
    trace: str = ""

    @property
    def blocks(self) -> int:
        return max(1, self.address_space // self.block_size)

    def validate(self) -> None:
        if self.block_size < 8:
            raise WorkloadError("block_size must be at least 8 bytes")
        if not 0.0 <= self.read_fraction <= 1.0:
            raise WorkloadError("read_fraction must lie in [0, 1]")
        if self.theta <= 0:
            raise WorkloadError("zipfian theta must be positive")
        if self.normal_sigma <= 0:
            raise WorkloadError("normal sigma must be positive")
        if self.pareto_alpha <= 0:
            raise WorkloadError("pareto alpha must be positive")
        if self.mode == Mode.OPEN and self.rate <= 0:
            raise WorkloadError("open-loop rate must be positive")
        if self.mode == Mode.CLOSED and self.qd <= 0:
            raise WorkloadError("closed-loop qd must be positive")
        if self.address_space < self.block_size:
            raise WorkloadError("address_space smaller than one block")
        Descriptor(opcode=self.opcode, flags=self.flags).validate()


@dataclass(frozen=True)
class Request:
    id: int
    t_submit: int
    kind: Kind
    address: int
    length: int
    opcode: int = 0
    flags: int = 0
    request_class: RequestClass = RequestClass.BEST_EFFORT

    @property
    def descriptor(self) -> Descriptor:
        return Descriptor(opcode=self.opcode, flags=self.flags, input_handle=self.address)


# samplers ------------------------------------------------------------------


class ZipfSampler:
    """Rejection-inversion sampling of ranks 1..n with P(k) proportional to k**-theta."""

    def __init__(self, n: int, theta: float):
        if n < 1 or theta <= 0:
            raise WorkloadError("zipf needs n >= 1 and theta > 0")
        self.n = n
        self.theta = theta
        self._hx1 = self._H(1.5) - 1.0
        self._hn = self._H(n + 0.5)
        self._s = 2.0 - self._H_inv(self._H(2.5) - self._h(2.0))

    def _h(self, x):
        return np.exp(-self.theta * np.log(x))

    def _H(self, x):
        log_x = np.log(x)
        t = (1.0 - self.theta) * log_x
        return _expm1_over_x(t) * log_x

    def _H_inv(self, x):
        t = np.maximum(x * (1.0 - self.theta), -1.0)
        return np.exp(_log1p_over_x(t) * x)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        out = np.empty(size, dtype=np.int64)
        todo = np.arange(size)
        while todo.size:
            u = self._hn + rng.random(todo.size) * (self._hx1 - self._hn)
            x = self._H_inv(u)
            k = np.clip(np.floor(x + 0.5), 1, self.n)
            ok = (k - x <= self._s) | (u >= self._H(k + 0.5) - self._h(k))
            out[todo[ok]] = k[ok].astype(np.int64)
            todo = todo[~ok]
        return out


def _expm1_over_x(x):
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 + x / 2.0, np.expm1(safe) / safe)


def _log1p_over_x(x):
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 - x / 2.0, np.log1p(safe) / safe)


def sample_blocks(spec: WorkloadSpec, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw ``size`` block indices in ``[0, spec.blocks)`` from the spec's distribution."""
    n = spec.blocks
    if spec.dist == Distribution.UNIFORM:
        return rng.integers(0, n, size=size)
    if spec.dist == Distribution.ZIPFIAN:
        return ZipfSampler(n, spec.theta).sample(rng, size) - 1
    out = np.empty(size, dtype=np.int64)
    todo = np.arange(size)
    while todo.size:
        if spec.dist == Distribution.NORMAL:
            x = np.floor(rng.normal(spec.normal_mu * n, spec.normal_sigma * n, todo.size))
        else:
            x = np.floor(rng.random(todo.size) ** (-1.0 / spec.pareto_alpha)) - 1
        ok = (x >= 0) & (x < n)
        out[todo[ok]] = x[ok].astype(np.int64)
        todo = todo[~ok]
    return out


class RequestStream:
    """Seeded request source.

    Open-loop streams carry their own arrival times; in closed-loop mode the
    engine stamps ``t_submit`` when a queue slot frees up.
    """

    BATCH = 4096

    def __init__(self, spec: WorkloadSpec):
        spec.validate()
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed)
        self._next_id = 0
        self._blocks: np.ndarray = np.empty(0, dtype=np.int64)
        self._reads: np.ndarray = np.empty(0, dtype=bool)
        self._gaps: np.ndarray = np.empty(0)
        self._pos = 0
        self._t = 0.0

    def _refill(self) -> None:
        spec = self.spec
        if spec.pattern == Pattern.RANDOM:
            self._blocks = sample_blocks(spec, self.rng, self.BATCH)
        self._reads = self.rng.random(self.BATCH) < spec.read_fraction
        if spec.mode == Mode.OPEN and spec.poisson:
            self._gaps = self.rng.exponential(1e6 / spec.rate, self.BATCH)
        self._pos = 0

    def next_arrival(self) -> int:
        """Arrival time of the next request without consuming it (open loop)."""
        spec = self.spec
        if spec.poisson:
            if self._pos >= len(self._reads):
                self._refill()
            return int(self._t + self._gaps[self._pos])
        return int(self._next_id * 1e6 // spec.rate)

    def next(self, t_submit: int | None = None) -> Request:
        spec = self.spec
        if spec.mode == Mode.OPEN and t_submit is None:
            t_submit = self.next_arrival()
            if spec.poisson:
                self._t += self._gaps[self._pos]
        if self._pos >= len(self._reads):
            self._refill()
        i = self._pos
        self._pos += 1
        rid = self._next_id
        self._next_id += 1
        if spec.pattern == Pattern.SEQUENTIAL:
            block = rid % spec.blocks
        else:
            block = int(self._blocks[i])
        return Request(
            id=rid,
            t_submit=int(t_submit or 0),
            kind=Kind.READ if self._reads[i] else Kind.WRITE,
            address=block * spec.block_size,
            length=spec.block_size,
            opcode=spec.opcode,
            flags=spec.flags,
            request_class=spec.request_class,
        )

    def __iter__(self) -> Iterator[Request]:
        while True:
            yield self.next()


def generate_stream(spec: WorkloadSpec, duration_s: float | None = None, count: int | None = None) -> list[Request]:
    """Materialise a request sequence bounded by ``duration_s`` and/or ``count``."""
    if duration_s is None and count is None:
        raise WorkloadError("bound the stream with duration_s or count")
    if spec.mode == Mode.CLOSED and count is None:
        raise WorkloadError("closed-loop streams are bounded by count")
    stream = RequestStream(spec)
    horizon = math.inf if duration_s is None else duration_s * 1e6
    out = []
    while count is None or len(out) < count:
        if spec.mode == Mode.OPEN and stream.next_arrival() >= horizon:
            break
        out.append(stream.next())
    return out


# presets -------------------------------------------------------------------

PRESETS: dict[str, WorkloadSpec] = {
    "sustained-write": WorkloadSpec(
        pattern=Pattern.SEQUENTIAL, block_size=4 * MiB, read_fraction=0.0,
        mode=Mode.CLOSED, qd=32, opcode=1, address_space=16 * GiB,
    ),
    "rocksdb-mix": WorkloadSpec(
        pattern=Pattern.RANDOM, dist=Distribution.ZIPFIAN, block_size=1 * KiB,
        read_fraction=0.5, mode=Mode.OPEN, rate=20000, opcode=1,
    ),
    "dist-sweep": WorkloadSpec(
        pattern=Pattern.RANDOM, dist=Distribution.ZIPFIAN, block_size=4 * KiB,
        read_fraction=0.5, mode=Mode.OPEN, rate=20000,
    ),
    "qd-sweep": WorkloadSpec(pattern=Pattern.RANDOM, block_size=4 * KiB, mode=Mode.CLOSED, qd=1),
    "blocksize-sweep": WorkloadSpec(pattern=Pattern.SEQUENTIAL, block_size=512, mode=Mode.CLOSED, qd=4),
}

# preset -> (scenario key, values) used by ``sweep --preset``
PRESET_SWEEPS: dict[str, tuple[str, list[str]]] = {
    "dist-sweep": ("workload.dist", [d.value for d in Distribution]),
    "qd-sweep": ("workload.qd", ["1", "2", "4", "8", "16", "32", "64"]),
    "blocksize-sweep": (
        "workload.block_size",
        [str(512 << i) for i in range(0, 18, 2)] + [str(64 * MiB)],
    ),
}


def preset(name: str, **overrides) -> WorkloadSpec:
    try:
        spec = PRESETS[name]
    except KeyError:
        raise WorkloadError(f"unknown workload preset {name!r}") from None
    return replace(spec, **overrides)


# trace files ---------------------------------------------------------------

TRACE_HEADER = "# t_us,kind,address,len,opcode,flags,class"
_CLASS_NAMES = {RequestClass.LATENCY_SENSITIVE: "latency_sensitive", RequestClass.BEST_EFFORT: "best_effort"}
_CLASS_BY_NAME = {v: k for k, v in _CLASS_NAMES.items()}


def format_trace(requests: Iterable[Request]) -> str:
    lines = [TRACE_HEADER]
    for r in requests:
        lines.append(
            f"{r.t_submit},{r.kind.value},{r.address},{r.length},{r.opcode},{r.flags},{_CLASS_NAMES[r.request_class]}"
        )
    return "\n".join(lines) + "\n"


def write_trace(requests: Iterable[Request], path: str | Path) -> None:
    Path(path).write_text(format_trace(requests))


def parse_trace(text: str) -> list[Request]:
    out: list[Request] = []
    last_t = -1
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 7:
            raise TraceError(lineno, f"expected 7 fields, got {len(parts)}")
        try:
            t, address, length, opcode, flags = (int(parts[i]) for i in (0, 2, 3, 4, 5))
            kind = Kind(parts[1])
            cls = _CLASS_BY_NAME[parts[6]]
        except (ValueError, KeyError) as exc:
            raise TraceError(lineno, f"bad field: {exc}") from None
        if t < last_t:
            raise TraceError(lineno, f"timestamp {t} precedes {last_t}")
        if length <= 0 or address < 0:
            raise TraceError(lineno, "length must be positive and address non-negative")
        try:
            Descriptor(opcode=opcode, flags=flags).validate()
        except ValueError as exc:
            raise TraceError(lineno, str(exc)) from None
        last_t = t
        out.append(Request(len(out), t, kind, address, length, opcode, flags, cls))
    return out


def replay_trace(path: str | Path) -> list[Request]:
    return parse_trace(Path(path).read_text())
