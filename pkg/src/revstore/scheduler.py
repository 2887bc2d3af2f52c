"""Epoch-driven placement policy with residency hysteresis and a one-move-per-epoch budget."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from .actor import Placement, RequestClass, StorageActor


@dataclass(frozen=True)
class Telemetry:
    t: int  # virtual µs
    host_util: float = 0.0
    host_freq: float = 3.8
    device_temp: float = 30.0
    device_util: float = 0.0
    queue_depth: int = 0
    device_power: float = 0.0


@dataclass(frozen=True)
class PolicyParams:
    T_high: float = 75.0
    U_high: float = 0.80
    U_low: float = 0.40
    min_residency_ms: float = 100.0
    epoch_ms: float = 10.0
    degrade_step: float = 0.9
    recover_step: float = 1.05
    min_degrade: float = 0.1
    cool_margin: float = 10.0  # device counts as cool below T_high - cool_margin

    def validate(self) -> None:
        if not self.U_low < self.U_high:
            raise ValueError("U_low must be below U_high")
        if self.epoch_ms <= 0:
            raise ValueError("epoch_ms must be positive")
        if self.min_residency_ms < self.epoch_ms:
            raise ValueError("min_residency_ms must be at least epoch_ms")
        if not 0 < self.degrade_step < 1 or self.recover_step < 1:
            raise ValueError("degrade_step must be in (0, 1) and recover_step >= 1")

    @property
    def epoch_us(self) -> int:
        return round(self.epoch_ms * 1000)

    @property
    def residency_us(self) -> int:
        return round(self.min_residency_ms * 1000)


class DirectiveKind(str, Enum):
    NONE = "none"
    UPLOAD = "upload"
    OFFLOAD = "offload"
    DEGRADE = "degrade"


@dataclass(frozen=True)
class Directive:
    kind: DirectiveKind = DirectiveKind.NONE
    actor_id: int | None = None
    factor: float | None = None

    def __str__(self) -> str:
        if self.kind in (DirectiveKind.UPLOAD, DirectiveKind.OFFLOAD):
            return f"{self.kind.value}:{self.actor_id}"
        if self.kind == DirectiveKind.DEGRADE:
            return f"degrade:{self.factor:.6f}"
        return "none"


NO_DIRECTIVE = Directive()


class BudgetViolation(RuntimeError):
    pass


@dataclass
class History:
    residency_since: dict[int, int] = field(default_factory=dict)
    moves_by_epoch: dict[int, int] = field(default_factory=dict)
    degrade_factor: float = 1.0
    last_directive: Directive = NO_DIRECTIVE

    def eligible(self, actor_id: int, t: int, params: PolicyParams) -> bool:
        return t - self.residency_since.get(actor_id, 0) >= params.residency_us

    def budget_left(self, t: int, params: PolicyParams) -> bool:
        return self.moves_by_epoch.get(t // params.epoch_us, 0) == 0


@dataclass(frozen=True)
class PlatformState:
    device_temp: float
    host_util: float = 0.0
    host_freq: float = 3.8
    device_util: float = 0.0
    queue_depth: int = 0
    device_power: float = 0.0


def sample_telemetry(state: PlatformState, t: int, epoch_us: int = 10_000) -> Telemetry:
    if t % epoch_us:
        raise ValueError(f"t={t} is not aligned to the {epoch_us} µs epoch")
    values = (state.host_util, state.host_freq, state.device_temp, state.device_util, state.device_power)
    if not all(math.isfinite(v) for v in values):
        raise ValueError("telemetry values must be finite")
    return Telemetry(
        t=t,
        host_util=state.host_util,
        host_freq=state.host_freq,
        device_temp=state.device_temp,
        device_util=state.device_util,
        queue_depth=state.queue_depth,
        device_power=state.device_power,
    )


def decide_placement(
    tel: Telemetry,
    actors: Iterable[StorageActor],
    params: PolicyParams,
    history: History,
    power: Mapping[int, float] | None = None,
    host_throttling: bool = False,
    busy: Iterable[int] = (),
) -> Directive:
    """Pick this epoch's directive.

    Precedence: both sides hot degrades the admission rate; a hot device with
    host headroom uploads one actor; a hot host with a cool device offloads
    one. ``power`` maps actor id to its modeled device-power contribution and
    breaks ties (largest first, then lowest id). Actors listed in ``busy``
    are mid-migration and never chosen.
    """
    power = power or {}
    busy = set(busy)
    device_hot = tel.device_temp > params.T_high
    host_hot = tel.host_util > params.U_high
    if device_hot and host_hot:
        return Directive(DirectiveKind.DEGRADE, factor=max(params.min_degrade, history.degrade_factor * params.degrade_step))
    if not history.budget_left(tel.t, params):
        return NO_DIRECTIVE

    def pick(candidates):
        pool = [a for a in candidates if a.actor_id not in busy and history.eligible(a.actor_id, tel.t, params)]
        if not pool:
            return None
        return min(pool, key=lambda a: (-power.get(a.actor_id, 0.0), a.actor_id))

    actors = list(actors)
    if device_hot and tel.host_util < params.U_low:
        chosen = pick(a for a in actors if a.placement == Placement.DEVICE and a.request_class == RequestClass.BEST_EFFORT)
        if chosen is not None:
            return Directive(DirectiveKind.UPLOAD, chosen.actor_id)
    if host_hot and tel.device_temp < params.T_high - params.cool_margin:
        on_host = [a for a in actors if a.placement == Placement.HOST]
        chosen = pick(a for a in on_host if a.request_class == RequestClass.BEST_EFFORT)
        if chosen is None and host_throttling:
            chosen = pick(a for a in on_host if a.request_class == RequestClass.LATENCY_SENSITIVE)
        if chosen is not None:
            return Directive(DirectiveKind.OFFLOAD, chosen.actor_id)
    return NO_DIRECTIVE


def record_migration(history: History, actor_id: int, t: int, params: PolicyParams, budgeted: bool = True) -> History:
    """Reset the actor's residency clock and spend this epoch's move budget."""
    if budgeted:
        epoch = t // params.epoch_us
        if history.moves_by_epoch.get(epoch, 0) >= 1:
            raise BudgetViolation(f"second actor move in epoch {epoch}")
        history.moves_by_epoch[epoch] = history.moves_by_epoch.get(epoch, 0) + 1
    history.residency_since[actor_id] = t
    return history


def next_degrade_factor(history: History, directive: Directive, params: PolicyParams) -> float:
    if directive.kind == DirectiveKind.DEGRADE:
        return directive.factor
    return min(1.0, history.degrade_factor * params.recover_step)
