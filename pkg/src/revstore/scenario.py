"""Scenario files: a sectioned key/value format, one section per subsystem.

Every key maps onto a dataclass field; values not given fall back to the
field defaults. ``[device] profile`` and ``[workload] preset`` seed their
sections from a named built-in before individual keys override it.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any

from .actor import DEFAULT_COMPRESSION_RATIO, DEFAULT_CONTROL_STATE, Placement, RequestClass, StageKind
from .platform import PROFILES, DeviceProfile, HostProfile, NotificationParams, NotificationStrategy
from .scheduler import PolicyParams
from .workload import PRESETS, Distribution, Mode, Pattern, WorkloadError, WorkloadSpec


class ScenarioError(ValueError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        where = ""
        if path:
            where = f"{path}:{line}: " if line else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


@dataclass(frozen=True)
class ForcedMove:
    t_ms: float
    actor_id: int
    dest: Placement


@dataclass(frozen=True)
class ActorGroup:
    name: str = "default"
    count: int = 4
    stage: StageKind = StageKind.COMPRESS
    placement: Placement = Placement.DEVICE
    request_class: RequestClass = RequestClass.BEST_EFFORT
    control_state_bytes: int = DEFAULT_CONTROL_STATE


@dataclass(frozen=True)
class MigrationConfig:
    enabled: bool = True
    allow_self: bool = True
    retry_interrupted: bool = True
    checkpoint_fixed_us: int = 5
    doorbell_us: int = 1
    reconstruct_us: int = 20
    pmr_write_GiBps: float = 3.3
    max_control_state: int = DEFAULT_CONTROL_STATE
    forced: tuple[ForcedMove, ...] = ()


@dataclass(frozen=True)
class FaultConfig:
    crashes_ms: tuple[float, ...] = ()
    crash_after_event: int = -1  # crash right after the n-th processed event; -1 disables
    restart_us: int = 1000


@dataclass(frozen=True)
class RegionConfig:
    capacity_GiB: float = 32.0
    nand_drain_GiBps: float = 2.0
    gpf_us: int = 10
    nand_fallback_us: int = 0  # extra latency past PMR capacity; 0 makes overflow an error


@dataclass(frozen=True)
class OutputConfig:
    out_dir: str = "out"
    window_ms: float = 1000.0


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int = 0
    duration_s: float = 1.0
    compression_ratio: float = DEFAULT_COMPRESSION_RATIO
    scheduler: bool = True
    device: DeviceProfile = field(default_factory=lambda: PROFILES["cxl-ssd"])
    host: HostProfile = field(default_factory=HostProfile)
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    policy: PolicyParams = field(default_factory=PolicyParams)
    notification: NotificationParams = field(default_factory=NotificationParams)
    migration: MigrationConfig = field(default_factory=MigrationConfig)
    faults: FaultConfig = field(default_factory=FaultConfig)
    region: RegionConfig = field(default_factory=RegionConfig)
    actors: tuple[ActorGroup, ...] = (ActorGroup(),)
    output: OutputConfig = field(default_factory=OutputConfig)

    def validate(self) -> None:
        if self.duration_s <= 0:
            raise ScenarioError("scenario.duration_s must be positive")
        if self.compression_ratio <= 0:
            raise ScenarioError("scenario.compression_ratio must be positive")
        try:
            self.workload.validate()
            self.policy.validate()
        except (WorkloadError, ValueError) as exc:
            raise ScenarioError(str(exc)) from None
        if not self.actors or any(g.count <= 0 for g in self.actors):
            raise ScenarioError("every actor group needs count >= 1")
        n = sum(g.count for g in self.actors)
        for move in self.migration.forced:
            if not 0 <= move.actor_id < n:
                raise ScenarioError(f"forced move names unknown actor {move.actor_id}")
        if self.output.window_ms <= 0:
            raise ScenarioError("output.window_ms must be positive")

    @property
    def n_actors(self) -> int:
        return sum(g.count for g in self.actors)


# value codecs -----------------------------------------------------------------


def _enum_value(e: Enum) -> str:
    return e.name.lower() if isinstance(e.value, int) else e.value


def _parse_enum(cls, text: str):
    key = text.strip().lower().replace("-", "_")
    for member in cls:
        if _enum_value(member) == key or member.name.lower() == key:
            return member
    raise ValueError(f"expected one of {', '.join(_enum_value(m) for m in cls)}")


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Enum):
        return _enum_value(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format_item(v) for v in value)
    return str(value)


def _format_item(v: Any) -> str:
    if isinstance(v, ForcedMove):
        return f"{v.t_ms!r}:{v.actor_id}:{_enum_value(v.dest)}"
    if isinstance(v, tuple):
        return ":".join(repr(float(x)) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _parse_value(name: str, text: str, default: Any) -> Any:
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, Enum):
        return _parse_enum(type(default), text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, str):
        return text.strip()
    if isinstance(default, tuple):
        items = [s.strip() for s in text.replace(";", ",").split(",") if s.strip()]
        if name == "throttle_table":
            pairs = []
            for item in items:
                t, f = item.split(":")
                pairs.append((float(t), float(f)))
            return tuple(pairs)
        if name == "forced":
            moves = []
            for item in items:
                t, aid, dest = item.split(":")
                moves.append(ForcedMove(float(t), int(aid), _parse_enum(Placement, dest)))
            return tuple(moves)
        return tuple(float(x) for x in items)
    raise ValueError(f"unsupported field type for {name}")


# sections -----------------------------------------------------------------------

_SECTIONS = {
    "device": "device",
    "host": "host",
    "workload": "workload",
    "policy": "policy",
    "notification": "notification",
    "migration": "migration",
    "faults": "faults",
    "region": "region",
    "output": "output",
}
_SCENARIO_KEYS = ("name", "seed", "duration_s", "compression_ratio", "scheduler")
_HIDDEN = {"workload": {"seed"}, "device": {"name"}, "actors": {"name"}}  # seed follows the scenario seed


def _line_index(text: str) -> dict[tuple[str, str | None], int]:
    index: dict[tuple[str, str | None], int] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            index.setdefault((section, None), lineno)
        elif section is not None:
            for sep in ("=", ":"):
                if sep in line:
                    index.setdefault((section, line.split(sep, 1)[0].strip().lower()), lineno)
                    break
    return index


def _apply(obj, section: str, items: dict[str, str], skip: set[str], err) -> Any:
    # keys arrive lower-cased from the parser; field names may not be
    known = {f.name.lower(): f.name for f in fields(obj)}
    changes = {}
    for key, text in items.items():
        if key in skip:
            continue
        name = known.get(key)
        if name is None or name in _HIDDEN.get(section.split(".")[0], set()):
            raise err(f"unknown key {section}.{key}", section, key)
        try:
            changes[name] = _parse_value(name, text, getattr(obj, name))
        except ValueError as exc:
            raise err(f"type mismatch for {section}.{key}={text!r}: {exc}", section, key) from None
    try:
        return replace(obj, **changes)
    except (ValueError, TypeError) as exc:
        raise err(f"invalid [{section}]: {exc}", section, None) from None


def loads_scenario(text: str, path: str | None = None) -> Scenario:
    lines = _line_index(text)

    def err(message, section=None, key=None):
        line = lines.get((section, key)) or lines.get((section, None)) if section else None
        return ScenarioError(message, path, line)

    parser = configparser.ConfigParser(interpolation=None, strict=True)
    try:
        parser.read_string(text, source=path or "<string>")
    except configparser.Error as exc:
        raise ScenarioError(f"syntax error: {exc}", path, getattr(exc, "lineno", None)) from None

    for section in parser.sections():
        if section != "scenario" and section not in _SECTIONS and not (
            section == "actors" or section.startswith("actors.")
        ):
            raise err(f"unknown section [{section}]", section)
    if not parser.has_section("scenario") or not parser.get("scenario", "name", fallback="").strip():
        raise err("missing required field scenario.name", "scenario")
    if not parser.has_section("device") or not parser.has_option("device", "profile"):
        raise err("missing required field device.profile", "device")
    if not parser.has_section("workload"):
        raise err("missing required section [workload]", "workload")

    top = dict(parser.items("scenario"))
    for key in top:
        if key not in _SCENARIO_KEYS:
            raise err(f"unknown key scenario.{key}", "scenario", key)
    base = Scenario(name=top["name"].strip())
    scen_changes = {}
    for key in ("seed", "duration_s", "compression_ratio", "scheduler"):
        if key in top:
            try:
                scen_changes[key] = _parse_value(key, top[key], getattr(base, key))
            except ValueError as exc:
                raise err(f"type mismatch for scenario.{key}={top[key]!r}: {exc}", "scenario", key) from None

    dev_items = dict(parser.items("device"))
    profile = dev_items["profile"].strip()
    if profile not in PROFILES:
        raise err(f"device.profile: unknown device profile {profile!r}", "device", "profile")
    device = _apply(PROFILES[profile], "device", dev_items, {"profile"}, err)

    wl_items = dict(parser.items("workload"))
    wl_base = WorkloadSpec()
    if "preset" in wl_items:
        name = wl_items["preset"].strip()
        if name not in PRESETS:
            raise err(f"workload.preset: unknown preset {name!r}", "workload", "preset")
        wl_base = PRESETS[name]
    workload = _apply(wl_base, "workload", wl_items, {"preset"}, err)

    sections = {}
    defaults = {
        "host": HostProfile(),
        "policy": PolicyParams(),
        "notification": NotificationParams(),
        "migration": MigrationConfig(),
        "faults": FaultConfig(),
        "region": RegionConfig(),
        "output": OutputConfig(),
    }
    for sec, default in defaults.items():
        items = dict(parser.items(sec)) if parser.has_section(sec) else {}
        sections[sec] = _apply(default, sec, items, set(), err)

    groups = []
    for sec in parser.sections():
        if sec == "actors" or sec.startswith("actors."):
            name = sec.split(".", 1)[1] if "." in sec else "default"
            groups.append(_apply(ActorGroup(name=name), sec, dict(parser.items(sec)), set(), err))
    if not groups:
        from .actor import OPCODE_STAGES

        groups = [ActorGroup(stage=OPCODE_STAGES[workload.opcode])]

    scenario = Scenario(
        **{"name": base.name, **scen_changes},
        device=device,
        workload=workload,
        actors=tuple(groups),
        **sections,
    )
    try:
        scenario.validate()
    except ScenarioError as exc:
        raise ScenarioError(str(exc), path) from None
    return scenario


def parse_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc}", str(path)) from None
    return loads_scenario(text, str(path))


def dumps_scenario(s: Scenario) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser["scenario"] = {k: _format(getattr(s, k)) for k in _SCENARIO_KEYS}
    parser["device"] = {"profile": s.device.name, **_fields(s.device, {"name"})}
    for sec in ("host", "workload", "policy", "notification", "migration", "faults", "region"):
        parser[sec] = _fields(getattr(s, sec), _HIDDEN.get(sec, set()))
    for g in s.actors:
        sec = "actors" if g.name == "default" else f"actors.{g.name}"
        parser[sec] = _fields(g, {"name"})
    parser["output"] = _fields(s.output, set())
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def _fields(obj, skip: set[str]) -> dict[str, str]:
    return {f.name: _format(getattr(obj, f.name)) for f in dataclasses.fields(obj) if f.name not in skip}


def with_override(s: Scenario, key: str, value: str) -> Scenario:
    """Return ``s`` with one dotted ``section.key`` replaced, re-validated through the parser."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(dumps_scenario(s))
    section, _, name = key.rpartition(".")
    if not section or not parser.has_section(section):
        raise ScenarioError(f"unknown sweep key {key!r}")
    parser[section][name] = value
    if section == "workload":
        parser[section].pop("preset", None)
    buf = io.StringIO()
    parser.write(buf)
    return loads_scenario(buf.getvalue())


__all__ = [
    "ActorGroup",
    "FaultConfig",
    "ForcedMove",
    "MigrationConfig",
    "OutputConfig",
    "RegionConfig",
    "Scenario",
    "ScenarioError",
    "dumps_scenario",
    "loads_scenario",
    "parse_scenario",
    "with_override",
    "Distribution",
    "Mode",
    "Pattern",
    "NotificationStrategy",
]
