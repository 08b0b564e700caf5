"""Network data model for wind-integrated power systems.

Buses come in four kinds: one slack bus (fixed 1.0 p.u. at angle 0, the
network reference), PV buses hosting synchronous generators with scheduled
active power and a voltage-magnitude setpoint, at most one wind bus hosting
the aggregated turbine/DFIG plant, and load buses modeled as constant
shunt admittance.  All electrical quantities are per-unit on the system
base; angles are radians.

Case files are strict JSON documents (see ``docs/case_schema.md``);
unknown keys are rejected so that typos fail loudly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from typing import Mapping

BUS_KINDS = ("slack", "pv", "wind", "load")


class CaseError(ValueError):
    """A case file violates the schema or the network invariants."""


class NoSuchLineError(KeyError):
    """Requested line does not exist in the network."""


@dataclass(frozen=True)
class Diagnostic:
    severity: str          # "error" | "warning"
    code: str
    message: str
    subject: str = ""

    def __str__(self) -> str:
        where = f" [{self.subject}]" if self.subject else ""
        return f"{self.severity}:{self.code}{where} {self.message}"


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str
    shunt_conductance: float = 0.0
    shunt_susceptance: float = 0.0
    voltage_setpoint: float | None = None
    angle_setpoint: float | None = None


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    impedance: complex

    @property
    def key(self) -> tuple[int, int]:
        return (min(self.from_bus, self.to_bus), max(self.from_bus, self.to_bus))


@dataclass(frozen=True)
class SyncGenerator:
    bus: int
    inertia: float                 # p.u. * s^2
    internal_voltage: float        # p.u., nominal; re-derived per equilibrium
    transient_reactance: float     # p.u.
    mechanical_power: float        # p.u.
    scheduled_active_power: float  # p.u., dispatch for PV buses


@dataclass(frozen=True)
class Turbine:
    swept_area: float      # m^2
    air_density: float     # kg/m^3
    blade_length: float    # m
    gear_ratio: float
    pitch: float = 0.0     # rad


@dataclass(frozen=True)
class Dfig:
    r_s: float
    r_r: float
    l_ls: float
    l_lr: float
    l_m: float
    poles: int
    sync_speed: float      # mechanical synchronous speed, rad/s

    @property
    def l_s(self) -> float:
        """Total stator inductance (leakage plus magnetizing)."""
        return self.l_ls + self.l_m

    @property
    def l_r(self) -> float:
        """Total rotor inductance (leakage plus magnetizing)."""
        return self.l_lr + self.l_m


@dataclass(frozen=True)
class OperatingPoint:
    wind_speed: float              # m/s
    generator_speed: float         # mechanical rad/s
    scheduled_active_power: float  # p.u. at unit penetration


@dataclass(frozen=True)
class WindPlant:
    bus: int
    turbine: Turbine
    dfig: Dfig
    operating_point: OperatingPoint
    unit_scale: float = 1000.0     # turbines per unit of the penetration factor


@dataclass(frozen=True)
class Network:
    """Immutable validated network; safe to share across worker threads."""

    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    generators: tuple[SyncGenerator, ...]
    wind_plant: WindPlant | None
    base_mva: float

    def __post_init__(self):
        object.__setattr__(
            self, "_bus_index", {b.id: b for b in self.buses}
        )
        object.__setattr__(
            self, "_line_index", {ln.key: ln for ln in self.lines}
        )
        object.__setattr__(
            self, "_gen_index", {g.bus: g for g in self.generators}
        )

    def bus(self, bus_id: int) -> Bus:
        return self._bus_index[bus_id]

    def generator_at(self, bus_id: int) -> SyncGenerator:
        return self._gen_index[bus_id]

    @property
    def slack_bus(self) -> Bus:
        return next(b for b in self.buses if b.kind == "slack")

    @property
    def wind_bus(self) -> Bus | None:
        return next((b for b in self.buses if b.kind == "wind"), None)

    def buses_of_kind(self, kind: str) -> tuple[Bus, ...]:
        return tuple(sorted((b for b in self.buses if b.kind == kind),
                            key=lambda b: b.id))

    def lines_at(self, bus_id: int) -> tuple[Line, ...]:
        return tuple(
            ln for ln in self.lines if bus_id in (ln.from_bus, ln.to_bus)
        )

    def line(self, j: int, k: int) -> Line:
        key = (min(j, k), max(j, k))
        try:
            return self._line_index[key]
        except KeyError:
            raise NoSuchLineError(f"no line between buses {j} and {k}") from None


def line_admittance(net: Network, j: int, k: int) -> complex:
    """Series admittance 1/Z of the line between buses ``j`` and ``k``."""
    return 1.0 / net.line(j, k).impedance


# -- case file parsing -------------------------------------------------------

_BUS_KEYS = {
    "id", "kind", "shunt_conductance", "shunt_susceptance",
    "voltage_setpoint", "angle_setpoint",
}
_LINE_KEYS = {"from", "to", "impedance"}
_GEN_KEYS = {
    "bus", "inertia", "internal_voltage", "transient_reactance",
    "mechanical_power", "scheduled_active_power",
}
_TURBINE_KEYS = {"swept_area", "air_density", "blade_length", "gear_ratio", "pitch"}
_DFIG_KEYS = {"r_s", "r_r", "l_ls", "l_lr", "l_m", "poles", "sync_speed"}
_OP_KEYS = {"wind_speed", "generator_speed", "scheduled_active_power"}
_PLANT_KEYS = {"bus", "turbine", "dfig", "operating_point", "unit_scale"}
_TOP_KEYS = {"base_mva", "buses", "lines", "generators", "wind_plant"}


def _check_keys(obj: Mapping, allowed: set, where: str) -> None:
    if not isinstance(obj, Mapping):
        raise CaseError(f"{where}: expected an object")
    extra = set(obj) - allowed
    if extra:
        raise CaseError(f"{where}: unknown keys {sorted(extra)}")


def _num(obj: Mapping, key: str, where: str, required=True, default=None):
    if key not in obj:
        if required:
            raise CaseError(f"{where}: missing field {key!r}")
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise CaseError(f"{where}: field {key!r} must be a number")
    return float(v)


def load_case(case_text: str) -> Network:
    """Parse and validate a JSON case document into a :class:`Network`.

    Raises :class:`CaseError` on schema violations, dangling references,
    duplicate slack/wind buses, or a disconnected graph.  Any network this
    function returns passes :func:`validate` cleanly.
    """
    try:
        doc = json.loads(case_text)
    except json.JSONDecodeError as exc:
        raise CaseError(f"case is not valid JSON: {exc}") from exc
    _check_keys(doc, _TOP_KEYS, "case")
    base_mva = _num(doc, "base_mva", "case")

    buses = []
    for i, b in enumerate(doc.get("buses", [])):
        where = f"buses[{i}]"
        _check_keys(b, _BUS_KEYS, where)
        kind = b.get("kind")
        if kind not in BUS_KINDS:
            raise CaseError(f"{where}: kind must be one of {BUS_KINDS}")
        bus_id = b.get("id")
        if not isinstance(bus_id, int) or isinstance(bus_id, bool):
            raise CaseError(f"{where}: id must be an integer")
        vset = _num(b, "voltage_setpoint", where, required=(kind != "load"))
        if kind == "load" and "voltage_setpoint" in b:
            raise CaseError(f"{where}: load buses carry no voltage setpoint")
        aset = _num(b, "angle_setpoint", where, required=False)
        if kind != "slack" and aset is not None:
            raise CaseError(f"{where}: angle setpoint is slack-only")
        buses.append(
            Bus(
                id=bus_id,
                kind=kind,
                shunt_conductance=_num(b, "shunt_conductance", where,
                                       required=False, default=0.0),
                shunt_susceptance=_num(b, "shunt_susceptance", where,
                                       required=False, default=0.0),
                voltage_setpoint=vset,
                angle_setpoint=aset if kind == "slack" else None,
            )
        )
    ids = [b.id for b in buses]
    if len(set(ids)) != len(ids):
        raise CaseError("duplicate bus ids")
    id_set = set(ids)
    if sum(1 for b in buses if b.kind == "slack") != 1:
        raise CaseError("exactly one slack bus is required")
    if sum(1 for b in buses if b.kind == "wind") > 1:
        raise CaseError("at most one wind bus is allowed")

    lines = []
    for i, ln in enumerate(doc.get("lines", [])):
        where = f"lines[{i}]"
        _check_keys(ln, _LINE_KEYS, where)
        f, t = ln.get("from"), ln.get("to")
        for end in (f, t):
            if end not in id_set:
                raise CaseError(f"{where}: dangling bus reference {end!r}")
        z = ln.get("impedance")
        if (not isinstance(z, list) or len(z) != 2
                or any(isinstance(u, bool) or not isinstance(u, (int, float))
                       for u in z)):
            raise CaseError(f"{where}: impedance must be a [re, im] pair")
        lines.append(Line(from_bus=f, to_bus=t, impedance=complex(z[0], z[1])))
    keys = [ln.key for ln in lines]
    if len(set(keys)) != len(keys):
        raise CaseError("parallel lines must be pre-combined into one")

    gens = []
    for i, g in enumerate(doc.get("generators", [])):
        where = f"generators[{i}]"
        _check_keys(g, _GEN_KEYS, where)
        if g.get("bus") not in id_set:
            raise CaseError(f"{where}: dangling bus reference")
        gens.append(
            SyncGenerator(
                bus=g["bus"],
                inertia=_num(g, "inertia", where),
                internal_voltage=_num(g, "internal_voltage", where),
                transient_reactance=_num(g, "transient_reactance", where),
                mechanical_power=_num(g, "mechanical_power", where),
                scheduled_active_power=_num(g, "scheduled_active_power", where),
            )
        )

    plant = None
    if doc.get("wind_plant") is not None:
        wp = doc["wind_plant"]
        _check_keys(wp, _PLANT_KEYS, "wind_plant")
        for sub, allowed in (("turbine", _TURBINE_KEYS), ("dfig", _DFIG_KEYS),
                             ("operating_point", _OP_KEYS)):
            if sub not in wp:
                raise CaseError(f"wind_plant: missing section {sub!r}")
            _check_keys(wp[sub], allowed, f"wind_plant.{sub}")
        if wp.get("bus") not in id_set:
            raise CaseError("wind_plant: dangling bus reference")
        tb, dq, op = wp["turbine"], wp["dfig"], wp["operating_point"]
        poles = dq.get("poles")
        if not isinstance(poles, int) or isinstance(poles, bool):
            raise CaseError("wind_plant.dfig: poles must be an integer")
        plant = WindPlant(
            bus=wp["bus"],
            turbine=Turbine(
                swept_area=_num(tb, "swept_area", "turbine"),
                air_density=_num(tb, "air_density", "turbine"),
                blade_length=_num(tb, "blade_length", "turbine"),
                gear_ratio=_num(tb, "gear_ratio", "turbine"),
                pitch=_num(tb, "pitch", "turbine", required=False, default=0.0),
            ),
            dfig=Dfig(
                r_s=_num(dq, "r_s", "dfig"),
                r_r=_num(dq, "r_r", "dfig"),
                l_ls=_num(dq, "l_ls", "dfig"),
                l_lr=_num(dq, "l_lr", "dfig"),
                l_m=_num(dq, "l_m", "dfig"),
                poles=poles,
                sync_speed=_num(dq, "sync_speed", "dfig"),
            ),
            operating_point=OperatingPoint(
                wind_speed=_num(op, "wind_speed", "operating_point"),
                generator_speed=_num(op, "generator_speed", "operating_point"),
                scheduled_active_power=_num(op, "scheduled_active_power",
                                            "operating_point"),
            ),
            unit_scale=_num(wp, "unit_scale", "wind_plant",
                            required=False, default=1000.0),
        )

    net = Network(
        buses=tuple(sorted(buses, key=lambda b: b.id)),
        lines=tuple(lines),
        generators=tuple(sorted(gens, key=lambda g: g.bus)),
        wind_plant=plant,
        base_mva=base_mva,
    )
    problems = [d for d in validate(net) if d.severity == "error"]
    if problems:
        raise CaseError("; ".join(str(d) for d in problems))
    return net


def serialize(net: Network) -> dict:
    """Inverse of :func:`load_case`: a JSON-ready case document."""
    doc: dict = {"base_mva": net.base_mva, "buses": [], "lines": [],
                 "generators": [], "wind_plant": None}
    for b in net.buses:
        entry: dict = {"id": b.id, "kind": b.kind}
        if b.shunt_conductance:
            entry["shunt_conductance"] = b.shunt_conductance
        if b.shunt_susceptance:
            entry["shunt_susceptance"] = b.shunt_susceptance
        if b.voltage_setpoint is not None:
            entry["voltage_setpoint"] = b.voltage_setpoint
        if b.angle_setpoint is not None:
            entry["angle_setpoint"] = b.angle_setpoint
        doc["buses"].append(entry)
    for ln in net.lines:
        doc["lines"].append({
            "from": ln.from_bus, "to": ln.to_bus,
            "impedance": [ln.impedance.real, ln.impedance.imag],
        })
    for g in net.generators:
        doc["generators"].append({
            "bus": g.bus, "inertia": g.inertia,
            "internal_voltage": g.internal_voltage,
            "transient_reactance": g.transient_reactance,
            "mechanical_power": g.mechanical_power,
            "scheduled_active_power": g.scheduled_active_power,
        })
    if net.wind_plant is not None:
        wp = net.wind_plant
        doc["wind_plant"] = {
            "bus": wp.bus,
            "turbine": asdict(wp.turbine),
            "dfig": asdict(wp.dfig),
            "operating_point": asdict(wp.operating_point),
            "unit_scale": wp.unit_scale,
        }
    return doc


# -- validation ---------------------------------------------------------------


def validate(net: Network, include_warnings: bool = False) -> list[Diagnostic]:
    """Check every network invariant; empty result means the network is valid.

    Violations come back one :class:`Diagnostic` per problem.  With
    ``include_warnings`` the list also carries non-fatal consistency notes
    (swept area vs blade length, turbine torque vs scheduled power).
    """
    out: list[Diagnostic] = []

    def err(code, msg, subject=""):
        out.append(Diagnostic("error", code, msg, subject))

    def warn(code, msg, subject=""):
        if include_warnings:
            out.append(Diagnostic("warning", code, msg, subject))

    slacks = net.buses_of_kind("slack")
    if len(slacks) != 1:
        err("duplicate-slack", f"expected exactly one slack bus, got {len(slacks)}")
    winds = net.buses_of_kind("wind")
    if len(winds) > 1:
        err("duplicate-wind", f"expected at most one wind bus, got {len(winds)}")
    if (len(winds) == 1) != (net.wind_plant is not None):
        err("wind-mismatch", "wind bus and wind plant must appear together")
    if net.wind_plant is not None and winds:
        if net.wind_plant.bus != winds[0].id:
            err("wind-mismatch", "wind plant is not attached to the wind bus",
                f"bus {net.wind_plant.bus}")

    for b in net.buses:
        sub = f"bus {b.id}"
        if b.kind in ("slack", "pv", "wind"):
            if b.voltage_setpoint is None or b.voltage_setpoint <= 0:
                err("bad-voltage-setpoint",
                    "voltage setpoint must be strictly positive", sub)
        if b.kind == "slack":
            if b.voltage_setpoint is not None and b.voltage_setpoint != 1.0:
                err("slack-setpoint",
                    "slack bus must hold 1.0 p.u. (network reference)", sub)
            if b.angle_setpoint not in (None, 0.0):
                err("slack-angle", "slack angle must be 0", sub)

    for ln in net.lines:
        sub = f"line {ln.from_bus}-{ln.to_bus}"
        if abs(ln.impedance) == 0.0:
            err("zero-impedance", "line impedance magnitude must be positive", sub)
        if ln.from_bus == ln.to_bus:
            err("self-loop", "line endpoints must differ", sub)

    gen_buses = {g.bus for g in net.generators}
    for b in net.buses:
        if b.kind in ("pv", "slack") and b.id not in gen_buses:
            err("missing-generator",
                f"{b.kind} bus must host a synchronous generator", f"bus {b.id}")
    if len(gen_buses) != len(net.generators):
        err("duplicate-generator", "one generator per bus")
    for g in net.generators:
        sub = f"generator at bus {g.bus}"
        kind = net._bus_index.get(g.bus)
        if kind is None or kind.kind not in ("pv", "slack"):
            err("generator-placement",
                "generators belong on pv or slack buses", sub)
        if g.inertia <= 0:
            err("non-physical-inertia", "inertia must be positive", sub)
        if g.transient_reactance <= 0:
            err("non-physical-reactance",
                "transient reactance must be positive", sub)
        if g.internal_voltage <= 0:
            err("non-physical-voltage", "internal voltage must be positive", sub)

    wp = net.wind_plant
    if wp is not None:
        sub = f"wind plant at bus {wp.bus}"
        for name, value in (("r_s", wp.dfig.r_s), ("r_r", wp.dfig.r_r),
                            ("l_ls", wp.dfig.l_ls), ("l_lr", wp.dfig.l_lr),
                            ("l_m", wp.dfig.l_m)):
            if value <= 0:
                err("non-physical-inductance",
                    f"dfig parameter {name} must be positive", sub)
        if wp.dfig.poles % 2 != 0 or wp.dfig.poles <= 0:
            err("bad-pole-count", "pole count must be a positive even integer", sub)
        if wp.dfig.sync_speed <= 0:
            err("non-physical-speed", "synchronous speed must be positive", sub)
        if wp.operating_point.wind_speed <= 0:
            err("non-physical-wind-speed", "wind speed must be positive", sub)
        if wp.operating_point.generator_speed <= 0:
            err("non-physical-speed", "generator speed must be positive", sub)
        if wp.turbine.blade_length > 0 and wp.turbine.swept_area > 0:
            disc = math.pi * wp.turbine.blade_length ** 2
            if abs(wp.turbine.swept_area - disc) / wp.turbine.swept_area > 0.01:
                warn("swept-area-mismatch",
                     f"swept area {wp.turbine.swept_area} differs from disc "
                     f"area {disc:.2f} by more than 1%", sub)
        else:
            err("non-physical-turbine",
                "blade length and swept area must be positive", sub)
        _torque_consistency_warning(net, wp, warn, sub)

    if net.buses and not _connected(net):
        err("disconnected", "network graph is not connected")

    return out


def _torque_consistency_warning(net: Network, wp: WindPlant, warn, sub: str) -> None:
    """Compare aerodynamic shaft power against the scheduled injection.

    The turbine side is SI; the electrical side is per-unit.  The bridge is
    the per-turbine S base ``base_mva * P_sched / unit_scale`` at unit
    penetration.  A mismatch above 10% usually means inconsistent turbine
    data and earns a warning, never an error.
    """
    from . import dynamics  # local import to avoid a cycle

    op = wp.operating_point
    try:
        rotor_speed = op.generator_speed / wp.turbine.gear_ratio
        torque = dynamics.aero_torque(op.wind_speed, rotor_speed, wp.turbine)
    except (ValueError, ZeroDivisionError):
        warn("torque-unavailable", "aerodynamic torque not evaluable", sub)
        return
    mech_watts = torque * rotor_speed
    sched_watts = (op.scheduled_active_power * net.base_mva * 1e6
                   / wp.unit_scale)
    if sched_watts <= 0:
        warn("torque-mismatch", "scheduled wind power is not positive", sub)
        return
    rel = abs(mech_watts - sched_watts) / sched_watts
    if rel > 0.10:
        warn("torque-mismatch",
             f"aerodynamic shaft power {mech_watts / 1e6:.3f} MW vs scheduled "
             f"{sched_watts / 1e6:.3f} MW per turbine ({rel:.1%} apart)", sub)


def _connected(net: Network) -> bool:
    if not net.buses:
        return True
    adj: dict[int, set[int]] = {b.id: set() for b in net.buses}
    for ln in net.lines:
        if ln.from_bus in adj and ln.to_bus in adj:
            adj[ln.from_bus].add(ln.to_bus)
            adj[ln.to_bus].add(ln.from_bus)
    seen = {net.buses[0].id}
    stack = [net.buses[0].id]
    while stack:
        cur = stack.pop()
        for nxt in adj[cur]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return len(seen) == len(net.buses)
