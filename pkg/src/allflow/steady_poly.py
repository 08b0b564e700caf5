"""Steady-state equilibrium conditions as a square polynomial system.

Bus voltages are kept in rectangular coordinates, so every balance
equation is a polynomial of total degree at most two in real unknowns:

* each PV bus contributes its active-power balance, its reactive-power
  balance (with the generator reactive output as a free variable) and the
  voltage-magnitude constraint ``V_re^2 + V_im^2 = |V|^2``;
* each load bus contributes the two balances with zero injection;
* the wind bus contributes its two balances, its magnitude constraint
  against the controllable setpoint, and the seven DFIG steady-state
  relations coupling stator/rotor currents, rotor voltages, torque and
  the scheduled injection.

The wind penetration factor ``gamma`` and the squared wind-bus voltage
setpoint ``vw_mag_sq`` enter as parameter slots, so one construction
serves a whole sweep.  Slack-bus injections are deliberately excluded:
they are linear in the solved voltages and are recovered afterwards by
:func:`slack_injection`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .netmodel import Network, validate
from .polysys import (
    PolyDict,
    PolynomialSystem,
    poly_add,
    poly_imag,
    poly_mul,
    poly_real,
    poly_scale,
)

GAMMA = "gamma"
VW_MAG_SQ = "vw_mag_sq"

# Wind-bus internal unknowns, in registry order after the bus voltage pair.
WIND_VAR_NAMES = ("Q_wind", "i_qs", "i_ds", "i_qr", "i_dr", "v_qr", "v_dr", "T_g")


class InvalidNetworkError(ValueError):
    """The network fails validation and cannot be baked into equations."""


@dataclass(frozen=True)
class VariableMap:
    """Bijection between registry indices and physical unknowns.

    The slack-bus voltage never appears: it is pinned to 1+0j.  Voltage
    pairs exist for every other bus; PV buses add their reactive output;
    the wind bus adds the DFIG block in :data:`WIND_VAR_NAMES` order.
    """

    names: tuple[str, ...]
    voltage: dict[int, tuple[int, int]]
    pv_reactive: dict[int, int]
    wind_bus: int | None
    wind: dict[str, int]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def describe(self, i: int) -> str:
        return self.names[i]

    @property
    def size(self) -> int:
        return len(self.names)

    def voltage_phasors(self, solution: np.ndarray) -> dict[int, complex]:
        sol = np.asarray(solution)
        return {
            bus: complex(sol[ire]) + 1j * complex(sol[iim])
            for bus, (ire, iim) in self.voltage.items()
        }


def build_equilibrium_system(
    net: Network, gamma: float, vw_mag: float
) -> tuple[PolynomialSystem, VariableMap]:
    """Construct the equilibrium system bound at ``(gamma, vw_mag)``.

    The returned system carries the two parameter slots unbound-able via
    ``system.unbind()`` for sweep use.  Networks without a wind plant
    produce a parameter-free system and ignore both arguments beyond the
    positivity checks.
    """
    problems = [d for d in validate(net) if d.severity == "error"]
    if problems:
        raise InvalidNetworkError("; ".join(str(d) for d in problems))
    if gamma <= 0:
        raise ValueError("wind penetration factor must be positive")
    if vw_mag <= 0:
        raise ValueError("wind-bus voltage setpoint must be positive")

    pv_buses = net.buses_of_kind("pv")
    load_buses = net.buses_of_kind("load")
    wind = net.wind_bus

    names: list[str] = []
    voltage: dict[int, tuple[int, int]] = {}
    pv_reactive: dict[int, int] = {}
    wind_idx: dict[str, int] = {}
    for b in pv_buses:
        voltage[b.id] = (len(names), len(names) + 1)
        names += [f"V_re_b{b.id}", f"V_im_b{b.id}"]
        pv_reactive[b.id] = len(names)
        names.append(f"Q_b{b.id}")
    if wind is not None:
        voltage[wind.id] = (len(names), len(names) + 1)
        names += [f"V_re_b{wind.id}", f"V_im_b{wind.id}"]
        for w in WIND_VAR_NAMES:
            wind_idx[w] = len(names)
            names.append(w)
    for b in load_buses:
        voltage[b.id] = (len(names), len(names) + 1)
        names += [f"V_re_b{b.id}", f"V_im_b{b.id}"]

    params = (GAMMA, VW_MAG_SQ) if wind is not None else ()
    ctx = _Builder(tuple(names), params)
    vmap = VariableMap(
        names=tuple(names),
        voltage=voltage,
        pv_reactive=pv_reactive,
        wind_bus=wind.id if wind is not None else None,
        wind=wind_idx,
    )

    equations: list[PolyDict] = []
    for b in pv_buses:
        gen = net.generator_at(b.id)
        flow = _bus_flow(ctx, net, vmap, b.id)
        shunt_p = ctx.scale(_mag_sq(ctx, vmap, b.id), b.shunt_conductance)
        shunt_q = ctx.scale(_mag_sq(ctx, vmap, b.id), b.shunt_susceptance)
        p_bal = ctx.sub(
            ctx.sub(ctx.const(gen.scheduled_active_power), poly_real(flow, ctx.width)),
            shunt_p,
        )
        q_bal = ctx.sub(
            ctx.sub(ctx.var(pv_reactive[b.id]), poly_imag(flow, ctx.width)), shunt_q
        )
        mag = ctx.sub(
            _mag_sq(ctx, vmap, b.id), ctx.const(b.voltage_setpoint ** 2)
        )
        equations += [p_bal, q_bal, mag]

    if wind is not None:
        equations += _wind_equations(ctx, net, vmap, wind)

    for b in load_buses:
        flow = _bus_flow(ctx, net, vmap, b.id)
        shunt_p = ctx.scale(_mag_sq(ctx, vmap, b.id), b.shunt_conductance)
        shunt_q = ctx.scale(_mag_sq(ctx, vmap, b.id), b.shunt_susceptance)
        equations.append(
            ctx.sub(ctx.scale(poly_real(flow, ctx.width), -1.0), shunt_p)
        )
        equations.append(
            ctx.sub(ctx.scale(poly_imag(flow, ctx.width), -1.0), shunt_q)
        )

    system = PolynomialSystem(
        variables=tuple(names), parameters=params, equations=tuple(equations)
    )
    system.validate_structure()
    if wind is not None:
        system = system.bind(gamma=gamma, vw_mag_sq=vw_mag ** 2)
    return system, vmap


def residual(system: PolynomialSystem, point) -> np.ndarray:
    """Evaluate every equation at ``point``; parameters must be bound."""
    return system.residual(point)


def system_jacobian(system: PolynomialSystem, point) -> np.ndarray:
    """Exact symbolic partial derivatives evaluated at ``point``."""
    return system.jacobian(point)


def total_degree(system: PolynomialSystem) -> int:
    """Product of the equations' total degrees (the Bezout bound)."""
    return system.total_degree()


def slack_injection(
    net: Network, solution, vmap: VariableMap, imag_tol: float = 1e-7
) -> tuple[float, float]:
    """Active/reactive power the slack bus injects at a real equilibrium.

    Linear in the solved voltages, so it is evaluated after the solve
    rather than carried as polynomial unknowns.
    """
    sol = np.asarray(solution, dtype=np.complex128)
    if np.max(np.abs(sol.imag)) > imag_tol:
        raise ValueError("slack injection is defined for real solutions only")
    slack = net.slack_bus
    vs = complex(slack.voltage_setpoint or 1.0)
    current = 0.0 + 0.0j
    for ln in net.lines_at(slack.id):
        other = ln.to_bus if ln.from_bus == slack.id else ln.from_bus
        ire, iim = vmap.voltage[other]
        vk = sol[ire].real + 1j * sol[iim].real
        current += (vs - vk) / ln.impedance
    s = vs * np.conj(current)
    p = s.real + abs(vs) ** 2 * slack.shunt_conductance
    q = s.imag + abs(vs) ** 2 * slack.shunt_susceptance
    return float(p), float(q)


# -- construction helpers -----------------------------------------------------


class _Builder:
    """Thin wrapper around the PolyDict helpers for a fixed variable set."""

    def __init__(self, names: tuple[str, ...], params: tuple[str, ...]):
        self.n = len(names)
        self.width = 1 + len(params)
        self.params = params

    def zero(self) -> PolyDict:
        return {}

    def const(self, value: complex) -> PolyDict:
        vec = np.zeros(self.width, dtype=np.complex128)
        vec[0] = value
        return {tuple([0] * self.n): vec} if value != 0 else {}

    def param_term(self, param: str, slope: complex) -> PolyDict:
        vec = np.zeros(self.width, dtype=np.complex128)
        vec[1 + self.params.index(param)] = slope
        return {tuple([0] * self.n): vec}

    def var(self, idx: int, coeff: complex = 1.0) -> PolyDict:
        exps = [0] * self.n
        exps[idx] = 1
        vec = np.zeros(self.width, dtype=np.complex128)
        vec[0] = coeff
        return {tuple(exps): vec}

    def add(self, *polys: PolyDict) -> PolyDict:
        out: PolyDict = {}
        for p in polys:
            out = poly_add(out, p)
        return out

    def sub(self, a: PolyDict, b: PolyDict) -> PolyDict:
        return poly_add(a, poly_scale(b, -1.0, self.width))

    def mul(self, a: PolyDict, b: PolyDict) -> PolyDict:
        return poly_mul(a, b, self.width)

    def scale(self, a: PolyDict, s) -> PolyDict:
        return poly_scale(a, s, self.width)

    def gamma_times(self, a: PolyDict) -> PolyDict:
        """Multiply a parameter-free polynomial by the penetration factor."""
        vec = np.zeros(self.width, dtype=np.complex128)
        vec[1 + self.params.index(GAMMA)] = 1.0
        return poly_scale(a, vec, self.width)


def _phasor(ctx: _Builder, net: Network, vmap: VariableMap, bus_id: int,
            conj: bool = False) -> PolyDict:
    bus = net.bus(bus_id)
    if bus.kind == "slack":
        return ctx.const(complex(bus.voltage_setpoint or 1.0))
    ire, iim = vmap.voltage[bus_id]
    sign = -1.0 if conj else 1.0
    return ctx.add(ctx.var(ire), ctx.var(iim, sign * 1j))


def _mag_sq(ctx: _Builder, vmap: VariableMap, bus_id: int) -> PolyDict:
    ire, iim = vmap.voltage[bus_id]
    return ctx.add(ctx.mul(ctx.var(ire), ctx.var(ire)),
                   ctx.mul(ctx.var(iim), ctx.var(iim)))


def _bus_flow(ctx: _Builder, net: Network, vmap: VariableMap,
              bus_id: int) -> PolyDict:
    """Complex branch power leaving ``bus_id``: V_j * conj(sum_k y_jk (V_j - V_k))."""
    vj = _phasor(ctx, net, vmap, bus_id)
    conj_current = ctx.zero()
    for ln in net.lines_at(bus_id):
        other = ln.to_bus if ln.from_bus == bus_id else ln.from_bus
        y = 1.0 / ln.impedance
        diff = ctx.sub(
            _phasor(ctx, net, vmap, bus_id, conj=True),
            _phasor(ctx, net, vmap, other, conj=True),
        )
        conj_current = ctx.add(conj_current, ctx.scale(diff, np.conj(y)))
    return ctx.mul(vj, conj_current)


def _wind_equations(ctx: _Builder, net: Network, vmap: VariableMap,
                    wind_bus) -> list[PolyDict]:
    """Wind-bus balances plus the DFIG steady-state block.

    Speeds enter normalized by the synchronous mechanical speed, so the
    per-unit inductances act as reactances: the synchronous factor is 1
    and the rotor factor is the slip-shifted ratio w_g / w_sync.
    """
    plant = net.wind_plant
    dq = plant.dfig
    op = plant.operating_point
    w_e = 1.0
    w_ge = op.generator_speed / dq.sync_speed
    dw = w_e - w_ge
    l_s, l_r, l_m = dq.l_s, dq.l_r, dq.l_m
    p_one = op.scheduled_active_power

    ire, iim = vmap.voltage[wind_bus.id]
    w = vmap.wind
    v_qs = ctx.var(ire)
    v_ds = ctx.var(iim)
    q_w = ctx.var(w["Q_wind"])
    i_qs = ctx.var(w["i_qs"])
    i_ds = ctx.var(w["i_ds"])
    i_qr = ctx.var(w["i_qr"])
    i_dr = ctx.var(w["i_dr"])
    v_qr = ctx.var(w["v_qr"])
    v_dr = ctx.var(w["v_dr"])
    t_g = ctx.var(w["T_g"])

    flow = _bus_flow(ctx, net, vmap, wind_bus.id)
    shunt_p = ctx.scale(_mag_sq(ctx, vmap, wind_bus.id), wind_bus.shunt_conductance)
    shunt_q = ctx.scale(_mag_sq(ctx, vmap, wind_bus.id), wind_bus.shunt_susceptance)

    # Scheduled injection gamma * P1 balances the branch flows.
    p_bal = ctx.sub(
        ctx.sub(ctx.param_term(GAMMA, p_one), poly_real(flow, ctx.width)), shunt_p
    )
    q_bal = ctx.sub(ctx.sub(q_w, poly_imag(flow, ctx.width)), shunt_q)
    mag = ctx.sub(_mag_sq(ctx, vmap, wind_bus.id),
                  ctx.param_term(VW_MAG_SQ, 1.0))

    torque = ctx.add(
        t_g,
        ctx.scale(
            ctx.sub(ctx.mul(i_qs, i_dr), ctx.mul(i_ds, i_qr)),
            0.75 * dq.poles * l_m,
        ),
    )
    stator_q = ctx.sub(
        v_qs,
        ctx.add(ctx.scale(i_qs, dq.r_s), ctx.scale(i_ds, w_e * l_s),
                ctx.scale(i_dr, w_e * l_m)),
    )
    stator_d = ctx.sub(
        v_ds,
        ctx.add(ctx.scale(i_qs, -w_e * l_s), ctx.scale(i_ds, dq.r_s),
                ctx.scale(i_qr, -w_e * l_m)),
    )
    rotor_q = ctx.sub(
        v_qr,
        ctx.add(ctx.scale(i_ds, dw * l_m), ctx.scale(i_qr, dq.r_r),
                ctx.scale(i_dr, dw * l_r)),
    )
    rotor_d = ctx.sub(
        v_dr,
        ctx.add(ctx.scale(i_qs, -dw * l_m), ctx.scale(i_dr, dq.r_r),
                ctx.scale(i_qr, -dw * l_r)),
    )
    per_turbine_p = ctx.add(
        ctx.mul(v_qs, i_qs), ctx.mul(v_ds, i_ds),
        ctx.mul(v_dr, i_dr), ctx.mul(v_qr, i_qr),
    )
    per_turbine_q = ctx.add(
        ctx.mul(v_ds, i_qs), ctx.scale(ctx.mul(v_qs, i_ds), -1.0),
        ctx.mul(v_dr, i_qr), ctx.scale(ctx.mul(v_qr, i_dr), -1.0),
    )
    active = ctx.sub(ctx.gamma_times(per_turbine_p), ctx.param_term(GAMMA, p_one))
    reactive = ctx.sub(ctx.gamma_times(per_turbine_q), q_w)

    return [p_bal, q_bal, mag, torque, stator_q, stator_d, rotor_q, rotor_d,
            active, reactive]
