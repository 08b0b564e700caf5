"""Full differential-algebraic model, feasibility filter and small-signal
stability analysis.

Dynamic states are the rotor angle/speed pair of every non-slack
synchronous machine (the slack machine is an infinite bus, which provides
the angle reference and removes the translation-symmetry zero mode) plus
the four DFIG stator/rotor currents.  Algebraic states are the
rectangular voltages of every non-slack bus.  Rotor excitation voltages
and the DFIG mechanical speed are held at their equilibrium values: the
steady-state regulators pin them, and no shaft dynamics enter the model.

Classical-machine bookkeeping: the internal EMF magnitude and angle of
each machine are re-derived per equilibrium from the solved terminal
voltage and power so that the algebraic network balances close exactly at
the equilibrium under analysis; mechanical power equals the scheduled
dispatch for the same reason.

Per-unit speeds: the d-q voltage equations use speed ratios against the
synchronous mechanical speed (synchronous factor 1, rotor factor
w_g / w_sync), making the per-unit inductances act as reactances.  With
raw rad/s speeds the printed parameter set would put rotor voltages two
orders of magnitude beyond any practical limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .netmodel import Network, Turbine, WindPlant
from .steady_poly import VariableMap

STABILITY_TOL = 1e-6


class CpPoleError(ValueError):
    """The power-coefficient auxiliary ratio hits its pole."""


class AlgebraicSingularError(RuntimeError):
    """The algebraic block of the DAE Jacobian is singular."""


# -- turbine and DFIG component formulas --------------------------------------


def cp_coefficient(tip_speed_ratio: float, pitch: float = 0.0) -> float:
    """Turbine power coefficient at a tip-speed ratio and pitch angle.

    Evaluated exactly as defined, without clamping, so out-of-envelope
    ratios can legitimately return negative values.
    """
    if tip_speed_ratio <= 0:
        raise ValueError("tip-speed ratio must be positive")
    inner = 1.0 / (tip_speed_ratio + 0.08 * pitch) - 0.035 / (pitch ** 3 + 1.0)
    if inner == 0.0:
        raise CpPoleError("tip-speed ratio sits on the coefficient pole")
    lam_i = 1.0 / inner
    return 0.22 * (116.0 / lam_i - 0.4 * pitch - 5.0) * math.exp(-12.5 / lam_i)


def aero_torque(wind_speed: float, rotor_speed: float, turbine: Turbine) -> float:
    """Aerodynamic torque in N*m developed by the turbine rotor."""
    if wind_speed <= 0 or rotor_speed <= 0:
        raise ValueError("wind and rotor speeds must be positive")
    tsr = rotor_speed * turbine.blade_length / wind_speed
    cp = cp_coefficient(tsr, turbine.pitch)
    return (turbine.air_density * turbine.swept_area * wind_speed ** 3 * cp
            / (2.0 * rotor_speed))


def shaft_coupling(
    aero_torque_nm: float, rotor_speed: float, plant: WindPlant
) -> tuple[float, float, float]:
    """Lossless shaft and gearbox transfer.

    Returns (generator torque, generator mechanical speed, electrical
    speed): torque passes through unchanged, the speed is geared up by the
    gear ratio, and the electrical speed carries the pole-pair factor.
    """
    omega_g = plant.turbine.gear_ratio * rotor_speed
    omega_ge = 0.5 * plant.dfig.poles * omega_g
    return aero_torque_nm, omega_g, omega_ge


def dfig_torque(i_qs: float, i_ds: float, i_qr: float, i_dr: float, dfig) -> float:
    """Electromagnetic torque from the d-q current products."""
    return -0.75 * dfig.poles * dfig.l_m * (i_qs * i_dr - i_ds * i_qr)


def dfig_power(
    v_qs: float, v_ds: float, v_qr: float, v_dr: float,
    i_qs: float, i_ds: float, i_qr: float, i_dr: float,
) -> tuple[float, float]:
    """Per-turbine active and reactive output of the machine terminals."""
    p = v_qs * i_qs + v_ds * i_ds + v_dr * i_dr + v_qr * i_qr
    q = v_ds * i_qs - v_qs * i_ds + v_dr * i_qr - v_qr * i_dr
    return p, q


# -- equilibrium-anchored dynamic model ---------------------------------------


@dataclass(frozen=True)
class MachineEquilibrium:
    bus: int
    inertia: float
    reactance: float
    emf: float           # internal voltage magnitude, derived per equilibrium
    angle: float         # internal angle, derived per equilibrium
    mech_power: float


@dataclass(frozen=True)
class DfigEquilibrium:
    bus: int
    mass_matrix: np.ndarray      # 4x4 inductance block multiplying di/dt
    speed_matrix: np.ndarray     # 4x4 non-derivative coefficient block
    rotor_voltage: np.ndarray    # (v_qr, v_dr) held by the regulators
    currents: np.ndarray         # equilibrium (i_qs, i_ds, i_qr, i_dr)


@dataclass(frozen=True)
class DynamicModel:
    """DAE right-hand sides anchored at one solved equilibrium."""

    net: Network
    gamma: float
    machines: tuple[MachineEquilibrium, ...]
    dfig: DfigEquilibrium | None
    alg_buses: tuple[int, ...]
    x0: np.ndarray
    y0: np.ndarray

    @property
    def n_states(self) -> int:
        return 2 * len(self.machines) + (4 if self.dfig is not None else 0)

    @property
    def n_algebraic(self) -> int:
        return 2 * len(self.alg_buses)


def build_dynamic_model(
    net: Network, vmap: VariableMap, solution, gamma: float
) -> DynamicModel:
    """Anchor the DAE at a real solution of the equilibrium system."""
    sol = np.asarray(solution, dtype=np.complex128).real
    machines = []
    for bus in net.buses_of_kind("pv"):
        gen = net.generator_at(bus.id)
        ire, iim = vmap.voltage[bus.id]
        v = complex(sol[ire], sol[iim])
        if abs(v) < 1e-9:
            raise ValueError(f"terminal voltage collapses at bus {bus.id}")
        s = complex(gen.scheduled_active_power, sol[vmap.pv_reactive[bus.id]])
        emf_phasor = v + 1j * gen.transient_reactance * np.conj(s / v)
        machines.append(
            MachineEquilibrium(
                bus=bus.id,
                inertia=gen.inertia,
                reactance=gen.transient_reactance,
                emf=abs(emf_phasor),
                angle=float(np.angle(emf_phasor)),
                mech_power=gen.scheduled_active_power,
            )
        )

    dfig_eq = None
    if net.wind_plant is not None:
        plant = net.wind_plant
        dq = plant.dfig
        w_ge = plant.operating_point.generator_speed / dq.sync_speed
        dw = 1.0 - w_ge
        l_s, l_r, l_m = dq.l_s, dq.l_r, dq.l_m
        mass = np.array(
            [[l_s, 0.0, l_m, 0.0],
             [0.0, l_s, 0.0, l_m],
             [l_m, 0.0, l_r, 0.0],
             [0.0, l_m, 0.0, l_r]]
        )
        if abs(np.linalg.det(mass)) < 1e-12:
            raise AlgebraicSingularError("DFIG inductance matrix is singular")
        speed = np.array(
            [[dq.r_s, l_s, 0.0, l_m],
             [-l_s, dq.r_s, -l_m, 0.0],
             [0.0, dw * l_m, dq.r_r, dw * l_r],
             [-dw * l_m, 0.0, -dw * l_r, dq.r_r]]
        )
        w = vmap.wind
        currents = np.array([sol[w["i_qs"]], sol[w["i_ds"]],
                             sol[w["i_qr"]], sol[w["i_dr"]]])
        rotor_v = np.array([sol[w["v_qr"]], sol[w["v_dr"]]])
        dfig_eq = DfigEquilibrium(
            bus=plant.bus, mass_matrix=mass, speed_matrix=speed,
            rotor_voltage=rotor_v, currents=currents,
        )

    alg_buses = tuple(sorted(b.id for b in net.buses if b.kind != "slack"))
    x0 = np.zeros(2 * len(machines) + (4 if dfig_eq is not None else 0))
    for i, mac in enumerate(machines):
        x0[2 * i] = mac.angle
        x0[2 * i + 1] = 0.0
    if dfig_eq is not None:
        x0[-4:] = dfig_eq.currents
    y0 = np.zeros(2 * len(alg_buses))
    for t, bus_id in enumerate(alg_buses):
        ire, iim = vmap.voltage[bus_id]
        y0[2 * t] = sol[ire]
        y0[2 * t + 1] = sol[iim]
    return DynamicModel(
        net=net, gamma=gamma, machines=tuple(machines), dfig=dfig_eq,
        alg_buses=alg_buses, x0=x0, y0=y0,
    )


def _machine_injection(mac: MachineEquilibrium, delta: float,
                       v: complex) -> tuple[float, float]:
    """Bus-side injection of a classical machine behind its reactance."""
    p = (mac.emf / mac.reactance) * (
        v.real * math.sin(delta) - v.imag * math.cos(delta)
    )
    q = (mac.emf / mac.reactance) * (
        v.real * math.cos(delta) + v.imag * math.sin(delta)
    ) - (v.real ** 2 + v.imag ** 2) / mac.reactance
    return p, q


def swing_and_stator_derivatives(
    model: DynamicModel, x: np.ndarray, y: np.ndarray
) -> np.ndarray:
    """Time derivatives of the dynamic states at (x, y)."""
    dx = np.zeros_like(x)
    voltages = _bus_voltages(model, y)
    for i, mac in enumerate(model.machines):
        delta = x[2 * i]
        omega = x[2 * i + 1]
        p, _ = _machine_injection(mac, delta, voltages[mac.bus])
        dx[2 * i] = omega
        dx[2 * i + 1] = (mac.mech_power - p) / mac.inertia
    if model.dfig is not None:
        vw = voltages[model.dfig.bus]
        drive = np.array([vw.real, vw.imag,
                          model.dfig.rotor_voltage[0],
                          model.dfig.rotor_voltage[1]])
        currents = x[-4:]
        rhs = drive - model.dfig.speed_matrix @ currents
        dx[-4:] = np.linalg.solve(model.dfig.mass_matrix, rhs)
    return dx


def _bus_voltages(model: DynamicModel, y: np.ndarray) -> dict[int, complex]:
    slack = model.net.slack_bus
    voltages = {slack.id: complex(slack.voltage_setpoint or 1.0)}
    for t, bus_id in enumerate(model.alg_buses):
        voltages[bus_id] = complex(y[2 * t], y[2 * t + 1])
    return voltages


def algebraic_residual(
    model: DynamicModel, x: np.ndarray, y: np.ndarray
) -> np.ndarray:
    """Network power balances at every non-slack bus, given states (x, y)."""
    voltages = _bus_voltages(model, y)
    machine_at = {mac.bus: (i, mac) for i, mac in enumerate(model.machines)}
    g = np.zeros(2 * len(model.alg_buses))
    for t, bus_id in enumerate(model.alg_buses):
        bus = model.net.bus(bus_id)
        vj = voltages[bus_id]
        current = 0.0 + 0.0j
        for ln in model.net.lines_at(bus_id):
            other = ln.to_bus if ln.from_bus == bus_id else ln.from_bus
            current += (vj - voltages[other]) / ln.impedance
        flow = vj * np.conj(current)
        if bus_id in machine_at:
            i, mac = machine_at[bus_id]
            p_inj, q_inj = _machine_injection(mac, x[2 * i], vj)
        elif model.dfig is not None and bus_id == model.dfig.bus:
            iqs, ids_, iqr, idr = x[-4:]
            p1, q1 = dfig_power(
                vj.real, vj.imag,
                model.dfig.rotor_voltage[0], model.dfig.rotor_voltage[1],
                iqs, ids_, iqr, idr,
            )
            p_inj, q_inj = model.gamma * p1, model.gamma * q1
        else:
            p_inj = q_inj = 0.0
        mag_sq = vj.real ** 2 + vj.imag ** 2
        g[2 * t] = p_inj - flow.real - mag_sq * bus.shunt_conductance
        g[2 * t + 1] = q_inj - flow.imag - mag_sq * bus.shunt_susceptance
    return g


def linearize(model: DynamicModel, rel_step: float = 1e-6) -> np.ndarray:
    """Reduced state matrix A - B D^{-1} C at the anchored equilibrium.

    The four Jacobian blocks come from central finite differences of the
    swing/stator derivatives and the algebraic residuals; the index-1
    reduction eliminates the algebraic voltage variables through the Schur
    complement.
    """
    x0, y0 = model.x0, model.y0
    nd, na = len(x0), len(y0)

    def fd(func, base_x, base_y, wrt_x: bool):
        cols = nd if wrt_x else na
        probe = base_x if wrt_x else base_y
        out = np.zeros((len(func(base_x, base_y)), cols))
        for j in range(cols):
            h = rel_step * max(1.0, abs(probe[j]))
            hi = probe.copy()
            lo = probe.copy()
            hi[j] += h
            lo[j] -= h
            if wrt_x:
                fp = func(hi, base_y)
                fm = func(lo, base_y)
            else:
                fp = func(base_x, hi)
                fm = func(base_x, lo)
            out[:, j] = (fp - fm) / (2.0 * h)
        return out

    f = lambda x, y: swing_and_stator_derivatives(model, x, y)
    g = lambda x, y: algebraic_residual(model, x, y)
    A = fd(f, x0, y0, wrt_x=True)
    B = fd(f, x0, y0, wrt_x=False)
    C = fd(g, x0, y0, wrt_x=True)
    D = fd(g, x0, y0, wrt_x=False)
    try:
        correction = np.linalg.solve(D, C)
    except np.linalg.LinAlgError as exc:
        raise AlgebraicSingularError(
            "algebraic block of the DAE Jacobian is singular"
        ) from exc
    if not np.all(np.isfinite(correction)):
        raise AlgebraicSingularError("algebraic reduction produced non-finite values")
    return A - B @ correction


def eigenvalues(matrix: np.ndarray) -> np.ndarray:
    """Eigenvalues of a dense real matrix, descending real part order."""
    if not np.all(np.isfinite(matrix)):
        raise ValueError("matrix entries must be finite")
    vals = np.linalg.eigvals(matrix)
    order = sorted(range(len(vals)),
                   key=lambda i: (-vals[i].real, -abs(vals[i].imag)))
    return vals[order]


# -- feasibility and stability classification ---------------------------------


@dataclass(frozen=True)
class FeasibilityLimits:
    rotor_voltage_max: float = 0.35
    q_wind_max_abs: float = 1.0
    voltage_band: tuple[float, float] = (0.8, 1.2)

    def __post_init__(self):
        if self.rotor_voltage_max <= 0 or self.q_wind_max_abs <= 0:
            raise ValueError("limits must be positive")
        lo, hi = self.voltage_band
        if not (0 < lo < hi):
            raise ValueError("voltage band must be ordered and positive")


@dataclass(frozen=True)
class FeasibilityResult:
    feasible: tuple[tuple[int, object], ...]           # (solution index, Solution)
    rejected: tuple[tuple[int, object, tuple[str, ...]], ...]


def feasibility_filter(solset, vmap: VariableMap,
                       limits: FeasibilityLimits) -> FeasibilityResult:
    """Keep real regular solutions within rotor/reactive/voltage limits.

    Every discarded solution records the limits that rejected it.
    """
    feasible = []
    rejected = []
    for idx, sol in enumerate(solset.solutions):
        reasons = []
        if not sol.is_real:
            reasons.append("complex")
        elif sol.is_singular:
            reasons.append("singular")
        else:
            vec = sol.vector.real
            if vmap.wind:
                v_qr = vec[vmap.wind["v_qr"]]
                v_dr = vec[vmap.wind["v_dr"]]
                if math.hypot(v_qr, v_dr) > limits.rotor_voltage_max:
                    reasons.append("rotor-voltage")
                if abs(vec[vmap.wind["Q_wind"]]) > limits.q_wind_max_abs:
                    reasons.append("wind-reactive")
            lo, hi = limits.voltage_band
            for bus_id, (ire, iim) in sorted(vmap.voltage.items()):
                mag = math.hypot(vec[ire], vec[iim])
                if not (lo <= mag <= hi):
                    reasons.append(f"voltage-band:bus{bus_id}")
        if reasons:
            rejected.append((idx, sol, tuple(reasons)))
        else:
            feasible.append((idx, sol))
    return FeasibilityResult(tuple(feasible), tuple(rejected))


@dataclass(frozen=True)
class StabilityAssessment:
    verdict: str                     # "stable" | "unstable" | "marginal"
    stable: bool
    dominant_modes: tuple[complex, ...]
    damping_ratios: tuple[float, ...]


def classify_stability(
    eigs, tol: float = STABILITY_TOL
) -> StabilityAssessment:
    """Classify an eigenvalue list and extract the two dominant mode pairs.

    Stable requires every real part below -tol; real parts within +-tol
    are conservative "marginal" (not stable).  Dominant modes are the
    complex-conjugate pairs with the largest real parts, reported through
    their upper-half-plane representative and damping ratio -Re/|lam|.
    """
    eigs = np.asarray(list(eigs), dtype=np.complex128)
    if eigs.size == 0:
        raise ValueError("empty eigenvalue list")
    max_re = float(np.max(eigs.real))
    if max_re < -tol:
        verdict = "stable"
    elif max_re <= tol:
        verdict = "marginal"
    else:
        verdict = "unstable"
    ordered = sorted(eigs, key=lambda z: (-z.real, -abs(z.imag)))
    modes = [z for z in ordered if z.imag > 0.0]
    modes += [z for z in ordered if z.imag == 0.0]
    dominant = tuple(modes[:2])
    damping = tuple(
        (-z.real / abs(z)) if abs(z) > 0 else 0.0 for z in dominant
    )
    return StabilityAssessment(
        verdict=verdict, stable=(verdict == "stable"),
        dominant_modes=dominant, damping_ratios=damping,
    )


@dataclass(frozen=True)
class EquilibriumRecord:
    """One feasible equilibrium with its small-signal assessment."""

    parameter_point: object
    solution_index: int
    solution: np.ndarray
    feasible: bool
    violated_limits: tuple[str, ...]
    eigenvalues: np.ndarray | None
    verdict: str | None
    stable: bool | None
    dominant_modes: tuple[complex, ...]
    damping_ratios: tuple[float, ...]


def analyze_point(
    net: Network,
    vmap: VariableMap,
    solset,
    gamma: float,
    parameter_point=None,
    limits: FeasibilityLimits | None = None,
    tol: float = STABILITY_TOL,
) -> tuple[list[EquilibriumRecord], FeasibilityResult]:
    """Feasibility-filter a classified solution set and assess stability."""
    limits = limits or FeasibilityLimits()
    filt = feasibility_filter(solset, vmap, limits)
    records = []
    for idx, sol in filt.feasible:
        try:
            model = build_dynamic_model(net, vmap, sol.vector, gamma)
            if model.n_states == 0:
                # nothing swings: the equilibrium is vacuously stable
                records.append(
                    EquilibriumRecord(
                        parameter_point=parameter_point,
                        solution_index=idx,
                        solution=sol.vector.real.copy(),
                        feasible=True,
                        violated_limits=(),
                        eigenvalues=np.zeros(0, dtype=complex),
                        verdict="stable",
                        stable=True,
                        dominant_modes=(),
                        damping_ratios=(),
                    )
                )
                continue
            eigs = eigenvalues(linearize(model))
            assessment = classify_stability(eigs, tol)
            records.append(
                EquilibriumRecord(
                    parameter_point=parameter_point,
                    solution_index=idx,
                    solution=sol.vector.real.copy(),
                    feasible=True,
                    violated_limits=(),
                    eigenvalues=eigs,
                    verdict=assessment.verdict,
                    stable=assessment.stable,
                    dominant_modes=assessment.dominant_modes,
                    damping_ratios=assessment.damping_ratios,
                )
            )
        except (AlgebraicSingularError, np.linalg.LinAlgError, ValueError):
            records.append(
                EquilibriumRecord(
                    parameter_point=parameter_point,
                    solution_index=idx,
                    solution=sol.vector.real.copy(),
                    feasible=True,
                    violated_limits=(),
                    eigenvalues=None,
                    verdict="unclassifiable",
                    stable=None,
                    dominant_modes=(),
                    damping_ratios=(),
                )
            )
    return records, filt
