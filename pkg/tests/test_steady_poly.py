import numpy as np
import pytest

from allflow import homotopy
from allflow.polysys import SystemBuilder, UnboundParameterError
from allflow.steady_poly import (
    build_equilibrium_system,
    residual,
    slack_injection,
    system_jacobian,
    total_degree,
)

from conftest import assert_same_solution_sets, twobus_closed_form


def test_two_bus_system_shape(twobus_system):
    system, vmap = twobus_system
    assert system.n_variables == 2
    assert system.n_equations == 2
    assert system.degrees() == (2, 2)
    assert vmap.names == ("V_re_b2", "V_im_b2")
    assert total_degree(system) == 4


def test_seven_bus_system_shape(brazil7_system):
    system, vmap = brazil7_system
    assert system.n_equations == 24
    assert system.n_variables == 24
    assert max(system.degrees()) == 2
    # 4 pv buses * 3 + load * 2 + wind (3 balances/magnitude + 7 machine)
    assert vmap.size == 4 * 3 + 2 + 10
    assert set(vmap.wind) == {
        "Q_wind", "i_qs", "i_ds", "i_qr", "i_dr", "v_qr", "v_dr", "T_g"
    }
    # the four stator/rotor voltage relations are linear, the rest quadratic
    assert sorted(system.degrees()).count(1) == 4
    assert total_degree(system) == 2 ** 20


def test_gamma_must_be_positive(brazil7_net):
    with pytest.raises(ValueError):
        build_equilibrium_system(brazil7_net, gamma=0.0, vw_mag=0.98)
    with pytest.raises(ValueError):
        build_equilibrium_system(brazil7_net, gamma=1.0, vw_mag=0.0)


def test_residual_simple_polynomial():
    sb = SystemBuilder()
    sb.add_variable("x")
    sb.add_equation([(1.0, {"x": 2}), (-1.0, {})])
    syst = sb.build()
    assert residual(syst, [1.0])[0] == pytest.approx(0.0)


def test_residual_at_closed_form_solution(twobus_system):
    system, _ = twobus_system
    (_, _), (u, w) = twobus_closed_form(0.0, -10.0, 0.5, 0.0)
    assert np.max(np.abs(residual(system, [u, w]))) < 1e-12


def test_residual_at_zero_gives_constant_terms(brazil7_system):
    system, _ = brazil7_system
    r = residual(system, np.zeros(24))
    consts = []
    for eq in system.equations:
        vec = eq.get(tuple([0] * 24))
        lam = np.concatenate(([1.0], np.asarray(system.bound_values)))
        consts.append(vec @ lam if vec is not None else 0.0)
    assert np.allclose(r, consts)


def test_residual_requires_bound_parameters(brazil7_system):
    system, _ = brazil7_system
    with pytest.raises(UnboundParameterError):
        residual(system.unbind(), np.zeros(24))


def test_jacobian_simple_derivative():
    sb = SystemBuilder()
    sb.add_variable("x")
    sb.add_equation([(1.0, {"x": 2})])
    assert system_jacobian(sb.build(), [3.0])[0, 0] == pytest.approx(6.0)


def test_jacobian_matches_finite_differences(twobus_system):
    system, _ = twobus_system
    rng = np.random.default_rng(11)
    for _ in range(5):
        x = rng.normal(size=2) + 1j * rng.normal(size=2)
        J = system_jacobian(system, x)
        h = 1e-6
        for k in range(2):
            e = np.zeros(2, dtype=complex)
            e[k] = h
            fd = (residual(system, x + e) - residual(system, x - e)) / (2 * h)
            scale = np.maximum(np.abs(J[:, k]), 1.0)
            assert np.max(np.abs(fd - J[:, k]) / scale) < 1e-6


def test_jacobian_rank_deficient_at_double_root():
    sb = SystemBuilder()
    sb.add_variable("x")
    sb.add_equation([(1.0, {"x": 2})])  # x^2 = 0, double root
    J = system_jacobian(sb.build(), [0.0])
    assert np.linalg.matrix_rank(J) == 0


def test_total_degree_examples():
    sb = SystemBuilder()
    for nm in ("x", "y", "z"):
        sb.add_variable(nm)
    for nm in ("x", "y", "z"):
        sb.add_equation([(1.0, {nm: 2}), (-1.0, {})])
    assert total_degree(sb.build()) == 8


def test_slack_injection_flat_no_shunt(twobus_net, twobus_system):
    _, vmap = twobus_system
    # all voltages 1+0j, no slack shunt: no flows, zero injection
    p, q = slack_injection(twobus_net, np.array([1.0, 0.0]), vmap)
    assert p == pytest.approx(0.0)
    assert q == pytest.approx(0.0, abs=1e-12)


def test_slack_injection_closed_form(twobus_net, twobus_system):
    system, vmap = twobus_system
    (_, _), (u, w) = twobus_closed_form(0.0, -10.0, 0.5, 0.0)
    p, q = slack_injection(twobus_net, np.array([u, w]), vmap)
    # load draws |V|^2 G through a lossless line; reactive equals the
    # line's own consumption |I|^2 x (hand computation)
    s = u * u + w * w
    i_mag_sq = (abs(complex(1, 0) - complex(u, w)) * 10.0) ** 2
    assert p == pytest.approx(s * 0.5, rel=1e-12)
    assert q == pytest.approx(i_mag_sq * 0.1, rel=1e-9)


def test_slack_injection_shunt_only():
    import json

    from allflow import netmodel

    doc = {
        "base_mva": 100.0,
        "buses": [
            {"id": 1, "kind": "slack", "voltage_setpoint": 1.0,
             "angle_setpoint": 0.0, "shunt_conductance": 0.1},
            {"id": 2, "kind": "load"},
        ],
        "lines": [{"from": 1, "to": 2, "impedance": [0.0, 0.1]}],
        "generators": [
            {"bus": 1, "inertia": 5.0, "internal_voltage": 1.0,
             "transient_reactance": 0.3, "mechanical_power": 0.0,
             "scheduled_active_power": 0.0},
        ],
        "wind_plant": None,
    }
    net = netmodel.load_case(json.dumps(doc))
    system, vmap = build_equilibrium_system(net, 1.0, 1.0)
    p, _ = slack_injection(net, np.array([1.0, 0.0]), vmap)
    assert p == pytest.approx(0.1)


def test_slack_injection_rejects_complex_solution(twobus_net, twobus_system):
    _, vmap = twobus_system
    with pytest.raises(ValueError):
        slack_injection(twobus_net, np.array([1.0 + 0.1j, 0.0]), vmap)


def test_rectangular_matches_polar_formulation(twobus_system, cfg):
    """The rectangular unknowns solve the same physical problem as the
    magnitude/sine/cosine unknowns with the trig identity appended; their
    solution sets agree after projecting onto voltage components."""
    system, _ = twobus_system
    rect = homotopy.classify_solutions(homotopy.solve_all(system, cfg), cfg)
    rect_pts = [s.vector.real for s in rect.real_solutions]

    g, b, G, B = 0.0, -10.0, 0.5, 0.0
    sb = SystemBuilder()
    for nm in ("m", "s", "c"):
        sb.add_variable(nm)
    sb.add_equation([
        (-(g + G), {"m": 2}), (g, {"m": 1, "c": 1}), (b, {"m": 1, "s": 1}),
    ])
    sb.add_equation([
        (b - B, {"m": 2}), (g, {"m": 1, "s": 1}), (-b, {"m": 1, "c": 1}),
    ])
    sb.add_equation([(1.0, {"s": 2}), (1.0, {"c": 2}), (-1.0, {})])
    polar = homotopy.solve_all(sb.build(), cfg)

    projected = []
    for sol in polar.solutions:
        m, s, c = sol.vector
        uv = np.array([m * c, m * s])
        if np.max(np.abs(uv.imag)) < 1e-6:
            projected.append(uv.real)
    uniq: list[np.ndarray] = []
    for p in projected:
        if not any(np.max(np.abs(p - q)) < 1e-6 for q in uniq):
            uniq.append(p)
    assert_same_solution_sets(rect_pts, uniq, tol=1e-8)


def test_wind_terms_vanish_reduces_to_plain_load_flow(brazil7_net, cfg):
    """Check conventional-load-flow agreement on the high-voltage root: a
    Newton solve of the standard balance equations lands on one of the
    enumerated solutions."""
    system, vmap = build_equilibrium_system(brazil7_net, gamma=1.0, vw_mag=0.98)
    from scipy.optimize import fsolve

    x0 = np.zeros(24)
    for bus, (ire, iim) in vmap.voltage.items():
        x0[ire] = 1.0
    x0[vmap.wind["i_qs"]] = 0.7
    x0[vmap.wind["i_dr"]] = 0.2
    x0[vmap.wind["i_qr"]] = -0.7

    def f(z):
        return system.residual(z).real

    sol, info, ier, _ = fsolve(f, x0, full_output=True)
    assert ier == 1
    assert np.max(np.abs(system.residual(sol))) < 1e-8
