import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from allflow import homotopy
from allflow.homotopy import (
    ConstantEquationError,
    PathBudgetExceeded,
    TrackerConfig,
    classify_solutions,
    make_start_system,
    solve_all,
    total_degree_homotopy,
    track_path,
)
from allflow.polysys import SystemBuilder

from conftest import (
    assert_same_solution_sets,
    twobus_closed_form,
    univariate_system,
)


def bivariate(*equations):
    sb = SystemBuilder()
    sb.add_variable("x")
    sb.add_variable("y")
    for eq in equations:
        sb.add_equation(eq)
    return sb.build()


def test_tracker_config_validation():
    with pytest.raises(ValueError):
        TrackerConfig(min_step=0.5, initial_step=0.01)
    with pytest.raises(ValueError):
        TrackerConfig(max_step=1.5)
    with pytest.raises(ValueError):
        TrackerConfig(newton_tol=-1.0)


# -- start systems -------------------------------------------------------------


def test_start_points_square_roots_of_unity(cfg):
    syst = univariate_system([-2.0, 0.0, 1.0])  # x^2 - 2
    start = make_start_system(syst, cfg)
    assert start.count == 2
    pts = start.points_range(0, 2).ravel()
    assert pts[0] == pytest.approx(1.0)
    assert pts[1] == pytest.approx(-1.0)
    assert abs(abs(start.gamma_h) - 1.0) < 1e-14


def test_start_points_three_quadratics(cfg):
    sb = SystemBuilder()
    for nm in ("x", "y", "z"):
        sb.add_variable(nm)
    for nm in ("x", "y", "z"):
        sb.add_equation([(1.0, {nm: 2}), (-1.0, {})])
    start = make_start_system(sb.build(), cfg)
    assert start.count == 8
    pts = start.points_range(0, 8)
    expect = {tuple(p) for p in
              [(a, b, c) for a in (1, -1) for b in (1, -1) for c in (1, -1)]}
    got = {tuple(np.round(p.real, 12)) for p in pts}
    assert got == expect
    assert np.max(np.abs(pts.imag)) < 1e-12


def test_gamma_h_differs_between_seeds():
    syst = univariate_system([-2.0, 0.0, 1.0])
    g42 = make_start_system(syst, TrackerConfig(rng_seed=42)).gamma_h
    g43 = make_start_system(syst, TrackerConfig(rng_seed=43)).gamma_h
    assert g42 != g43


def test_constant_equation_rejected(cfg):
    sb = SystemBuilder()
    sb.add_variable("x")
    sb.add_equation([(1.0, {})])
    with pytest.raises(ConstantEquationError):
        make_start_system(sb.build(), cfg)


# -- track_path ----------------------------------------------------------------


def test_track_single_path_to_shifted_quadratic(cfg):
    syst = univariate_system([-4.0, 0.0, 1.0])  # x^2 - 4
    start = make_start_system(syst, cfg)
    problem = total_degree_homotopy(syst, start)
    res = track_path(problem, [1.0 + 0j], cfg)
    assert res.status == "converged"
    assert res.final_t == 1.0
    assert res.endpoint[0] == pytest.approx(2.0, abs=1e-9)
    assert res.endpoint_residual < cfg.newton_tol * 10
    res2 = track_path(problem, [-1.0 + 0j], cfg)
    assert res2.endpoint[0] == pytest.approx(-2.0, abs=1e-9)


def test_track_path_to_complex_roots(cfg):
    syst = univariate_system([1.0, 0.0, 1.0])  # x^2 + 1
    start = make_start_system(syst, cfg)
    problem = total_degree_homotopy(syst, start)
    endpoints = set()
    for i in range(2):
        res = track_path(problem, start.point(i), cfg)
        assert res.status == "converged"
        endpoints.add(round(res.endpoint[0].imag, 9))
    assert endpoints == {1.0, -1.0}


def test_track_path_divergence(cfg):
    # Bezout count 2 but a single affine solution: one path must leave.
    syst = bivariate(
        [(1.0, {"x": 1, "y": 1}), (-1.0, {})],
        [(1.0, {"x": 1}), (-2.0, {})],
    )
    solset = solve_all(syst, cfg)
    assert solset.path_stats.diverged == 1
    assert solset.path_stats.converged == 1
    assert_same_solution_sets(
        [s.vector for s in solset.solutions], [np.array([2.0, 0.5])]
    )


def test_conjugate_start_tracks_to_conjugate_endpoint(cfg):
    # Real homotopy (gamma_h = 1) between x^3-1 and x^3-8: radial paths,
    # so conjugate starts map exactly to conjugate endpoints.
    syst = univariate_system([-8.0, 0.0, 0.0, 1.0])
    start = homotopy.StartSystem(degrees=(3,), gamma_h=1.0 + 0j)
    problem = total_degree_homotopy(syst, start)
    omega = np.exp(2j * np.pi / 3)
    up = track_path(problem, [omega], cfg)
    down = track_path(problem, [np.conj(omega)], cfg)
    assert up.status == down.status == "converged"
    assert up.endpoint[0] == pytest.approx(np.conj(down.endpoint[0]), abs=1e-9)


def test_track_path_rejects_bad_start(cfg):
    syst = univariate_system([-4.0, 0.0, 1.0])
    start = make_start_system(syst, cfg)
    problem = total_degree_homotopy(syst, start)
    with pytest.raises(ValueError, match="start point"):
        track_path(problem, [5.0 + 5.0j], cfg)


# -- solve_all -----------------------------------------------------------------


def test_solve_all_product_of_quadratics(cfg):
    syst = bivariate(
        [(1.0, {"x": 2}), (-1.0, {})],
        [(1.0, {"y": 2}), (-1.0, {})],
    )
    solset = solve_all(syst, cfg)
    assert solset.path_stats.converged == 4
    assert len(solset.real_solutions) == 4
    expect = [np.array([a, b]) for a in (1, -1) for b in (1, -1)]
    assert_same_solution_sets([s.vector for s in solset.solutions], expect)


def test_solve_all_two_bus_closed_form(twobus_system, cfg):
    system, _ = twobus_system
    solset = classify_solutions(solve_all(system, cfg), cfg)
    expect = [np.array(p) for p in twobus_closed_form(0.0, -10.0, 0.5, 0.0)]
    got = [s.vector for s in solset.real_solutions]
    assert_same_solution_sets(got, expect)
    assert all(s.residual < 1e-10 for s in solset.solutions)


def test_solve_all_pure_complex_pair(cfg):
    solset = solve_all(univariate_system([1.0, 0.0, 1.0]), cfg)
    assert len(solset.solutions) == 2
    assert len(solset.real_solutions) == 0
    assert_same_solution_sets(
        [s.vector for s in solset.solutions],
        [np.array([1j]), np.array([-1j])],
    )


def test_path_budget_exceeded():
    sb = SystemBuilder()
    for i in range(4):
        sb.add_variable(f"x{i}")
    for i in range(4):
        sb.add_equation([(1.0, {f"x{i}": 2}), (-1.0, {})])
    with pytest.raises(PathBudgetExceeded, match="parameter-homotopy"):
        solve_all(sb.build(), TrackerConfig(path_budget=8))


def test_deterministic_output_order(twobus_system, cfg):
    system, _ = twobus_system
    a = solve_all(system, cfg)
    b = solve_all(system, cfg)
    assert a.dump_lines() == b.dump_lines()


# -- classification ------------------------------------------------------------


def test_classify_projects_near_real(cfg):
    syst = univariate_system([-1.0, 0.0, 1.0])
    solset = solve_all(syst, cfg)
    doctored = homotopy.SolutionSet(
        solutions=(
            homotopy.Solution(
                vector=np.array([1.0 + 1e-9j]), residual=1e-12,
                jacobian_condition=1.0, is_real=True, is_singular=False,
                multiplicity_hint=1),
            homotopy.Solution(
                vector=np.array([1.0 + 1e-3j]), residual=1e-12,
                jacobian_condition=1.0, is_real=False, is_singular=False,
                multiplicity_hint=1),
        ),
        path_stats=solset.path_stats,
        provenance=solset.provenance,
        system=solset.system,
    )
    out = classify_solutions(doctored, cfg)
    real = out.real_solutions
    assert len(real) == 1
    assert real[0].vector[0].imag == 0.0
    assert real[0].vector[0].real == pytest.approx(1.0, abs=1e-10)
    assert len(out.complex_solutions) == 1


def test_classify_real_tolerance_boundary(cfg):
    # max |Im| below real_tol counts as real, above does not
    syst = univariate_system([1.0, 0.0, 1.0])
    solset = solve_all(syst, cfg)
    assert all(not s.is_real for s in solset.solutions)


def test_double_root_flagged_singular(cfg):
    solset = classify_solutions(solve_all(univariate_system([0.0, 0.0, 1.0]), cfg), cfg)
    assert len(solset.solutions) >= 1
    assert all(s.is_singular for s in solset.solutions)
    assert all(s.is_real for s in solset.solutions)
    assert all(abs(s.vector[0]) < 1e-4 for s in solset.solutions)


# -- properties ----------------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 30), st.integers(1, 4))
def test_path_accounting_is_exact(seed, deg):
    rng = np.random.default_rng(seed)
    coeffs = rng.normal(size=deg + 1) + 1j * rng.normal(size=deg + 1)
    coeffs[-1] += 2.0  # keep the leading coefficient well away from zero
    solset = solve_all(univariate_system(coeffs), TrackerConfig(rng_seed=seed))
    stats = solset.path_stats
    assert stats.converged + stats.diverged + stats.stalled == deg


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 30))
def test_real_systems_conjugate_closed(seed):
    rng = np.random.default_rng(seed)
    deg = int(rng.integers(2, 5))
    coeffs = rng.normal(size=deg + 1)
    coeffs[-1] += 1.0
    solset = solve_all(univariate_system(coeffs), TrackerConfig(rng_seed=seed))
    vectors = [s.vector for s in solset.solutions]
    conjugated = [np.conj(v) for v in vectors]
    assert_same_solution_sets(vectors, conjugated)


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 30))
def test_gamma_h_independence(seed):
    rng = np.random.default_rng(seed)
    deg = int(rng.integers(2, 5))
    coeffs = rng.normal(size=deg + 1) + 1j * rng.normal(size=deg + 1)
    coeffs[-1] += 2.0
    syst = univariate_system(coeffs)
    a = solve_all(syst, TrackerConfig(rng_seed=seed))
    b = solve_all(syst, TrackerConfig(rng_seed=seed + 1))
    assert_same_solution_sets(
        [s.vector for s in a.solutions], [s.vector for s in b.solutions]
    )


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 30))
def test_completeness_vs_companion_matrix(seed):
    rng = np.random.default_rng(seed)
    deg = int(rng.integers(2, 7))
    coeffs = rng.normal(size=deg + 1) + 1j * rng.normal(size=deg + 1)
    coeffs[-1] += 2.0
    solset = solve_all(univariate_system(coeffs), TrackerConfig(rng_seed=seed))
    reference = np.roots(coeffs[::-1])
    assert_same_solution_sets(
        [s.vector for s in solset.solutions],
        [np.array([z]) for z in reference],
    )


def test_residual_bound_holds(twobus_system, cfg):
    system, _ = twobus_system
    for s in solve_all(system, cfg).solutions:
        assert np.max(np.abs(system.residual(s.vector))) < 1e-8


def test_two_bus_solution_set_independent_of_seed(twobus_system):
    system, _ = twobus_system
    a = solve_all(system, TrackerConfig(rng_seed=42))
    b = solve_all(system, TrackerConfig(rng_seed=43))
    assert a.provenance.gamma_h != b.provenance.gamma_h
    assert_same_solution_sets(
        [s.vector for s in a.solutions], [s.vector for s in b.solutions]
    )
