import cmath
import json
from importlib import resources

import numpy as np
import pytest

from allflow import kernels, netmodel, param_sweep
from allflow.homotopy import TrackerConfig
from allflow.polysys import SystemBuilder
from allflow.steady_poly import build_equilibrium_system


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # Compile the JIT kernels once so timed tests measure tracking, not
    # compilation.
    kernels.warm_up()


@pytest.fixture(scope="session")
def cfg():
    return TrackerConfig()


def case_text(name: str) -> str:
    return resources.files("allflow").joinpath(f"cases/{name}.json").read_text()


@pytest.fixture(scope="session")
def twobus_net():
    return netmodel.load_case(case_text("twobus"))


@pytest.fixture(scope="session")
def brazil7_net():
    return netmodel.load_case(case_text("brazil7"))


@pytest.fixture(scope="session")
def twobus_system(twobus_net):
    return build_equilibrium_system(twobus_net, gamma=1.0, vw_mag=1.0)


@pytest.fixture(scope="session")
def brazil7_system(brazil7_net):
    return build_equilibrium_system(brazil7_net, gamma=1.0, vw_mag=0.98)


@pytest.fixture(scope="session")
def brazil7_cache(brazil7_system, cfg, tmp_path_factory):
    """Generic-point start cache for the 7-bus family, built once per session."""
    system, _ = brazil7_system
    path = tmp_path_factory.mktemp("cache") / "brazil7_cache.json"
    cache = param_sweep.solve_generic(system.unbind(), cfg, cache_path=str(path))
    return cache, str(path)


# -- closed-form oracles -------------------------------------------------------


def twobus_closed_form(g: float, b: float, G: float, B: float):
    """Both real roots of the slack+shunt-load case, by hand reduction.

    Eliminating the angle direction leaves a quadratic in the squared
    magnitude with roots zero and |y|^4 / K; the voltage components follow
    linearly from the magnitude.
    """
    ysq = g * g + b * b
    K = ((g * (g + G) + b * (b - B)) ** 2 + (b * G + g * B) ** 2) / ysq ** 2
    s_hi = 1.0 / K
    u = s_hi * (g * (g + G) + b * (b - B)) / ysq
    w = s_hi * (b * G + g * B) / ysq
    return [(0.0, 0.0), (u, w)]


def build_twobus_family(g: float, b: float, G0: float, B: float):
    """Slack + shunt-load pair with the conductance scaled by a parameter."""
    sb = SystemBuilder()
    sb.add_variable("u")
    sb.add_variable("w")
    sb.add_parameter("gamma")
    sb.add_equation([
        ((-g, {"gamma": -G0}), {"u": 2}),
        ((-g, {"gamma": -G0}), {"w": 2}),
        (g, {"u": 1}),
        (b, {"w": 1}),
    ])
    sb.add_equation([
        (b - B, {"u": 2}),
        (b - B, {"w": 2}),
        (g, {"w": 1}),
        (-b, {"u": 1}),
    ])
    return sb.build()


def build_synthetic_family():
    """Four-variable triangular family, affine in two parameters.

    Solvable in closed form by chained quadratic formulas, which makes it
    an exact oracle for the parameter-homotopy equivalence checks.
    """
    sb = SystemBuilder()
    for v in ("x", "y", "z", "w"):
        sb.add_variable(v)
    sb.add_parameter("lam1")
    sb.add_parameter("lam2")
    sb.add_equation([(1.0, {"x": 2}), ((0.0, {"lam1": -1.0}), {})])
    sb.add_equation([(1.0, {"y": 2}), (1.0, {"x": 1, "y": 1}),
                     ((0.0, {"lam2": -1.0}), {})])
    sb.add_equation([(1.0, {"z": 2}), (1.0, {"x": 1}), (1.0, {"y": 1}),
                     ((-1.0, {"lam1": -1.0}), {})])
    sb.add_equation([(1.0, {"w": 2}), (1.0, {"w": 1, "z": 1}), (1.0, {"y": 1}),
                     ((0.0, {"lam2": -1.0}), {})])
    return sb.build()


def synthetic_family_roots(lam1: complex, lam2: complex):
    """All 16 solutions of the triangular family by quadratic formulas."""
    sols = []
    for sx in (1, -1):
        x = sx * cmath.sqrt(lam1)
        for sy in (1, -1):
            y = (-x + sy * cmath.sqrt(x * x + 4 * lam2)) / 2.0
            for sz in (1, -1):
                z = sz * cmath.sqrt(1.0 + lam1 - x - y)
                for sw in (1, -1):
                    w = (-z + sw * cmath.sqrt(z * z - 4 * (y - lam2))) / 2.0
                    sols.append((x, y, z, w))
    return sols


def sorted_vectors(vectors, ndigits=8):
    return sorted(
        (tuple(complex(z) for z in v) for v in vectors),
        key=lambda tup: tuple((round(z.real, ndigits), round(z.imag, ndigits))
                              for z in tup),
    )


def assert_same_solution_sets(A, B, tol=1e-8):
    """Compare two solution-vector collections as sets, max-norm metric."""
    A = [np.asarray(a, dtype=np.complex128) for a in A]
    B = [np.asarray(b, dtype=np.complex128) for b in B]
    assert len(A) == len(B), f"set sizes differ: {len(A)} vs {len(B)}"
    if not A:
        return
    mat = np.vstack([a[None, :] for a in A])
    for b in B:
        dist = np.min(np.max(np.abs(mat - b[None, :]), axis=1))
        assert dist < tol, f"unmatched solution (distance {dist:.3e})"


def univariate_system(coeffs):
    """Single equation sum_k coeffs[k] * x^k as a PolynomialSystem."""
    sb = SystemBuilder()
    sb.add_variable("x")
    sb.add_equation([(complex(c), {"x": k}) for k, c in enumerate(coeffs)])
    return sb.build()
