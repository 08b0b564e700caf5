"""Parameter-homotopy sweep: solve once at a generic complex parameter
point, then track that solution set to every physical parameter value.

For a parametric family P(x, lam) the solution count at a random complex
lam* dominates the count at every other parameter point, so the expensive
total-degree solve happens once, offline, at lam*.  Each requested
physical point then costs only |start solutions| paths along the
straight-line homotopy

    H(x, t) = (1 - t) P(x, lam*) + t P(x, lam)

whose generic-avoidance factor is implicit in the complex lam*.

The offline solve is further accelerated by eliminating variables that a
pivot equation defines linearly (reactive outputs, rotor voltages, the
torque bookkeeping variable): the reduced system has the same solutions
in bijection and a far smaller Bezout count, and the eliminated
coordinates are restored by exact back-substitution before caching.  The
cache persists to disk keyed by a fingerprint of the family, seed and
options, so repeated sweeps skip tracking entirely.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, replace

import numpy as np

from . import homotopy
from .homotopy import (
    PathStats,
    Provenance,
    Solution,
    SolutionSet,
    TrackerConfig,
)
from .netmodel import Network
from .polysys import PolynomialSystem, eliminate_linear_variables
from .steady_poly import VariableMap, build_equilibrium_system

log = logging.getLogger(__name__)

CACHE_VERSION = 1


class GenericPointError(RuntimeError):
    """Could not find a stable generic parameter point after retries."""


class CacheMismatchError(RuntimeError):
    """A cache file does not match the family it is applied to."""


@dataclass(frozen=True)
class ParameterPoint:
    """A point in parameter space; physical sweeps use positive reals.

    For the wind equilibrium family the slots are (penetration factor,
    squared wind-bus voltage setpoint), in family parameter order.
    """

    values: tuple[complex, ...]

    @classmethod
    def physical(cls, gamma: float, vw_mag: float) -> "ParameterPoint":
        return cls((complex(gamma), complex(vw_mag) ** 2))

    @property
    def gamma(self) -> complex:
        return self.values[0]

    @property
    def vw_mag_sq(self) -> complex:
        return self.values[1]

    @property
    def vw_mag(self) -> complex:
        return np.sqrt(self.values[1])

    @property
    def is_physical(self) -> bool:
        return all(v.imag == 0 and v.real > 0 for v in self.values)


@dataclass(frozen=True)
class SweepGrid:
    """Cross product of penetration factors and voltage setpoints."""

    gammas: tuple[float, ...]
    vw_mags: tuple[float, ...]

    def __post_init__(self):
        if not self.gammas or not self.vw_mags:
            raise ValueError("sweep grid must be nonempty")
        if any(g <= 0 for g in self.gammas) or any(v <= 0 for v in self.vw_mags):
            raise ValueError("sweep grid values must be positive")

    def points(self) -> list[ParameterPoint]:
        return [
            ParameterPoint.physical(g, v)
            for g in self.gammas
            for v in self.vw_mags
        ]


@dataclass(frozen=True)
class GenericSolveCache:
    """Start system for parameter tracking: solutions at a generic point."""

    family: PolynomialSystem
    generic_point: ParameterPoint
    start_solutions: SolutionSet
    fingerprint: str
    rng_seed: int
    offline_paths_tracked: int

    @property
    def start_vectors(self) -> np.ndarray:
        if not self.start_solutions.solutions:
            return np.zeros((0, self.family.n_variables), dtype=np.complex128)
        return np.vstack([s.vector for s in self.start_solutions.solutions])


def family_fingerprint(family: PolynomialSystem, cfg: TrackerConfig,
                       reduce_linear: bool, union_draws: int = 2) -> str:
    """Hash of the family structure plus everything that shapes the cache."""
    payload = {
        "version": CACHE_VERSION,
        "variables": list(family.variables),
        "parameters": list(family.parameters),
        "equations": family.unbind().dump(),
        "rng_seed": cfg.rng_seed,
        "reduce_linear": bool(reduce_linear),
        "union_draws": int(union_draws),
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _draw_generic_point(family: PolynomialSystem, seed: int,
                        attempt: int) -> ParameterPoint:
    # Modulus bounded away from 0 and infinity keeps the start system
    # well conditioned; genericity only needs non-special phase/modulus.
    rng = np.random.default_rng([seed, 7_342_991, attempt])
    values = []
    for _ in family.parameters:
        modulus = rng.uniform(0.5, 2.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        values.append(complex(modulus * np.exp(1j * phase)))
    return ParameterPoint(tuple(values))


def solve_generic(
    family: PolynomialSystem,
    cfg: TrackerConfig | None = None,
    *,
    reduce_linear: bool = True,
    union_draws: int = 2,
    cache_path=None,
) -> GenericSolveCache:
    """Solve the family at a random complex parameter point, offline.

    With ``reduce_linear`` the total-degree solve runs on the linearly
    reduced system and the eliminated coordinates are restored exactly, so
    the cached start solutions always live in the full variable space.

    ``union_draws`` independent tracker runs (distinct gamma_h draws) are
    unioned: on badly conditioned systems a single run can lose the odd
    path near the numerical horizon, and any solution missed by one draw
    is found by the other with overwhelming probability.  Residuals keep
    the union honest.  A matching cache file short-circuits everything.
    """
    cfg = cfg or TrackerConfig()
    if not family.parameters:
        raise ValueError("family carries no free parameter slots")
    family = family.unbind()
    fingerprint = family_fingerprint(family, cfg, reduce_linear, union_draws)

    if cache_path is not None:
        cached = _load_cache_file(cache_path, family, fingerprint, cfg)
        if cached is not None:
            log.info("generic-solve cache hit (%s)", cache_path)
            return cached

    reduced, recovery = (
        eliminate_linear_variables(family) if reduce_linear
        else (family, None)
    )
    if reduce_linear:
        log.info(
            "linear reduction: %d -> %d variables, %d -> %d paths",
            family.n_variables, reduced.n_variables,
            family.total_degree(), reduced.total_degree(),
        )

    chosen = None
    previous_count = None
    paths_tracked = 0
    for attempt in range(3):
        point = _draw_generic_point(family, cfg.rng_seed, attempt)
        bound = reduced.bind(**dict(zip(family.parameters, point.values)))
        solset = homotopy.solve_all(bound, cfg)
        paths_tracked += solset.path_stats.total
        for extra in range(1, max(1, union_draws)):
            other = replace(cfg, rng_seed=cfg.rng_seed + 1_000_003 * extra)
            second = homotopy.solve_all(bound, other)
            paths_tracked += second.path_stats.total
            solset = _union_solutions(solset, second, cfg)
        singular = any(s.is_singular for s in solset.solutions)
        if not singular or previous_count == len(solset):
            chosen = (point, solset)
            break
        log.info(
            "generic point attempt %d produced singular solutions; redrawing",
            attempt,
        )
        previous_count = len(solset)
    if chosen is None:
        raise GenericPointError(
            "singular solution count unstable across three generic draws"
        )
    point, reduced_set = chosen

    full_bound = family.bind(**dict(zip(family.parameters, point.values)))
    if recovery is not None and reduced_set.solutions:
        reduced_vecs = np.vstack([s.vector for s in reduced_set.solutions])
        full_vecs = recovery.recover(reduced_vecs, point.values)
        polished, ok, resid = homotopy.polish_against(
            full_bound, full_vecs, tol=cfg.newton_tol,
            maxit=2 * cfg.max_newton_iters,
        )
        solutions = _tag_solutions(full_bound, polished, resid,
                                   reduced_set.solutions, cfg)
        start_solutions = SolutionSet(
            solutions=tuple(solutions),
            path_stats=reduced_set.path_stats,
            provenance=Provenance(
                kind="generic-point", rng_seed=cfg.rng_seed,
                gamma_h=reduced_set.provenance.gamma_h, config=cfg,
            ),
            system=full_bound,
        )
    else:
        start_solutions = SolutionSet(
            solutions=reduced_set.solutions,
            path_stats=reduced_set.path_stats,
            provenance=Provenance(
                kind="generic-point", rng_seed=cfg.rng_seed,
                gamma_h=reduced_set.provenance.gamma_h, config=cfg,
            ),
            system=full_bound,
        )

    cache = GenericSolveCache(
        family=family,
        generic_point=point,
        start_solutions=start_solutions,
        fingerprint=fingerprint,
        rng_seed=cfg.rng_seed,
        offline_paths_tracked=paths_tracked,
    )
    bad = [s for s in cache.start_solutions.solutions if s.residual > 1e-10]
    if bad:
        raise GenericPointError(
            f"{len(bad)} start solutions exceed the 1e-10 residual bound"
        )
    if cache_path is not None:
        save_cache(cache, cache_path)
    return cache


def _union_solutions(first: SolutionSet, second: SolutionSet,
                     cfg: TrackerConfig) -> SolutionSet:
    """Union two solution sets of one system; keeps the first run's stats."""
    merged = list(first.solutions)
    if merged:
        mat = np.vstack([s.vector for s in merged])
    else:
        mat = np.zeros((0, second.system.n_variables), dtype=np.complex128)
    for sol in second.solutions:
        if mat.shape[0]:
            dist = np.min(np.max(np.abs(mat - sol.vector[None, :]), axis=1))
            if dist < cfg.dedup_tol:
                continue
        merged.append(sol)
        mat = np.vstack([mat, sol.vector[None, :]])
    merged.sort(key=lambda s: homotopy._sort_key(s.vector))
    return replace(first, solutions=tuple(merged))


def _tag_solutions(system, vectors, residuals, templates, cfg):
    solutions = []
    for vec, res, template in zip(vectors, residuals, templates):
        try:
            cond = float(np.linalg.cond(system.jacobian(vec)))
        except np.linalg.LinAlgError:  # pragma: no cover
            cond = float("inf")
        solutions.append(
            Solution(
                vector=vec.copy(),
                residual=float(res),
                jacobian_condition=cond,
                is_real=bool(np.max(np.abs(vec.imag), initial=0.0) < cfg.real_tol),
                is_singular=bool(cond > cfg.singular_cond_threshold),
                multiplicity_hint=template.multiplicity_hint,
            )
        )
    solutions.sort(key=lambda s: homotopy._sort_key(s.vector))
    return solutions


def track_to_parameter(
    cache: GenericSolveCache,
    target: ParameterPoint,
    cfg: TrackerConfig | None = None,
) -> SolutionSet:
    """Track every cached start solution to ``target`` parameter values."""
    cfg = cfg or TrackerConfig()
    if len(target.values) != len(cache.family.parameters):
        raise CacheMismatchError(
            f"target has {len(target.values)} values for "
            f"{len(cache.family.parameters)} parameter slots"
        )
    problem = homotopy.parameter_homotopy(
        cache.family, cache.generic_point.values, target.values
    )
    bound = cache.family.bind(
        **dict(zip(cache.family.parameters, target.values))
    )
    return homotopy.track_solutions(
        bound, problem, cache.start_vectors, cfg, kind="parameter"
    )


def sweep(
    net: Network,
    grid: SweepGrid,
    cfg: TrackerConfig | None = None,
    *,
    cache_path=None,
    reduce_linear: bool = True,
) -> tuple[dict[ParameterPoint, SolutionSet], VariableMap, GenericSolveCache | None]:
    """Solve the equilibrium family at every grid point.

    Returns the per-point solution sets (grid order), the variable map of
    the family, and the generic cache (None for wind-free networks, which
    have no parameters and are solved directly per point).
    """
    cfg = cfg or TrackerConfig()
    system, vmap = build_equilibrium_system(
        net, gamma=grid.gammas[0], vw_mag=grid.vw_mags[0]
    )
    results: dict[ParameterPoint, SolutionSet] = {}
    if not system.parameters:
        base = homotopy.classify_solutions(homotopy.solve_all(system, cfg), cfg)
        for point in grid.points():
            results[point] = base
        return results, vmap, None

    cache = solve_generic(
        system.unbind(), cfg, reduce_linear=reduce_linear, cache_path=cache_path
    )
    for point in grid.points():
        solset = track_to_parameter(cache, point, cfg)
        results[point] = homotopy.classify_solutions(solset, cfg)
    return results, vmap, cache


# -- cache persistence --------------------------------------------------------


def save_cache(cache: GenericSolveCache, path) -> None:
    """Write the cache as structured text (see ``docs/cache_format.md``)."""
    doc = {
        "version": CACHE_VERSION,
        "fingerprint": cache.fingerprint,
        "rng_seed": cache.rng_seed,
        "parameters": list(cache.family.parameters),
        "variables": list(cache.family.variables),
        "generic_point": [[v.real, v.imag] for v in cache.generic_point.values],
        "offline_paths_tracked": cache.offline_paths_tracked,
        "path_stats": {
            "converged": cache.start_solutions.path_stats.converged,
            "diverged": cache.start_solutions.path_stats.diverged,
            "stalled": cache.start_solutions.path_stats.stalled,
        },
        "solutions": [
            [[z.real, z.imag] for z in s.vector]
            for s in cache.start_solutions.solutions
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def _load_cache_file(path, family: PolynomialSystem, fingerprint: str,
                     cfg: TrackerConfig) -> GenericSolveCache | None:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        return None
    except (OSError, json.JSONDecodeError):
        log.info("unreadable cache at %s; rebuilding", path)
        return None
    if doc.get("fingerprint") != fingerprint or doc.get("version") != CACHE_VERSION:
        log.info("stale cache at %s; rebuilding", path)
        return None
    point = ParameterPoint(
        tuple(complex(re, im) for re, im in doc["generic_point"])
    )
    bound = family.bind(**dict(zip(family.parameters, point.values)))
    vectors = np.array(
        [[complex(re, im) for re, im in sol] for sol in doc["solutions"]],
        dtype=np.complex128,
    ).reshape(len(doc["solutions"]), family.n_variables)
    residuals = (
        np.array([float(np.max(np.abs(bound.residual(v)), initial=0.0))
                  for v in vectors])
        if len(vectors)
        else np.zeros(0)
    )
    templates = [
        Solution(vector=v, residual=0.0, jacobian_condition=0.0,
                 is_real=False, is_singular=False, multiplicity_hint=1)
        for v in vectors
    ]
    solutions = _tag_solutions(bound, vectors, residuals, templates, cfg)
    stats = doc["path_stats"]
    start_solutions = SolutionSet(
        solutions=tuple(solutions),
        path_stats=PathStats(stats["converged"], stats["diverged"],
                             stats["stalled"]),
        provenance=Provenance(kind="generic-point", rng_seed=doc["rng_seed"],
                              gamma_h=None, config=cfg),
        system=bound,
    )
    return GenericSolveCache(
        family=family,
        generic_point=point,
        start_solutions=start_solutions,
        fingerprint=fingerprint,
        rng_seed=doc["rng_seed"],
        offline_paths_tracked=doc["offline_paths_tracked"],
    )
