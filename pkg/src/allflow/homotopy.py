"""Total-degree homotopy continuation for square polynomial systems.

The solver deforms an easy start system ``Q_i(x) = x_i^{d_i} - 1`` (all
roots of unity known) into the target system along

    H(x, t) = gamma_h (1 - t) Q(x) + t P(x)

with ``gamma_h`` a random unit-modulus complex constant, tracking every
start point with an adaptive Euler/Newton predictor-corrector.  Paths
either converge to a finite solution, diverge to infinity, or stall;
their counts always add up to the Bezout number.  Endpoints are polished,
deduplicated, tagged real/singular, and reported in a deterministic
order, so a fixed seed reproduces output byte for byte.

Start points are enumerated lazily in fixed-size chunks: the full (and
possibly astronomically large) start set never materializes in memory.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .polysys import PolynomialSystem

STATUS_NAMES = {kernels.CONVERGED: "converged",
                kernels.DIVERGED: "diverged",
                kernels.STALLED: "stalled"}


class ConstantEquationError(ValueError):
    """A zero-degree (constant) equation admits no start-system pairing."""


class PathBudgetExceeded(RuntimeError):
    """Total degree exceeds the configured path budget.

    Large parametric families should go through the generic-point cache in
    :mod:`allflow.param_sweep` instead of a direct solve.
    """


@dataclass(frozen=True)
class TrackerConfig:
    """Numeric settings for path tracking and solution classification."""

    newton_tol: float = 1e-10
    max_newton_iters: int = 10
    initial_step: float = 0.01
    min_step: float = 1e-14
    max_step: float = 0.1
    divergence_norm: float = 1e8
    endgame_start: float = 0.9
    dedup_tol: float = 1e-6
    real_tol: float = 1e-6
    singular_cond_threshold: float = 1e12
    rng_seed: int = 0
    path_budget: int = 2 ** 26
    max_steps: int = 20000
    chunk_size: int = 2048
    retry_waves: int = 2

    def __post_init__(self):
        if not (0 < self.min_step < self.initial_step <= self.max_step < 1):
            raise ValueError(
                "require 0 < min_step < initial_step <= max_step < 1"
            )
        for name in ("newton_tol", "divergence_norm", "dedup_tol", "real_tol",
                     "singular_cond_threshold"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0 < self.endgame_start < 1):
            raise ValueError("endgame_start must lie in (0, 1)")


@dataclass(frozen=True)
class StartSystem:
    """Total-degree start system x_i^{d_i} = 1 with lazily enumerated roots."""

    degrees: tuple[int, ...]
    gamma_h: complex

    @property
    def count(self) -> int:
        prod = 1
        for d in self.degrees:
            prod *= d
        return prod

    def point(self, index: int) -> np.ndarray:
        return self.points_range(index, index + 1)[0]

    def points_range(self, i0: int, i1: int) -> np.ndarray:
        """Start points for path indices [i0, i1), odometer order."""
        n = len(self.degrees)
        idx = np.arange(i0, i1, dtype=np.int64)
        out = np.empty((i1 - i0, n), dtype=np.complex128)
        stride = 1
        for j in range(n - 1, -1, -1):
            d = self.degrees[j]
            k = (idx // stride) % d
            out[:, j] = np.exp(2j * np.pi * k / d)
            stride *= d
        return out

    def chunks(self, size: int):
        total = self.count
        i0 = 0
        while i0 < total:
            i1 = min(i0 + size, total)
            yield self.points_range(i0, i1)
            i0 = i1


@dataclass(frozen=True)
class HomotopyProblem:
    """Compiled homotopy pair: start-side C0 and target-side C1 coefficients
    over one shared monomial support."""

    term_vars: np.ndarray
    term_exps: np.ndarray
    term_len: np.ndarray
    eq_ptr: np.ndarray
    C0: np.ndarray
    C1: np.ndarray
    pwlen: int
    n_vars: int
    max_degree: int
    gamma_h: complex | None = None


@dataclass(frozen=True)
class PathResult:
    start_point: np.ndarray
    endpoint: np.ndarray
    status: str
    final_t: float
    endpoint_residual: float
    endpoint_jacobian_condition: float
    steps_taken: int


@dataclass(frozen=True)
class Solution:
    vector: np.ndarray
    residual: float
    jacobian_condition: float
    is_real: bool
    is_singular: bool
    multiplicity_hint: int


@dataclass(frozen=True)
class PathStats:
    converged: int
    diverged: int
    stalled: int

    @property
    def total(self) -> int:
        return self.converged + self.diverged + self.stalled


@dataclass(frozen=True)
class Provenance:
    kind: str
    rng_seed: int
    gamma_h: complex | None
    config: TrackerConfig


@dataclass(frozen=True)
class SolutionSet:
    """Deduplicated endpoints of a homotopy run, deterministically ordered."""

    solutions: tuple[Solution, ...]
    path_stats: PathStats
    provenance: Provenance
    system: PolynomialSystem

    def __len__(self) -> int:
        return len(self.solutions)

    @property
    def real_solutions(self) -> tuple[Solution, ...]:
        return tuple(s for s in self.solutions if s.is_real)

    @property
    def real_regular(self) -> tuple[Solution, ...]:
        return tuple(s for s in self.solutions if s.is_real and not s.is_singular)

    @property
    def real_singular(self) -> tuple[Solution, ...]:
        return tuple(s for s in self.solutions if s.is_real and s.is_singular)

    @property
    def complex_solutions(self) -> tuple[Solution, ...]:
        return tuple(s for s in self.solutions if not s.is_real)

    def dump_lines(self) -> list[str]:
        """One line per solution: status, tags, residual, coordinates."""
        lines = []
        for s in self.solutions:
            coords = ",".join(
                f"{z.real:.17g},{z.imag:.17g}" for z in s.vector
            )
            lines.append(
                f"converged,{int(s.is_real)},{int(s.is_singular)},"
                f"{s.residual:.17g},{coords}"
            )
        return lines


def make_start_system(system: PolynomialSystem, cfg: TrackerConfig) -> StartSystem:
    """Pair each equation's total degree with a root-of-unity start factor."""
    degrees = system.degrees()
    if any(d < 1 for d in degrees):
        raise ConstantEquationError(
            f"system has a constant equation (degrees {degrees})"
        )
    rng = np.random.default_rng(cfg.rng_seed)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    return StartSystem(degrees=degrees, gamma_h=complex(np.exp(1j * phase)))


def total_degree_homotopy(
    system: PolynomialSystem, start: StartSystem
) -> HomotopyProblem:
    """Merge target and start supports into one trackable problem."""
    comp = system.compiled()
    C_target = system.bound_coefficients()
    n = system.n_variables
    rows = []
    c0 = []
    c1 = []
    eq_ptr = [0]
    g = start.gamma_h
    for i in range(system.n_equations):
        lo, hi = comp.eq_ptr[i], comp.eq_ptr[i + 1]
        for j in range(lo, hi):
            rows.append(comp.exponents[j])
            c0.append(0.0)
            c1.append(C_target[j])
        lead = np.zeros(n, dtype=np.int64)
        lead[i] = start.degrees[i]
        rows.append(lead)
        c0.append(g)
        c1.append(0.0)
        rows.append(np.zeros(n, dtype=np.int64))
        c0.append(-g)
        c1.append(0.0)
        eq_ptr.append(len(rows))
    E = np.asarray(rows, dtype=np.int64)
    tv, te, tl, pwlen = kernels.compile_support(E)
    return HomotopyProblem(
        term_vars=tv, term_exps=te, term_len=tl,
        eq_ptr=np.asarray(eq_ptr, dtype=np.int64),
        C0=np.asarray(c0, dtype=np.complex128),
        C1=np.asarray(c1, dtype=np.complex128),
        pwlen=pwlen, n_vars=n,
        max_degree=int(E.sum(axis=1).max(initial=1)), gamma_h=g,
    )


def parameter_homotopy(
    family: PolynomialSystem, start_values, target_values
) -> HomotopyProblem:
    """Straight-line homotopy between two parameter bindings of one family."""
    comp = family.compiled()
    return HomotopyProblem(
        term_vars=comp.term_vars, term_exps=comp.term_exps,
        term_len=comp.term_len, eq_ptr=comp.eq_ptr,
        C0=comp.bind(np.asarray(start_values, dtype=np.complex128)),
        C1=comp.bind(np.asarray(target_values, dtype=np.complex128)),
        pwlen=comp.pwlen, n_vars=family.n_variables,
        max_degree=max(family.degrees(), default=1), gamma_h=None,
    )


def _run_block(problem: HomotopyProblem, starts: np.ndarray, cfg: TrackerConfig):
    B, n = starts.shape
    out_x = np.empty((B, n), dtype=np.complex128)
    out_status = np.empty(B, dtype=np.int64)
    out_steps = np.empty(B, dtype=np.int64)
    out_t = np.empty(B, dtype=np.float64)
    out_resid = np.empty(B, dtype=np.float64)
    kernels.track_block(
        problem.term_vars, problem.term_exps, problem.term_len, problem.eq_ptr,
        problem.C0, problem.C1, np.ascontiguousarray(starts, dtype=np.complex128),
        cfg.newton_tol, cfg.max_newton_iters, cfg.initial_step, cfg.min_step,
        cfg.max_step, cfg.divergence_norm, cfg.endgame_start, cfg.max_steps,
        problem.max_degree, problem.pwlen,
        out_x, out_status, out_steps, out_t, out_resid,
    )
    return out_x, out_status, out_steps, out_t, out_resid


def track_path(
    problem: HomotopyProblem, start, cfg: TrackerConfig | None = None
) -> PathResult:
    """Track a single path of an assembled homotopy problem."""
    cfg = cfg or TrackerConfig()
    start = np.asarray(start, dtype=np.complex128).reshape(1, -1)
    resid0 = _problem_residual(problem, start[0], 0.0)
    if resid0 > max(cfg.newton_tol * 1e4, 1e-8):
        raise ValueError(
            f"start point does not satisfy H(x,0)=0 (residual {resid0:.3e})"
        )
    out_x, out_status, out_steps, out_t, out_resid = _run_block(
        problem, start, cfg
    )
    status = STATUS_NAMES[int(out_status[0])]
    cond = float("nan")
    if status == "converged":
        cond = _jacobian_condition(problem, out_x[0])
    return PathResult(
        start_point=start[0].copy(),
        endpoint=out_x[0].copy(),
        status=status,
        final_t=float(out_t[0]),
        endpoint_residual=float(out_resid[0]),
        endpoint_jacobian_condition=cond,
        steps_taken=int(out_steps[0]),
    )


def _problem_residual(problem: HomotopyProblem, x: np.ndarray, t: float) -> float:
    out = np.empty(problem.eq_ptr.shape[0] - 1, dtype=np.complex128)
    kernels.eval_h(
        problem.term_vars, problem.term_exps, problem.term_len, problem.eq_ptr,
        problem.C0, problem.C1, t, np.asarray(x, dtype=np.complex128), out,
    )
    return float(np.max(np.abs(out))) if out.size else 0.0


def _jacobian_condition(problem: HomotopyProblem, x: np.ndarray) -> float:
    m = problem.eq_ptr.shape[0] - 1
    n = problem.n_vars
    H = np.empty(m, dtype=np.complex128)
    J = np.empty((m, n), dtype=np.complex128)
    pw = np.empty(problem.pwlen, dtype=np.complex128)
    kernels.eval_h_jac(
        problem.term_vars, problem.term_exps, problem.term_len, problem.eq_ptr,
        problem.C0, problem.C1, 1.0, np.asarray(x, dtype=np.complex128),
        H, J, pw,
    )
    try:
        return float(np.linalg.cond(J))
    except np.linalg.LinAlgError:  # pragma: no cover - cond rarely fails
        return float("inf")


class _Registry:
    """Incremental endpoint deduplication in path order."""

    def __init__(self, tol: float):
        self.tol = tol
        self.vectors: list[np.ndarray] = []
        self.residuals: list[float] = []
        self._mat: np.ndarray | None = None

    def add(self, x: np.ndarray, resid: float) -> tuple[int, bool]:
        """Register an endpoint; returns (entry id, merged-with-existing)."""
        if self.vectors:
            if self._mat is None or self._mat.shape[0] != len(self.vectors):
                self._mat = np.vstack(self.vectors)
            dist = np.max(np.abs(self._mat - x[None, :]), axis=1)
            j = int(np.argmin(dist))
            if dist[j] < self.tol:
                if resid < self.residuals[j]:
                    self.residuals[j] = resid
                return j, True
        self.vectors.append(x.copy())
        self.residuals.append(resid)
        self._mat = None
        return len(self.vectors) - 1, False


def _sort_key(vec: np.ndarray):
    return tuple(
        (round(float(z.real), 9), round(float(z.imag), 9)) for z in vec
    )


def _tighter(cfg: TrackerConfig, wave: int) -> TrackerConfig:
    shrink = 0.1 ** (wave + 1)
    h0 = max(cfg.initial_step * shrink, cfg.min_step * 10)
    hmax = max(cfg.max_step * shrink, h0)
    return replace(cfg, initial_step=h0, max_step=hmax,
                   max_newton_iters=cfg.max_newton_iters + 4)


def _collect(
    system: PolynomialSystem,
    problem: HomotopyProblem,
    start_chunks,
    get_points,
    cfg: TrackerConfig,
    kind: str,
) -> SolutionSet:
    """Track all paths, deduplicate endpoints, and re-track suspect paths.

    At a generic start the path-to-solution map is injective, so two paths
    meeting at one endpoint mean one of them jumped tracks; both get
    re-tracked with tighter steps, as do paths that stalled at moderate
    norm.  Every path keeps exactly one final status, so the converged /
    diverged / stalled accounting stays exact.
    """
    registry = _Registry(cfg.dedup_tol)
    # Converged paths only: path index -> registry entry currently credited.
    assignment: dict[int, int] = {}
    stats = {"diverged": 0, "stalled": 0}
    suspects: set[int] = set()

    def apply_result(path_idx, status, x, resid, queue):
        if status == kernels.CONVERGED:
            eid, merged = registry.add(x, float(resid))
            assignment[path_idx] = eid
            if merged and queue is not None:
                queue.add(path_idx)
                for other, e in assignment.items():
                    if e == eid and other != path_idx:
                        queue.add(other)
        elif status == kernels.DIVERGED:
            stats["diverged"] += 1
        else:
            stats["stalled"] += 1
            norm = float(np.max(np.abs(x), initial=0.0))
            if queue is not None and norm <= 1e4:
                queue.add(path_idx)

    base = 0
    for starts in start_chunks:
        out_x, out_status, _, _, out_resid = _run_block(problem, starts, cfg)
        for b in range(starts.shape[0]):
            apply_result(base + b, int(out_status[b]), out_x[b],
                         out_resid[b], suspects)
        base += starts.shape[0]

    retried: set[int] = set()
    for wave in range(cfg.retry_waves):
        suspects -= retried
        if not suspects:
            break
        indices = sorted(suspects)
        retried |= suspects
        starts = get_points(np.asarray(indices, dtype=np.int64))
        wave_cfg = _tighter(cfg, wave)
        out_x, out_status, _, _, out_resid = _run_block(problem, starts, wave_cfg)
        next_suspects: set[int] = set()
        for b, path_idx in enumerate(indices):
            if path_idx in assignment:
                del assignment[path_idx]
            else:
                stats["stalled"] -= 1
            queue = next_suspects if wave + 1 < cfg.retry_waves else None
            apply_result(path_idx, int(out_status[b]), out_x[b],
                         out_resid[b], queue)
        suspects = next_suspects

    counts = Counter(assignment.values())
    order = sorted(counts, key=lambda i: _sort_key(registry.vectors[i]))
    solutions = []
    for i in order:
        vec = registry.vectors[i]
        cond = _jacobian_condition(problem, vec)
        solutions.append(
            Solution(
                vector=vec,
                residual=registry.residuals[i],
                jacobian_condition=cond,
                is_real=bool(np.max(np.abs(vec.imag), initial=0.0) < cfg.real_tol),
                is_singular=bool(cond > cfg.singular_cond_threshold),
                multiplicity_hint=counts[i],
            )
        )
    solutions = _merge_singular_clusters(solutions, problem, cfg)
    return SolutionSet(
        solutions=tuple(solutions),
        path_stats=PathStats(len(assignment), stats["diverged"],
                             stats["stalled"]),
        provenance=Provenance(
            kind=kind, rng_seed=cfg.rng_seed, gamma_h=problem.gamma_h, config=cfg
        ),
        system=system,
    )


def _merge_singular_clusters(solutions, problem: HomotopyProblem,
                             cfg: TrackerConfig):
    """Collapse endpoint clusters at the sqrt-tolerance scale.

    Paths converging to a multiple root stop a distance ~sqrt(newton_tol)
    from it, beyond the plain dedup radius but far inside the separation
    of genuinely distinct solutions.  Members of such a cluster average to
    the true root to second order; the merged solution is flagged
    singular.
    """
    if len(solutions) < 2:
        return list(solutions)
    radius = max(10.0 * np.sqrt(cfg.newton_tol), 10.0 * cfg.dedup_tol)
    n = len(solutions)
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(n):
        for j in range(i + 1, n):
            vi, vj = solutions[i].vector, solutions[j].vector
            scale = 1.0 + min(np.max(np.abs(vi)), np.max(np.abs(vj)))
            if np.max(np.abs(vi - vj)) < radius * scale:
                parent[find(i)] = find(j)

    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    if all(len(g) == 1 for g in groups.values()):
        return list(solutions)

    merged = []
    for members in groups.values():
        if len(members) == 1:
            merged.append(solutions[members[0]])
            continue
        vecs = np.vstack([solutions[i].vector for i in members])
        center = vecs.mean(axis=0)
        resid = _problem_residual(problem, center, 1.0)
        merged.append(
            Solution(
                vector=center,
                residual=resid,
                jacobian_condition=float("inf"),
                is_real=bool(np.max(np.abs(center.imag), initial=0.0)
                             < cfg.real_tol),
                is_singular=True,
                multiplicity_hint=sum(solutions[i].multiplicity_hint
                                      for i in members),
            )
        )
    merged.sort(key=lambda s: _sort_key(s.vector))
    return merged


def solve_all(
    system: PolynomialSystem, cfg: TrackerConfig | None = None
) -> SolutionSet:
    """Find all isolated complex solutions of a bound square system.

    Tracks the full Bezout count of paths; raises
    :class:`PathBudgetExceeded` when that count passes ``cfg.path_budget``.
    """
    cfg = cfg or TrackerConfig()
    system.validate_structure()
    total = system.total_degree()
    start = make_start_system(system, cfg)
    if total > cfg.path_budget:
        raise PathBudgetExceeded(
            f"total degree {total} exceeds the path budget {cfg.path_budget}; "
            "use the parameter-homotopy sweep for families this large"
        )
    problem = total_degree_homotopy(system, start)

    def get_points(indices: np.ndarray) -> np.ndarray:
        out = np.empty((len(indices), system.n_variables), dtype=np.complex128)
        for row, idx in enumerate(indices):
            out[row] = start.point(int(idx))
        return out

    return _collect(system, problem, start.chunks(cfg.chunk_size), get_points,
                    cfg, kind="total-degree")


def track_solutions(
    system: PolynomialSystem,
    problem: HomotopyProblem,
    starts: np.ndarray,
    cfg: TrackerConfig | None = None,
    kind: str = "parameter",
) -> SolutionSet:
    """Track an explicit list of start points through ``problem``."""
    cfg = cfg or TrackerConfig()
    starts = np.atleast_2d(np.asarray(starts, dtype=np.complex128))

    def chunks():
        for i0 in range(0, starts.shape[0], cfg.chunk_size):
            yield starts[i0:i0 + cfg.chunk_size]

    def get_points(indices: np.ndarray) -> np.ndarray:
        return starts[indices]

    return _collect(system, problem, chunks(), get_points, cfg, kind=kind)


def polish_against(
    system: PolynomialSystem, points: np.ndarray,
    tol: float = 1e-12, maxit: int = 20,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Newton-polish points against a bound system.

    Returns (polished points, converged flags, residuals).
    """
    comp = system.compiled()
    C = system.bound_coefficients()
    pts = np.atleast_2d(np.asarray(points, dtype=np.complex128)).copy()
    ok = np.empty(pts.shape[0], dtype=np.int64)
    resid = np.empty(pts.shape[0], dtype=np.float64)
    kernels.polish_block(
        comp.term_vars, comp.term_exps, comp.term_len, comp.eq_ptr, C,
        pts, tol, maxit, comp.pwlen, ok, resid,
    )
    return pts, ok.astype(bool), resid


def classify_solutions(
    solset: SolutionSet, cfg: TrackerConfig | None = None
) -> SolutionSet:
    """Project near-real solutions onto the real axis and re-polish them.

    Real solutions come back with imaginary parts exactly zero; the
    partition is exposed through ``real_regular`` / ``real_singular`` /
    ``complex_solutions`` on the returned set.
    """
    cfg = cfg or (solset.provenance.config if solset.provenance else TrackerConfig())
    updated = []
    for sol in solset.solutions:
        if not sol.is_real:
            updated.append(sol)
            continue
        projected = sol.vector.real.astype(np.complex128)
        polished, ok, resid = polish_against(
            solset.system, projected[None, :], tol=cfg.newton_tol,
            maxit=cfg.max_newton_iters,
        )
        if ok[0] and np.max(np.abs(polished[0].imag), initial=0.0) < cfg.real_tol:
            vec = polished[0].real.astype(np.complex128)
            res = float(resid[0])
        else:
            vec = projected
            res = sol.residual
        try:
            cond = float(np.linalg.cond(solset.system.jacobian(vec)))
        except np.linalg.LinAlgError:  # pragma: no cover
            cond = float("inf")
        if not np.isfinite(cond):
            cond = float("inf")
        updated.append(
            Solution(
                vector=vec,
                residual=res,
                jacobian_condition=cond,
                is_real=True,
                is_singular=bool(cond > cfg.singular_cond_threshold)
                or sol.is_singular,
                multiplicity_hint=sol.multiplicity_hint,
            )
        )
    updated.sort(key=lambda s: _sort_key(s.vector))
    return replace(solset, solutions=tuple(updated))
