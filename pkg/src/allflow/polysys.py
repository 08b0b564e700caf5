"""Sparse multivariate polynomial systems with parameter-affine coefficients.

A :class:`PolynomialSystem` is a square system of polynomials over a
registered set of variables.  Each coefficient is affine in the declared
parameters: stored as a vector ``(c0, c1, ..., cP)`` meaning
``c0 + c1*lam_1 + ... + cP*lam_P``.  Binding parameter values produces
plain complex coefficients ready for the tracking kernels.

Affine parameter dependence is all the equilibrium systems need (the wind
penetration factor scales term groups linearly and the voltage setpoint
enters through its square), and it makes the straight-line parameter
homotopy between two bound instances exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import kernels

Exponents = tuple[int, ...]
# One equation: monomial exponent tuple -> affine coefficient vector (P+1,).
PolyDict = dict[Exponents, np.ndarray]


class PolynomialError(ValueError):
    """Structural problem with a polynomial system."""


class UnboundParameterError(PolynomialError):
    """Evaluation attempted while parameter slots carry no values."""


class NonAffineParameterError(PolynomialError):
    """An operation would create coefficients nonlinear in the parameters."""


def _czeros(width: int) -> np.ndarray:
    return np.zeros(width, dtype=np.complex128)


def poly_add(a: PolyDict, b: PolyDict) -> PolyDict:
    out: PolyDict = {k: v.copy() for k, v in a.items()}
    for k, v in b.items():
        if k in out:
            out[k] = out[k] + v
        else:
            out[k] = v.copy()
    return {k: v for k, v in out.items() if np.any(v != 0)}


def poly_scale(a: PolyDict, s: complex | np.ndarray, width: int) -> PolyDict:
    """Scale by a constant or by an affine coefficient vector."""
    if np.isscalar(s) or isinstance(s, complex):
        return {k: v * s for k, v in a.items() if np.any(v * s != 0)}
    s = np.asarray(s, dtype=np.complex128)
    out: PolyDict = {}
    for k, v in a.items():
        out[k] = _affine_mul(v, s)
    return {k: v for k, v in out.items() if np.any(v != 0)}


def _affine_mul(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Product of two affine coefficient vectors; must stay affine."""
    u_par = np.any(u[1:] != 0)
    v_par = np.any(v[1:] != 0)
    if u_par and v_par:
        raise NonAffineParameterError(
            "coefficient product is quadratic in the parameters"
        )
    if not v_par:
        return u * v[0]
    return v * u[0]


def poly_mul(a: PolyDict, b: PolyDict, width: int) -> PolyDict:
    out: PolyDict = {}
    for ka, va in a.items():
        for kb, vb in b.items():
            k = tuple(x + y for x, y in zip(ka, kb))
            c = _affine_mul(va, vb)
            if k in out:
                out[k] = out[k] + c
            else:
                out[k] = c
    return {k: v for k, v in out.items() if np.any(v != 0)}


def poly_conj(a: PolyDict) -> PolyDict:
    """Conjugate coefficients: equals conj of the value for real variables."""
    return {k: np.conj(v) for k, v in a.items()}


def poly_real(a: PolyDict, width: int) -> PolyDict:
    return poly_scale(poly_add(a, poly_conj(a)), 0.5, width)


def poly_imag(a: PolyDict, width: int) -> PolyDict:
    return poly_scale(poly_add(a, poly_scale(poly_conj(a), -1.0, width)),
                      -0.5j, width)


def poly_degree(a: PolyDict) -> int:
    return max((sum(k) for k in a), default=0)


@dataclass
class SystemBuilder:
    """Incremental construction of a :class:`PolynomialSystem`.

    Variables and parameters are registered by name; equations are either
    ``PolyDict`` objects built with the helpers above or plain term lists
    ``[(coeff, {var_name: exp, ...}), ...]`` where ``coeff`` is a complex
    constant or an ``(const, {param_name: slope})`` pair.
    """

    variables: list[str] = field(default_factory=list)
    parameters: list[str] = field(default_factory=list)
    _equations: list[PolyDict] = field(default_factory=list)

    def add_variable(self, name: str) -> int:
        if name in self.variables:
            raise PolynomialError(f"duplicate variable {name!r}")
        self.variables.append(name)
        return len(self.variables) - 1

    def add_parameter(self, name: str) -> int:
        if name in self.parameters:
            raise PolynomialError(f"duplicate parameter {name!r}")
        self.parameters.append(name)
        return len(self.parameters) - 1

    @property
    def width(self) -> int:
        return 1 + len(self.parameters)

    def const(self, value) -> PolyDict:
        n = len(self.variables)
        vec = _czeros(self.width)
        if isinstance(value, tuple):
            c0, slopes = value
            vec[0] = c0
            for pname, slope in slopes.items():
                vec[1 + self.parameters.index(pname)] = slope
        else:
            vec[0] = value
        return {tuple([0] * n): vec}

    def var(self, name: str) -> PolyDict:
        n = len(self.variables)
        idx = self.variables.index(name)
        exps = [0] * n
        exps[idx] = 1
        vec = _czeros(self.width)
        vec[0] = 1.0
        return {tuple(exps): vec}

    def add_equation(self, poly) -> None:
        if isinstance(poly, dict):
            self._equations.append(poly)
            return
        n = len(self.variables)
        out: PolyDict = {}
        for coeff, powers in poly:
            exps = [0] * n
            for vname, e in powers.items():
                exps[self.variables.index(vname)] += e
            vec = _czeros(self.width)
            if isinstance(coeff, tuple):
                c0, slopes = coeff
                vec[0] = c0
                for pname, slope in slopes.items():
                    vec[1 + self.parameters.index(pname)] = slope
            else:
                vec[0] = coeff
            key = tuple(exps)
            if key in out:
                out[key] = out[key] + vec
            else:
                out[key] = vec
        self._equations.append({k: v for k, v in out.items() if np.any(v != 0)})

    def build(self, bound: Mapping[str, complex] | None = None) -> "PolynomialSystem":
        sys = PolynomialSystem(
            variables=tuple(self.variables),
            parameters=tuple(self.parameters),
            equations=tuple(self._equations),
        )
        sys.validate_structure()
        if bound is not None:
            sys = sys.bind(**bound)
        return sys


@dataclass(frozen=True)
class CompiledSystem:
    """Flat-array form of a system, shared by evaluation and tracking."""

    exponents: np.ndarray        # (T, n) int64
    eq_ptr: np.ndarray           # (m+1,) int64
    coeff_affine: np.ndarray     # (T, P+1) complex128
    term_vars: np.ndarray
    term_exps: np.ndarray
    term_len: np.ndarray
    pwlen: int

    def bind(self, values: np.ndarray) -> np.ndarray:
        """Collapse affine coefficients at parameter values (len P)."""
        stack = np.concatenate(([1.0 + 0j], np.asarray(values, dtype=np.complex128)))
        return self.coeff_affine @ stack


@dataclass(frozen=True)
class PolynomialSystem:
    """Immutable square polynomial system with named variables/parameters.

    Evaluation and differentiation are pure and reentrant; instances can be
    shared across any number of concurrent path trackers.
    """

    variables: tuple[str, ...]
    parameters: tuple[str, ...] = ()
    equations: tuple[PolyDict, ...] = ()
    bound_values: tuple[complex, ...] | None = None

    def validate_structure(self) -> None:
        n = len(self.variables)
        if len(self.equations) != n:
            raise PolynomialError(
                f"system is not square: {len(self.equations)} equations, "
                f"{n} variables"
            )
        for i, eq in enumerate(self.equations):
            for exps, vec in eq.items():
                if len(exps) != n:
                    raise PolynomialError(f"equation {i}: bad exponent arity")
                if not np.all(np.isfinite(vec)):
                    raise PolynomialError(f"equation {i}: non-finite coefficient")

    @property
    def n_variables(self) -> int:
        return len(self.variables)

    @property
    def n_equations(self) -> int:
        return len(self.equations)

    def degrees(self) -> tuple[int, ...]:
        return tuple(poly_degree(eq) for eq in self.equations)

    def total_degree(self) -> int:
        prod = 1
        for d in self.degrees():
            prod *= max(d, 0)
        return prod

    def bind(self, **values: complex) -> "PolynomialSystem":
        unknown = set(values) - set(self.parameters)
        if unknown:
            raise PolynomialError(f"unknown parameters: {sorted(unknown)}")
        current = dict(zip(self.parameters, self.bound_values or ()))
        current.update(values)
        missing = [p for p in self.parameters if p not in current]
        if missing:
            raise PolynomialError(f"parameters left unbound: {missing}")
        return PolynomialSystem(
            variables=self.variables,
            parameters=self.parameters,
            equations=self.equations,
            bound_values=tuple(complex(current[p]) for p in self.parameters),
        )

    def unbind(self) -> "PolynomialSystem":
        return PolynomialSystem(self.variables, self.parameters, self.equations)

    # -- compiled form ----------------------------------------------------

    def compiled(self) -> CompiledSystem:
        cached = _compile_cache.get(id(self))
        if cached is not None and cached[0] is self:
            return cached[1]
        n = len(self.variables)
        width = 1 + len(self.parameters)
        rows = []
        coeffs = []
        eq_ptr = [0]
        for eq in self.equations:
            for exps in sorted(eq.keys(), reverse=True):
                rows.append(exps)
                coeffs.append(eq[exps])
            eq_ptr.append(len(rows))
        E = (
            np.array(rows, dtype=np.int64)
            if rows
            else np.zeros((0, n), dtype=np.int64)
        )
        C = (
            np.array(coeffs, dtype=np.complex128)
            if coeffs
            else np.zeros((0, width), dtype=np.complex128)
        )
        tv, te, tl, pwlen = kernels.compile_support(E)
        comp = CompiledSystem(
            exponents=E,
            eq_ptr=np.array(eq_ptr, dtype=np.int64),
            coeff_affine=C,
            term_vars=tv,
            term_exps=te,
            term_len=tl,
            pwlen=pwlen,
        )
        _compile_cache[id(self)] = (self, comp)
        return comp

    def bound_coefficients(
        self, values: Sequence[complex] | None = None
    ) -> np.ndarray:
        if values is None:
            if self.parameters and self.bound_values is None:
                raise UnboundParameterError(
                    f"parameters {self.parameters} are unbound"
                )
            values = self.bound_values or ()
        if len(values) != len(self.parameters):
            raise PolynomialError("parameter value count mismatch")
        return self.compiled().bind(np.asarray(values, dtype=np.complex128))

    # -- evaluation --------------------------------------------------------

    def residual(self, point: Sequence[complex]) -> np.ndarray:
        """Exact polynomial evaluation at ``point`` (equation order fixed)."""
        x = np.asarray(point, dtype=np.complex128)
        if x.shape != (self.n_variables,):
            raise PolynomialError(
                f"point has length {x.shape}, expected {self.n_variables}"
            )
        comp = self.compiled()
        C = self.bound_coefficients()
        out = np.empty(self.n_equations, dtype=np.complex128)
        kernels.eval_h(
            comp.term_vars, comp.term_exps, comp.term_len, comp.eq_ptr,
            C, C, 1.0, x, out,
        )
        return out

    def jacobian(self, point: Sequence[complex]) -> np.ndarray:
        """Exact partial derivatives of every equation at ``point``."""
        x = np.asarray(point, dtype=np.complex128)
        if x.shape != (self.n_variables,):
            raise PolynomialError(
                f"point has length {x.shape}, expected {self.n_variables}"
            )
        comp = self.compiled()
        C = self.bound_coefficients()
        H = np.empty(self.n_equations, dtype=np.complex128)
        J = np.empty((self.n_equations, self.n_variables), dtype=np.complex128)
        pw = np.empty(comp.pwlen, dtype=np.complex128)
        kernels.eval_h_jac(
            comp.term_vars, comp.term_exps, comp.term_len, comp.eq_ptr,
            C, C, 1.0, x, H, J, pw,
        )
        return J

    # -- debug dump ---------------------------------------------------------

    def dump(self) -> list[str]:
        """One line per equation, monomials as ``coeff * x1^a1 ... xn^an``.

        Bound systems print numeric coefficients; unbound systems print the
        affine form with parameter names.
        """
        lines = []
        lam = self.bound_values if self.parameters else ()

        def fmt(z: complex) -> str:
            # adding 0.0 folds IEEE negative zeros for stable text
            return f"{z.real + 0.0:.17g}{z.imag + 0.0:+.17g}j"

        for eq in self.equations:
            parts = []
            for exps in sorted(eq.keys(), reverse=True):
                vec = eq[exps]
                if lam is not None:
                    c = vec[0] + sum(
                        v * s for v, s in zip(lam, vec[1:])
                    )
                    cstr = f"({fmt(c)})"
                else:
                    pieces = []
                    if vec[0] != 0 or not np.any(vec[1:] != 0):
                        pieces.append(fmt(vec[0]))
                    for p, s in zip(self.parameters, vec[1:]):
                        if s != 0:
                            pieces.append(f"({fmt(s)})*{p}")
                    cstr = "(" + " + ".join(pieces) + ")"
                mono = " ".join(
                    f"x{i + 1}^{e}" for i, e in enumerate(exps) if e > 0
                )
                parts.append(f"{cstr} * {mono}" if mono else cstr)
            lines.append(" + ".join(parts) if parts else "0")
        return lines


_compile_cache: dict[int, tuple[PolynomialSystem, CompiledSystem]] = {}


# -- linear variable elimination -------------------------------------------


@dataclass(frozen=True)
class LinearRecovery:
    """Back-substitution data produced by :func:`eliminate_linear_variables`.

    ``entries`` lists (full-space variable index, defining polynomial) in
    elimination order; each polynomial references only variables that were
    still present when it was removed, so evaluating the list in reverse
    fills every eliminated slot.
    """

    n_full: int
    kept: tuple[int, ...]
    entries: tuple[tuple[int, PolyDict], ...]
    parameters: tuple[str, ...]

    def recover(
        self, reduced_points: np.ndarray, values: Sequence[complex] | None = None
    ) -> np.ndarray:
        """Lift reduced-space points (B, nr) to full-space points (B, nf)."""
        pts = np.atleast_2d(np.asarray(reduced_points, dtype=np.complex128))
        B = pts.shape[0]
        full = np.zeros((B, self.n_full), dtype=np.complex128)
        full[:, list(self.kept)] = pts
        lam = np.concatenate(
            (
                [1.0 + 0j],
                np.asarray(values if values is not None else [], dtype=np.complex128),
            )
        )
        for var, poly in reversed(self.entries):
            acc = np.zeros(B, dtype=np.complex128)
            for exps, vec in poly.items():
                c = vec @ lam
                term = np.full(B, c, dtype=np.complex128)
                for k, e in enumerate(exps):
                    if e:
                        term = term * full[:, k] ** e
                acc += term
            full[:, var] = acc
        return full


def eliminate_linear_variables(
    sys: PolynomialSystem,
) -> tuple[PolynomialSystem, LinearRecovery]:
    """Remove variables defined linearly by a single pivot equation.

    A variable ``v`` qualifies when some equation contains it only as a
    lone degree-one monomial with a parameter-free constant coefficient;
    that equation then defines ``v`` as a polynomial of the remaining
    variables and is dropped after substituting everywhere else.  The
    reduced system has the same solution set as the original, in bijection
    through :class:`LinearRecovery`, and a much smaller total degree when
    the input carries chains of defining equations.

    Substitutions that would make any coefficient nonlinear in the
    parameters are skipped, keeping the reduced family affine.
    """
    n = sys.n_variables
    width = 1 + len(sys.parameters)
    eqs: list[PolyDict | None] = [dict(e) for e in sys.equations]
    alive = [True] * n
    entries: list[tuple[int, PolyDict]] = []

    def lone_linear_pivot(eq: PolyDict, v: int) -> np.ndarray | None:
        key = tuple(1 if k == v else 0 for k in range(n))
        coeff = None
        for exps, vec in eq.items():
            if exps[v] == 0:
                continue
            if exps != key:
                return None
            coeff = vec
        if coeff is None:
            return None
        if np.any(coeff[1:] != 0) or coeff[0] == 0:
            return None
        return coeff

    changed = True
    while changed:
        changed = False
        for v in range(n):
            if not alive[v]:
                continue
            for ei, eq in enumerate(eqs):
                if eq is None:
                    continue
                coeff = lone_linear_pivot(eq, v)
                if coeff is None:
                    continue
                key = tuple(1 if k == v else 0 for k in range(n))
                expr: PolyDict = {
                    exps: -vec / coeff[0]
                    for exps, vec in eq.items()
                    if exps != key
                }
                try:
                    new_eqs = []
                    for oj, other in enumerate(eqs):
                        if other is None or oj == ei:
                            new_eqs.append(other)
                            continue
                        new_eqs.append(_substitute(other, v, expr, n, width))
                    new_eqs[ei] = None
                except NonAffineParameterError:
                    continue
                eqs = new_eqs
                alive[v] = False
                entries.append((v, expr))
                changed = True
                break
            if changed:
                break

    kept = tuple(k for k in range(n) if alive[k])
    keep_cols = list(kept)
    reduced_eqs = []
    for eq in eqs:
        if eq is None:
            continue
        reduced_eqs.append(
            {
                tuple(exps[k] for k in keep_cols): vec.copy()
                for exps, vec in eq.items()
            }
        )
    reduced = PolynomialSystem(
        variables=tuple(sys.variables[k] for k in kept),
        parameters=sys.parameters,
        equations=tuple(reduced_eqs),
        bound_values=sys.bound_values,
    )
    reduced.validate_structure()
    recovery = LinearRecovery(
        n_full=n, kept=kept, entries=tuple(entries), parameters=sys.parameters
    )
    return reduced, recovery


def _substitute(
    eq: PolyDict, v: int, expr: PolyDict, n: int, width: int
) -> PolyDict:
    """Replace every occurrence of variable ``v`` in ``eq`` by ``expr``."""
    out: PolyDict = {}
    for exps, vec in eq.items():
        e = exps[v]
        if e == 0:
            out[exps] = out.get(exps, _czeros(width)) + vec
            continue
        rest = tuple(0 if k == v else exps[k] for k in range(n))
        piece: PolyDict = {rest: vec.copy()}
        for _ in range(e):
            piece = poly_mul(piece, expr, width)
        for k2, v2 in piece.items():
            out[k2] = out.get(k2, _czeros(width)) + v2
    return {k: v for k, v in out.items() if np.any(v != 0)}
