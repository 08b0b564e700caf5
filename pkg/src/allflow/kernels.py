"""Hot numeric kernels for polynomial evaluation and homotopy path tracking.

Everything here operates on flat arrays describing a square polynomial
homotopy

    H(x, t) = (1 - t) * C0 . mon(x) + t * C1 . mon(x)

where ``mon(x)`` is a shared list of monomials (one row per term) and
``C0``/``C1`` are the coefficient vectors of the start and target side.
A total-degree homotopy puts ``gamma_h * Q`` into ``C0``; a parameter
homotopy puts the family bound at the generic point into ``C0`` and the
family bound at the physical target into ``C1``.

The kernels are compiled with numba ``@njit`` by default.  Setting the
environment variable ``ALLFLOW_BACKEND=numpy`` before import selects a
pure numpy/Python fallback: the same functions run uncompiled, which is
slow for large path counts but has no compilation dependency and is handy
for debugging.  ``ALLFLOW_THREADS`` bounds the numba thread count used by
the parallel path-tracking block.

All kernels are deterministic: each path writes only to its own output
slot, so results do not depend on thread scheduling.
"""

from __future__ import annotations

import os

import numpy as np

# Path status codes shared with the homotopy module.
CONVERGED = 0
DIVERGED = 1
STALLED = 2

_requested = os.environ.get("ALLFLOW_BACKEND", "").strip().lower()
if _requested in ("", "auto"):
    try:
        import numba

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - exercised via subprocess test
        NUMBA_ENABLED = False
elif _requested == "numba":
    import numba

    NUMBA_ENABLED = True
elif _requested == "numpy":
    NUMBA_ENABLED = False
else:
    raise RuntimeError(
        f"unknown ALLFLOW_BACKEND={_requested!r}: expected 'numba' or 'numpy'"
    )

if NUMBA_ENABLED:
    from numba import njit, prange

    _threads = os.environ.get("ALLFLOW_THREADS", "").strip()
    if _threads:
        numba.set_num_threads(
            max(1, min(int(_threads), numba.config.NUMBA_NUM_THREADS))
        )
else:
    prange = range

    def njit(*args, **kwargs):  # noqa: D103 - decorator shim, numpy fallback
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


BACKEND = "numba" if NUMBA_ENABLED else "numpy"


@njit(cache=True)
def _cpow(z, e):
    out = 1.0 + 0.0j
    for _ in range(e):
        out *= z
    return out


@njit(cache=True)
def _inf_norm(v):
    m = 0.0
    for i in range(v.shape[0]):
        a = abs(v[i])
        if a > m:
            m = a
    return m


@njit(cache=True)
def eval_h(term_vars, term_exps, term_len, eq_ptr, C0, C1, t, x, out):
    """Evaluate H(x, t) into ``out`` (one entry per equation)."""
    m = eq_ptr.shape[0] - 1
    w0 = 1.0 - t
    for i in range(m):
        acc = 0.0 + 0.0j
        for j in range(eq_ptr[i], eq_ptr[i + 1]):
            prod = 1.0 + 0.0j
            for a in range(term_len[j]):
                prod *= _cpow(x[term_vars[j, a]], term_exps[j, a])
            acc += (w0 * C0[j] + t * C1[j]) * prod
        out[i] = acc


@njit(cache=True)
def eval_h_jac(term_vars, term_exps, term_len, eq_ptr, C0, C1, t, x, H, J, pw):
    """Evaluate H(x, t) and its Jacobian dH/dx simultaneously.

    ``pw`` is a scratch buffer at least as long as the widest term.
    """
    m = eq_ptr.shape[0] - 1
    n = x.shape[0]
    w0 = 1.0 - t
    for i in range(m):
        H[i] = 0.0 + 0.0j
        for k in range(n):
            J[i, k] = 0.0 + 0.0j
    for i in range(m):
        for j in range(eq_ptr[i], eq_ptr[i + 1]):
            c = w0 * C0[j] + t * C1[j]
            na = term_len[j]
            prod = 1.0 + 0.0j
            for a in range(na):
                pw[a] = _cpow(x[term_vars[j, a]], term_exps[j, a])
                prod *= pw[a]
            H[i] += c * prod
            for a in range(na):
                k = term_vars[j, a]
                e = term_exps[j, a]
                d = c * e * _cpow(x[k], e - 1)
                for b in range(na):
                    if b != a:
                        d *= pw[b]
                J[i, k] += d


@njit(cache=True)
def eval_dhdt(term_vars, term_exps, term_len, eq_ptr, C0, C1, x, out):
    """Evaluate dH/dt = (C1 - C0) . mon(x)."""
    m = eq_ptr.shape[0] - 1
    for i in range(m):
        acc = 0.0 + 0.0j
        for j in range(eq_ptr[i], eq_ptr[i + 1]):
            dc = C1[j] - C0[j]
            if dc != 0.0:
                prod = 1.0 + 0.0j
                for a in range(term_len[j]):
                    prod *= _cpow(x[term_vars[j, a]], term_exps[j, a])
                acc += dc * prod
        out[i] = acc


@njit(cache=True)
def _solve_inplace(A, b):
    """Gaussian elimination with partial pivoting; overwrites A and b.

    Returns False on a (numerically) singular or non-finite matrix instead
    of raising, so callers inside parallel loops can back off cleanly.
    """
    n = A.shape[0]
    for col in range(n):
        piv = col
        best = abs(A[col, col])
        for r in range(col + 1, n):
            a = abs(A[r, col])
            if a > best:
                best = a
                piv = r
        if best == 0.0 or not np.isfinite(best):
            return False
        if piv != col:
            for cc in range(col, n):
                tmp = A[col, cc]
                A[col, cc] = A[piv, cc]
                A[piv, cc] = tmp
            tmp = b[col]
            b[col] = b[piv]
            b[piv] = tmp
        inv = 1.0 / A[col, col]
        for r in range(col + 1, n):
            f = A[r, col] * inv
            if f != 0.0:
                for cc in range(col + 1, n):
                    A[r, cc] -= f * A[col, cc]
                b[r] -= f * b[col]
    for i in range(n - 1, -1, -1):
        acc = b[i]
        for cc in range(i + 1, n):
            acc -= A[i, cc] * b[cc]
        b[i] = acc / A[i, i]
    return True


@njit(cache=True)
def newton_at_t(
    term_vars, term_exps, term_len, eq_ptr, C0, C1, t, x, tol, maxit,
    scale_deg, max_disp, H, J, A, rhs, pw
):
    """Newton-correct ``x`` in place at fixed ``t``.

    Returns the number of iterations used on convergence, -1 on failure;
    the count feeds the step-size controller.

    With ``scale_deg > 0`` the tolerance is scaled by ||x||^scale_deg once
    the point leaves the unit ball: far out on a path the evaluation
    roundoff itself grows like that power, so an absolute test would lock
    up paths heading to infinity before they reach the divergence norm.

    ``max_disp > 0`` bounds the total correction displacement: a corrector
    is a local refinement, and a jump beyond the bound means the iteration
    left the tracked path's basin, so it is reported as a failure.
    """
    n = x.shape[0]
    disp = 0.0
    for it in range(maxit + 1):
        eval_h_jac(term_vars, term_exps, term_len, eq_ptr, C0, C1, t, x, H, J, pw)
        tol_eff = tol
        if scale_deg > 0:
            nx = _inf_norm(x)
            if nx > 1.0:
                tol_eff = tol * nx ** scale_deg
        if _inf_norm(H) < tol_eff:
            return it
        if it == maxit:
            return -1
        for r in range(n):
            rhs[r] = -H[r]
            for c in range(n):
                A[r, c] = J[r, c]
        if not _solve_inplace(A, rhs):
            return -1
        bad = False
        for r in range(n):
            x[r] += rhs[r]
            if not np.isfinite(x[r].real) or not np.isfinite(x[r].imag):
                bad = True
        if bad:
            return -1
        if max_disp > 0.0:
            disp += _inf_norm(rhs)
            if disp > max_disp:
                return -1
    return -1


@njit(cache=True)
def track_one(
    term_vars,
    term_exps,
    term_len,
    eq_ptr,
    C0,
    C1,
    x,
    newton_tol,
    max_newton,
    h0,
    hmin,
    hmax,
    divnorm,
    t_endgame,
    max_steps,
    scale_deg,
    H,
    J,
    A,
    rhs,
    xw,
    pw,
):
    """Track one homotopy path from t=0 to t=1.

    ``x`` holds the start point on entry and the endpoint on exit.
    Returns (status, steps, final_t, endpoint_residual).  The residual is
    the target-system residual at the endpoint, -1.0 when never evaluated.

    Euler prediction along dx/dt = -J^{-1} dH/dt, Newton correction at the
    advanced t.  The step halves on corrector failure, grows 1.5x after
    three consecutive fast corrections, shrinks when the corrector strains
    (a strained corrector is how paths jump onto neighbours), and is
    capped at hmax/10 past t_endgame.
    """
    n = x.shape[0]
    t = 0.0
    dt = h0
    streak = 0
    steps = 0
    while steps < max_steps:
        if _inf_norm(x) > divnorm:
            return DIVERGED, steps, t, -1.0
        if 1.0 - t <= 1e-15:
            t = 1.0
            break
        cap = hmax if t < t_endgame else hmax * 0.1
        if dt > cap:
            dt = cap
        final_step = dt >= 1.0 - t - 1e-15
        if final_step:
            dt = 1.0 - t
        # Euler predictor.
        eval_h_jac(term_vars, term_exps, term_len, eq_ptr, C0, C1, t, x, H, J, pw)
        eval_dhdt(term_vars, term_exps, term_len, eq_ptr, C0, C1, x, rhs)
        for r in range(n):
            rhs[r] = -rhs[r]
            for c in range(n):
                A[r, c] = J[r, c]
        ok = _solve_inplace(A, rhs)
        success = False
        if ok:
            for r in range(n):
                xw[r] = x[r] + rhs[r] * dt
            # The step landing exactly on t=1 must meet the absolute
            # tolerance: paths escaping to infinity never do, so they keep
            # shrinking the step and trip the divergence norm instead of
            # jumping into a finite basin.
            step_scale = 0 if final_step else scale_deg
            guard = 0.25 * (1.0 + _inf_norm(xw))
            iters = newton_at_t(
                term_vars, term_exps, term_len, eq_ptr, C0, C1,
                1.0 if final_step else t + dt, xw, newton_tol, max_newton,
                step_scale, guard, H, J, A, rhs, pw,
            )
            success = iters >= 0
        steps += 1
        if success:
            for r in range(n):
                x[r] = xw[r]
            t = 1.0 if final_step else t + dt
            if iters <= 3:
                streak += 1
                if streak >= 3:
                    dt *= 1.5
                    streak = 0
            else:
                dt *= 0.7
                streak = 0
        else:
            dt *= 0.5
            streak = 0
            if dt < hmin:
                return STALLED, steps, t, -1.0
    if t < 1.0:
        return STALLED, steps, t, -1.0
    # Extra polish against the target system, absolute tolerance.  A polish
    # is a refinement: if Newton walks off to a different basin, keep the
    # tracked endpoint instead.
    pre_norm = _inf_norm(x)
    for r in range(n):
        xw[r] = x[r]
    ok = newton_at_t(
        term_vars, term_exps, term_len, eq_ptr, C0, C1,
        1.0, x, newton_tol, 2 * max_newton, 0, -1.0, H, J, A, rhs, pw,
    ) >= 0
    disp = 0.0
    for r in range(n):
        d = abs(x[r] - xw[r])
        if d > disp:
            disp = d
    if disp > 0.1 * (1.0 + pre_norm):
        for r in range(n):
            x[r] = xw[r]
        ok = False
    if _inf_norm(x) > divnorm:
        return DIVERGED, steps, 1.0, -1.0
    eval_h(term_vars, term_exps, term_len, eq_ptr, C0, C1, 1.0, x, H)
    resid = _inf_norm(H)
    if ok and resid < newton_tol * 10.0:
        return CONVERGED, steps, 1.0, resid
    return STALLED, steps, 1.0, resid


@njit(cache=True, parallel=True)
def track_block(
    term_vars,
    term_exps,
    term_len,
    eq_ptr,
    C0,
    C1,
    starts,
    newton_tol,
    max_newton,
    h0,
    hmin,
    hmax,
    divnorm,
    t_endgame,
    max_steps,
    scale_deg,
    pwlen,
    out_x,
    out_status,
    out_steps,
    out_t,
    out_resid,
):
    """Track a block of paths in parallel; one output slot per path."""
    B = starts.shape[0]
    n = starts.shape[1]
    m = eq_ptr.shape[0] - 1
    for p in prange(B):
        H = np.empty(m, np.complex128)
        J = np.empty((m, n), np.complex128)
        A = np.empty((n, n), np.complex128)
        rhs = np.empty(n, np.complex128)
        xw = np.empty(n, np.complex128)
        pw = np.empty(pwlen, np.complex128)
        x = out_x[p]
        for i in range(n):
            x[i] = starts[p, i]
        status, steps, t, resid = track_one(
            term_vars, term_exps, term_len, eq_ptr, C0, C1, x,
            newton_tol, max_newton, h0, hmin, hmax, divnorm, t_endgame,
            max_steps, scale_deg, H, J, A, rhs, xw, pw,
        )
        out_status[p] = status
        out_steps[p] = steps
        out_t[p] = t
        out_resid[p] = resid


@njit(cache=True)
def polish_block(
    term_vars, term_exps, term_len, eq_ptr, C, points, tol, maxit, pwlen,
    out_ok, out_resid,
):
    """Newton-polish points against a single bound system, in place."""
    B = points.shape[0]
    n = points.shape[1]
    m = eq_ptr.shape[0] - 1
    H = np.empty(m, np.complex128)
    J = np.empty((m, n), np.complex128)
    A = np.empty((n, n), np.complex128)
    rhs = np.empty(n, np.complex128)
    pw = np.empty(pwlen, np.complex128)
    for p in range(B):
        x = points[p]
        ok = newton_at_t(
            term_vars, term_exps, term_len, eq_ptr, C, C, 1.0, x, tol, maxit,
            0, -1.0, H, J, A, rhs, pw,
        ) >= 0
        eval_h(term_vars, term_exps, term_len, eq_ptr, C, C, 1.0, x, H)
        out_ok[p] = 1 if ok else 0
        out_resid[p] = _inf_norm(H)


def compile_support(exponents: np.ndarray):
    """Compact a dense exponent matrix into per-term (variable, power) lists.

    Returns (term_vars, term_exps, term_len, pwlen) where pwlen is the
    widest term, used to size the scratch buffer for the kernels.
    """
    E = np.asarray(exponents, dtype=np.int64)
    T, _ = E.shape
    lens = (E > 0).sum(axis=1).astype(np.int64)
    width = max(1, int(lens.max()) if T else 1)
    tv = np.zeros((T, width), dtype=np.int64)
    te = np.zeros((T, width), dtype=np.int64)
    for j in range(T):
        a = 0
        for k in np.nonzero(E[j])[0]:
            tv[j, a] = k
            te[j, a] = E[j, k]
            a += 1
    return tv, te, lens, width


def warm_up():
    """Trigger JIT compilation of the tracking kernels on a tiny problem.

    No-op work, but keeps compilation latency out of timed sections.
    """
    # x^2 - 2 deformed from gamma_h * (x^2 - 1): two terms per side.
    E = np.array([[2], [0], [2], [0]], dtype=np.int64)
    tv, te, tl, pwlen = compile_support(E)
    eq_ptr = np.array([0, 4], dtype=np.int64)
    C0 = np.array([0.8 + 0.6j, -0.8 - 0.6j, 0, 0], dtype=np.complex128)
    C1 = np.array([0, 0, 1.0, -2.0], dtype=np.complex128)
    starts = np.array([[1.0 + 0j], [-1.0 + 0j]], dtype=np.complex128)
    out_x = np.empty_like(starts)
    out_status = np.empty(2, dtype=np.int64)
    out_steps = np.empty(2, dtype=np.int64)
    out_t = np.empty(2, dtype=np.float64)
    out_resid = np.empty(2, dtype=np.float64)
    track_block(
        tv, te, tl, eq_ptr, C0, C1, starts,
        1e-10, 10, 0.01, 1e-14, 0.1, 1e8, 0.9, 10000, 2, pwlen,
        out_x, out_status, out_steps, out_t, out_resid,
    )
    ok = np.empty(2, dtype=np.int64)
    resid = np.empty(2, dtype=np.float64)
    polish_block(tv, te, tl, eq_ptr, C1, out_x, 1e-12, 20, pwlen, ok, resid)
    return out_x
