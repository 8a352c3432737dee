"""Dense active-set solver for convex quadratic programs with diagonal Hessian.

    minimize   1/2 x' diag(D) x + c' x
    subject to A_eq x = b_eq,  A_ub x <= b_ub,  lb <= x <= ub

Every Hessian in this package is diagonal and non-negative (the only quadratic
terms are per-class u^2 / volume^2 blocks), which the step computation
exploits: free variables split into curved (D > 0) and linear ones, and each
equality-constrained subproblem reduces to a small symmetric system in the
working-row multipliers and the linear variables. Zero-curvature descent rays
are followed to the nearest blocking constraint, so plain LPs (D = 0) work
unchanged. Feasibility is restored by an elastic phase-1 run of the same loop.

Determinism: ties break by lowest index everywhere; after a run of degenerate
(zero-length) steps the drop rule switches to Bland's lowest-index rule until
progress resumes, which prevents cycling in practice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FREE, AT_LB, AT_UB, PINNED = 0, -1, 1, 2


@dataclass
class QpSettings:
    feas_tol: float = 1e-9
    opt_tol: float = 1e-9
    step_tol: float = 1e-11
    max_iter: int = 0            # 0 -> automatic from problem size
    bland_after: int = 40        # consecutive zero steps before Bland's rule


@dataclass
class QpResult:
    status: str                  # optimal | infeasible | iteration_limit | unbounded
    x: np.ndarray
    objective: float
    row_duals: np.ndarray        # one per stacked row (equalities first)
    iterations: int
    max_violation: float
    certificate_row: int | None = None
    fixed: np.ndarray | None = None        # warm-start state
    active: np.ndarray | None = None
    dual_infeasibility: float = 0.0


class _Work:
    def __init__(self, D, c, A, b, is_eq, lb, ub, x, fixed, active, settings):
        self.D, self.c, self.A, self.b = D, c, A, b
        self.is_eq, self.lb, self.ub = is_eq, lb, ub
        self.x, self.fixed, self.active = x, fixed, active
        self.st = settings
        self.n = len(c)
        self.m = len(b)
        self.zero_steps = 0
        self.iterations = 0


def _descent_ray(Al, gL, tol):
    """Direction in null(A_L) with negative objective slope, or None."""
    if Al.shape[1] == 0:
        return None
    if Al.shape[0] == 0:
        null = np.eye(Al.shape[1])
    else:
        _, s, vt = np.linalg.svd(Al, full_matrices=True)
        rank = int(np.sum(s > max(Al.shape) * (s[0] if s.size else 0.0) * 1e-13))
        null = vt[rank:].T
    if null.shape[1] == 0:
        return None
    slopes = gL @ null
    k = int(np.argmax(np.abs(slopes)))
    if abs(slopes[k]) <= tol * (1.0 + np.abs(gL).max(initial=0.0)):
        return None
    return -null[:, k] if slopes[k] > 0 else null[:, k]


def _eqp_step(w: _Work):
    """Step direction on the working set.

    Returns (p, rows, nu, is_ray): p over all variables, nu the multipliers of
    the working rows (order matching `rows`), is_ray flags an unbounded
    zero-curvature descent direction (p is then a ray, not a step to a point).
    """
    free = np.flatnonzero(w.fixed == FREE)
    rows = np.flatnonzero(w.active)
    g = w.D * w.x + w.c
    p = np.zeros(w.n)
    if free.size == 0:
        return p, rows, np.zeros(rows.size), False

    Df = w.D[free]
    curved = Df > 0.0
    P = free[curved]
    L = free[~curved]
    Ar = w.A[np.ix_(rows, free)] if rows.size else np.zeros((0, free.size))
    Ap = Ar[:, curved]
    Al = Ar[:, ~curved]
    gP = g[P]
    gL = g[L]
    invD = 1.0 / w.D[P] if P.size else np.zeros(0)

    nr, nl = rows.size, L.size
    # Symmetric indefinite system in (nu, p_L); p_P follows by elimination.
    K = np.zeros((nr + nl, nr + nl))
    rhs = np.zeros(nr + nl)
    if P.size and nr:
        K[:nr, :nr] = (Ap * invD) @ Ap.T
        rhs[:nr] = -(Ap * invD) @ gP
    K[:nr, nr:] = -Al
    K[nr:, :nr] = -Al.T
    rhs[nr:] = gL

    sol = None
    if nr + nl:
        try:
            cand = np.linalg.solve(K, rhs)
            if np.all(np.isfinite(cand)) and (
                np.abs(K @ cand - rhs).max(initial=0.0)
                <= 1e-7 * (1.0 + np.abs(rhs).max(initial=0.0))
            ):
                sol = cand
        except np.linalg.LinAlgError:
            sol = None
        if sol is None:
            # Singular working set: consistent -> min-norm stationary point;
            # inconsistent -> a zero-curvature descent ray exists in null(A_L).
            cand, *_ = np.linalg.lstsq(K, rhs, rcond=None)
            if (np.abs(K @ cand - rhs).max(initial=0.0)
                    > 1e-7 * (1.0 + np.abs(rhs).max(initial=0.0))):
                ray = _descent_ray(Al, gL, w.st.opt_tol)
                if ray is not None:
                    p[L] = ray
                    return p, rows, np.zeros(rows.size), True
            sol = cand
    else:
        sol = rhs

    nu = sol[:nr]
    if P.size:
        p[P] = -invD * (gP + (Ap.T @ nu if nr else 0.0))
    p[L] = sol[nr:]
    return p, rows, nu, False


def _ratio_test(w: _Work, p):
    """Largest feasible step along p; returns (alpha_max, kind, index) where
    kind in {'row', 'lb', 'ub'} or (inf, None, -1) when nothing blocks."""
    st = w.st
    best = np.inf
    kind, idx = None, -1

    if w.m:
        ap = w.A @ p
        cand = (~w.active) & (~w.is_eq) & (ap > st.step_tol)
        if np.any(cand):
            slack = np.maximum(0.0, w.b[cand] - w.A[cand] @ w.x)
            ratios = slack / ap[cand]
            k = int(np.argmin(ratios))
            best = float(ratios[k])
            kind, idx = "row", int(np.flatnonzero(cand)[k])

    free = w.fixed == FREE
    up = free & (p > st.step_tol) & np.isfinite(w.ub)
    if np.any(up):
        ratios = np.maximum(0.0, w.ub[up] - w.x[up]) / p[up]
        k = int(np.argmin(ratios))
        if ratios[k] < best - st.step_tol:
            best = float(ratios[k])
            kind, idx = "ub", int(np.flatnonzero(up)[k])
    dn = free & (p < -st.step_tol) & np.isfinite(w.lb)
    if np.any(dn):
        ratios = np.maximum(0.0, w.x[dn] - w.lb[dn]) / (-p[dn])
        k = int(np.argmin(ratios))
        if ratios[k] < best - st.step_tol:
            best = float(ratios[k])
            kind, idx = "lb", int(np.flatnonzero(dn)[k])
    return best, kind, idx


def _prune_dependent_ineq(w: _Work):
    """After a variable is fixed, drop active inequality rows that became
    linearly dependent (restricted to the free variables) on the equalities
    and earlier-indexed active rows; keeps inequality multipliers unique."""
    rows = np.flatnonzero(w.active)
    ineq = [i for i in rows if not w.is_eq[i]]
    if not ineq:
        return
    free = np.flatnonzero(w.fixed == FREE)
    basis = [i for i in rows if w.is_eq[i]]
    sub = w.A[np.ix_(basis, free)] if basis else np.zeros((0, free.size))
    scale = max(1.0, np.abs(w.A[np.ix_(rows, free)]).max(initial=0.0))
    rank = np.linalg.matrix_rank(sub, tol=1e-11 * scale) if basis else 0
    kept = list(basis)
    for i in ineq:
        trial = w.A[np.ix_(kept + [i], free)]
        r2 = np.linalg.matrix_rank(trial, tol=1e-11 * scale)
        if r2 > rank:
            kept.append(i)
            rank = r2
        else:
            w.active[i] = False


def _drop_candidate(w: _Work, rows, nu, g):
    """Most-violating multiplier among active inequalities and fixed bounds,
    or None when all satisfy the sign conditions. Bland's rule after a
    degeneracy streak."""
    st = w.st
    thresh = -st.opt_tol * (1.0 + np.abs(g).max(initial=0.0))
    bland = w.zero_steps >= st.bland_after
    r = g + (w.A[rows].T @ nu if rows.size else 0.0)

    cands = []  # (value, order_key, kind, index)
    for pos, i in enumerate(rows):
        if not w.is_eq[i] and nu[pos] < thresh:
            cands.append((nu[pos], (0, int(i)), "row", int(i)))
    at_lb = np.flatnonzero(w.fixed == AT_LB)
    for j in at_lb[r[at_lb] < thresh]:
        cands.append((r[j], (1, int(j)), "lb", int(j)))
    at_ub = np.flatnonzero(w.fixed == AT_UB)
    for j in at_ub[-r[at_ub] < thresh]:
        cands.append((-r[j], (1, int(j)), "ub", int(j)))
    if not cands:
        return None
    if bland:
        return min(cands, key=lambda t: t[1])
    return min(cands, key=lambda t: (t[0], t[1]))


def _active_set_loop(w: _Work):
    """Core primal active-set iteration; w.x must be feasible on entry."""
    st = w.st
    max_iter = st.max_iter or (200 + 12 * (w.n + w.m))
    while True:
        w.iterations += 1
        if w.iterations > max_iter:
            return "iteration_limit", np.zeros(0, dtype=int), np.zeros(0)
        p, rows, nu, is_ray = _eqp_step(w)

        if not is_ray and np.abs(p).max(initial=0.0) <= st.step_tol * (
            1.0 + np.abs(w.x).max(initial=0.0)
        ):
            g = w.D * w.x + w.c
            cand = _drop_candidate(w, rows, nu, g)
            if cand is None:
                return "optimal", rows, nu
            _, _, kind, idx = cand
            if kind == "row":
                w.active[idx] = False
            else:
                w.fixed[idx] = FREE
            w.zero_steps += 1
            continue

        alpha_max, kind, idx = _ratio_test(w, p)
        natural = np.inf if is_ray else 1.0
        if alpha_max < natural:
            alpha = alpha_max
            blocked = True
        else:
            if is_ray:
                return "unbounded", rows, nu
            alpha = 1.0
            blocked = False
        if alpha > st.step_tol:
            w.x = w.x + alpha * p
            w.zero_steps = 0
        else:
            w.zero_steps += 1
        if blocked:
            if kind == "row":
                w.active[idx] = True
            elif kind == "ub":
                w.fixed[idx] = AT_UB
                w.x[idx] = w.ub[idx]
                _prune_dependent_ineq(w)
            elif kind == "lb":
                w.fixed[idx] = AT_LB
                w.x[idx] = w.lb[idx]
                _prune_dependent_ineq(w)


def _violations(A, b, is_eq, x, lb, ub):
    resid = A @ x - b if len(b) else np.zeros(0)
    row_viol = np.where(is_eq, np.abs(resid), np.maximum(0.0, resid))
    bound_viol = np.maximum(np.maximum(lb - x, x - ub), 0.0)
    bound_viol[~np.isfinite(bound_viol)] = 0.0
    return row_viol, float(max(row_viol.max(initial=0.0), bound_viol.max(initial=0.0)))


def solve_qp(
    D: np.ndarray,
    c: np.ndarray,
    A_eq: np.ndarray | None,
    b_eq: np.ndarray | None,
    A_ub: np.ndarray | None,
    b_ub: np.ndarray | None,
    lb: np.ndarray,
    ub: np.ndarray,
    x0: np.ndarray | None = None,
    warm: tuple | None = None,
    settings: QpSettings | None = None,
) -> QpResult:
    """Two-phase dense active-set solve.

    `warm` is (fixed, active) from a prior result on an identically shaped
    problem. x0 is clipped into the bounds and repaired through an elastic
    phase-1 program when it violates rows. Row duals satisfy
    g + A' lambda = 0 with lambda >= 0 on <= rows (equality duals free).
    """
    st = settings or QpSettings()
    D = np.asarray(D, dtype=float)
    c = np.asarray(c, dtype=float)
    n = len(c)
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    if np.any(D < -1e-12):
        raise ValueError("Hessian diagonal must be non-negative (convex QP only)")

    Ae = np.zeros((0, n)) if A_eq is None or len(A_eq) == 0 else np.asarray(A_eq, dtype=float)
    be = (np.zeros(0) if b_eq is None or len(np.atleast_1d(b_eq)) == 0
          else np.asarray(b_eq, dtype=float).ravel())
    Au = np.zeros((0, n)) if A_ub is None or len(A_ub) == 0 else np.asarray(A_ub, dtype=float)
    bu = (np.zeros(0) if b_ub is None or len(np.atleast_1d(b_ub)) == 0
          else np.asarray(b_ub, dtype=float).ravel())
    A = np.vstack([Ae, Au])
    b = np.concatenate([be, bu])
    is_eq = np.concatenate([np.ones(len(be), dtype=bool), np.zeros(len(bu), dtype=bool)])
    m = len(b)

    if np.any(lb > ub + 1e-12):
        j = int(np.argmax(lb - ub))
        return QpResult("infeasible", np.zeros(n), np.inf, np.zeros(m), 0, np.inf,
                        certificate_row=None, dual_infeasibility=np.inf,
                        fixed=np.full(n, FREE, dtype=np.int8), active=np.zeros(m, dtype=bool))

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    x = np.clip(x, lb, ub)
    pinned = lb == ub

    fixed = np.full(n, FREE, dtype=np.int8)
    active = np.zeros(m, dtype=bool)
    if (warm is not None and warm[0] is not None and len(warm[0]) == n
            and warm[1] is not None and len(warm[1]) == m):
        fixed = np.asarray(warm[0], dtype=np.int8).copy()
        active = np.asarray(warm[1], dtype=bool).copy()
    else:
        fixed[(x <= lb + 1e-12) & np.isfinite(lb)] = AT_LB
        fixed[(x >= ub - 1e-12) & np.isfinite(ub)] = AT_UB
    active[is_eq] = True
    # Sync bound states with the actual point.
    for state, bound in ((AT_LB, lb), (AT_UB, ub)):
        sel = fixed == state
        bad = sel & ~np.isfinite(bound)
        fixed[bad] = FREE
        good = sel & np.isfinite(bound)
        x[good] = bound[good]
    fixed[pinned] = PINNED
    x[pinned] = lb[pinned]

    row_viol, maxv = _violations(A, b, is_eq, x, lb, ub)
    iters_total = 0
    scale_b = 1.0 + np.abs(b[np.isfinite(b)]).max(initial=0.0)
    if maxv > st.feas_tol * scale_b:
        x, fixed, active, feas, iters, cert = _phase1(
            A, b, is_eq, lb, ub, x, fixed, active, st, row_viol)
        iters_total += iters
        if feas != "feasible":
            return QpResult("infeasible", x, np.inf, np.zeros(m), iters_total,
                            _violations(A, b, is_eq, x, lb, ub)[1],
                            certificate_row=cert,
                            fixed=fixed.copy(), active=active.copy())

    w = _Work(D, c, A, b, is_eq, lb, ub, x, fixed, active, st)
    status, rows, nu = _active_set_loop(w)
    iters_total += w.iterations

    row_duals = np.zeros(m)
    if rows.size and nu.size == rows.size:
        row_duals[rows] = nu
    _, maxv = _violations(A, b, is_eq, w.x, lb, ub)
    obj = float(0.5 * w.x @ (D * w.x) + c @ w.x)
    dual_resid = 0.0
    if status == "optimal":
        g = D * w.x + c
        r = g + (A.T @ row_duals if m else 0.0)
        freev = w.fixed == FREE
        if np.any(freev):
            dual_resid = float(np.abs(r[freev]).max(initial=0.0))
    return QpResult(status, w.x, obj, row_duals, iters_total, maxv,
                    fixed=w.fixed.copy(), active=w.active.copy(),
                    dual_infeasibility=dual_resid)


def _phase1(A, b, is_eq, lb, ub, x, fixed, active, st, row_viol):
    """Elastic feasibility restoration: one slack per violated row, driven to
    zero with the same active-set loop (a pure LP)."""
    n = A.shape[1]
    m = len(b)
    scale_b = 1.0 + np.abs(b[np.isfinite(b)]).max(initial=0.0)
    bad = np.flatnonzero(row_viol > st.feas_tol * scale_b)
    k = len(bad)
    A1 = np.hstack([A, np.zeros((m, k))])
    resid = A @ x - b
    for pos, i in enumerate(bad):
        A1[i, n + pos] = 1.0 if (is_eq[i] and resid[i] < 0) else -1.0
    x1 = np.concatenate([x, np.abs(resid[bad])])
    lb1 = np.concatenate([lb, np.zeros(k)])
    ub1 = np.concatenate([ub, np.full(k, np.inf)])
    c1 = np.concatenate([np.zeros(n), np.ones(k)])
    fixed1 = np.concatenate([fixed, np.full(k, FREE, dtype=np.int8)])
    active1 = np.zeros(m, dtype=bool)
    active1[is_eq] = True
    w = _Work(np.zeros(n + k), c1, A1, b, is_eq, lb1, ub1, x1, fixed1, active1, st)
    _active_set_loop(w)
    total = float(c1 @ w.x)
    if total > 10 * st.feas_tol * scale_b * max(1, k):
        s = w.x[n:]
        cert = int(bad[int(np.argmax(s))]) if k else None
        return w.x[:n], w.fixed[:n], w.active, "infeasible", w.iterations, cert
    return (np.clip(w.x[:n], lb, ub), w.fixed[:n], w.active, "feasible",
            w.iterations, None)
