"""Ground-truth oracles for the market equilibrium, independent of the convex
solver: exhaustive complementarity-pattern enumeration and an agent-level
best-response dynamic."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .demand import DemandClass
from .equilibrium import (EquilibriumError, EquilibriumSolution, _class_costs,
                          kkt_residuals)
from .model import NetworkInstance

ORACLE_MAX_AREAS = 3
ORACLE_MAX_CLASSES = 4
_LEAF_TOL = 1e-9


def _apply_block(tab, nrows, pivcols, eqs, n):
    """Add equations to the reduced-row-echelon tableau; None on contradiction.

    The tableau keeps each pivot column normalized and eliminated from every
    other row, so reducing a new equation is a single matvec against the
    current rows. Returns a fresh (tab, nrows, pivcols)."""
    tab = tab.copy()
    pivcols = pivcols.copy()
    for eq in eqs:
        row = eq.copy()
        if nrows:
            mult = row[pivcols[:nrows]]
            row -= mult @ tab[:nrows]
        body = np.abs(row[:n])
        lead = int(np.argmax(body))
        if body[lead] <= 1e-10:
            if abs(row[n]) > 1e-8 * (1.0 + abs(eq[n])):
                return None            # 0 = nonzero
            continue                   # redundant
        row /= row[lead]
        col = tab[:nrows, lead]
        if nrows:
            tab[:nrows] -= np.outer(col, row)
        tab[nrows] = row
        pivcols[nrows] = lead
        nrows += 1
    return tab, nrows, pivcols


def oracle_pattern_enumeration(
    instance: NetworkInstance,
    open_capacity: np.ndarray,
    prices_per_interval: np.ndarray,
    classes: list[DemandClass],
    lambdas: np.ndarray,
) -> EquilibriumSolution:
    """Enumerate every active/inactive pattern of the complementarity pairs,
    solving the linear system each pattern induces and keeping the consistent
    one. Exponential; refuses instances beyond 3 areas / 4 classes.

    The tree walks lot saturation pairs first, then per class its dummy/
    clearing pairs followed by its Wardrop support (all 2^J sign patterns of
    the per-area pairs, applied as one block). Subtrees whose accumulated
    equalities are inconsistent, or whose pinned values already violate a
    bound that holds at every equilibrium, are pruned wholesale -- each prune
    decides all patterns underneath at once, so the walk remains exhaustive.
    """
    J = instance.n_areas
    K = len(classes)
    if J > ORACLE_MAX_AREAS or K > ORACLE_MAX_CLASSES:
        raise ValueError(
            f"enumeration oracle limited to {ORACLE_MAX_AREAS} areas / "
            f"{ORACLE_MAX_CLASSES} classes (got {J}/{K})")
    r = np.maximum(np.asarray(open_capacity, dtype=float), 0.0)
    lambdas = np.asarray(lambdas, dtype=float)
    if K == 0:
        return EquilibriumSolution([], np.zeros((0, J + 1)), np.zeros(0),
                                   np.zeros(J), np.zeros(0), 0.0)

    a = np.array([cls.intercept for cls in classes])
    b = np.array([cls.slope for cls in classes])
    phi = _class_costs(instance, classes, prices_per_interval)

    n_rho, n_u = J, K
    n = n_rho + n_u + K * (J + 1)

    def u_i(k):
        return n_rho + k

    def h_i(k, j):
        return n_rho + n_u + k * (J + 1) + j

    def eq(pairs_ix, rhs):
        v = np.zeros(n + 1)
        for i, cval in pairs_ix:
            v[i] = cval
        v[n] = rhs
        return v

    def eq_unit(i, rhs):
        return eq([(i, 1.0)], rhs)

    u_cap = np.minimum(lambdas, a / b)
    h_ub = np.array([[min(a[k], r[j]) for j in range(J)] for k in range(K)])
    tol = 1e-7 * (1.0 + float(np.abs(phi).max(initial=0.0))
                  + float(np.abs(u_cap).max(initial=0.0)) + float(r.max(initial=0.0)))

    # Per-class alternatives for the dummy and clearing pairs, with the
    # disutility window each one admits: (equations, u_lo, u_hi, dummy_free).
    combos = []
    for k in range(K):
        clearing = eq([(h_i(k, jj), 1.0) for jj in range(J + 1)] + [(u_i(k), b[k])],
                      float(a[k]))
        hz0 = eq_unit(h_i(k, J), 0.0)
        u_lam = eq_unit(u_i(k), float(lambdas[k]))
        u_zero = eq_unit(u_i(k), 0.0)
        per_k = [([hz0, u_zero], 0.0, 0.0, False),
                 ([hz0, clearing], 0.0, u_cap[k], False),
                 ([u_lam, clearing], lambdas[k], lambdas[k], True)]
        if lambdas[k] <= tol:
            per_k.append(([u_lam, u_zero], 0.0, 0.0, True))
        combos.append(per_k)

    # Pinned-value upper bounds valid at every equilibrium.
    ub = np.full(n, np.inf)
    ub[n_rho: n_rho + n_u] = u_cap
    for k in range(K):
        ub[h_i(k, 0): h_i(k, J)] = h_ub[k]
        ub[h_i(k, J)] = a[k]
    hs = n_rho + n_u

    def signs_ok(tab, nrows, pivcols) -> bool:
        """Sound rejections from pinned values: bounds that hold at *every*
        equilibrium, so pruning on them never cuts a true solution."""
        body = np.abs(tab[:nrows, :n]) > 1e-10
        single = body.sum(axis=1) == 1
        if not np.any(single):
            return True
        cols = pivcols[:nrows][single]
        vals = tab[:nrows, n][single]
        if np.any(vals < -tol) or np.any(vals > ub[cols] + tol):
            return False
        # (8.1) y >= 0 wherever both rho_j and u_k are pinned.
        rho_sel = cols < n_rho
        u_sel = (cols >= n_rho) & (cols < hs)
        if np.any(rho_sel) and np.any(u_sel):
            y = (phi[np.ix_(cols[u_sel] - n_rho, cols[rho_sel])]
                 + vals[rho_sel][None, :] - vals[u_sel][:, None])
            if np.any(y < -tol):
                return False
        return True

    solutions = []
    nodes = 0

    def leaf_check(vec: np.ndarray) -> EquilibriumSolution | None:
        rho = vec[:n_rho]
        u = vec[n_rho: n_rho + n_u]
        h = vec[n_rho + n_u:].reshape(K, J + 1)
        cand = EquilibriumSolution(list(classes), h.copy(), u.copy(),
                                   rho.copy(), lambdas.copy(), 0.0)
        report = kkt_residuals(cand, instance, r, prices_per_interval)
        cand.residual = report.max_violation
        scale = 1.0 + float(a.max(initial=0.0)) * float((a / b).max(initial=0.0))
        if cand.residual <= _LEAF_TOL * scale:
            return cand
        return None

    def solve_tab(tab, nrows):
        if nrows == 0:
            return np.zeros(n)
        A = tab[:nrows, :n]
        bb = tab[:nrows, n]
        sol, *_ = np.linalg.lstsq(A, bb, rcond=None)
        if np.abs(A @ sol - bb).max(initial=0.0) > 1e-8 * (1.0 + np.abs(bb).max(initial=0.0)):
            return None
        return sol

    def class_level(k, level, tab, nrows, pivcols, rho_zero, saturated, pot):
        """Branch class k: dummy/clearing combination fused with its Wardrop
        support pattern, guarded by interval and coverage prunes (all sound:
        each condition holds at every equilibrium extending the pattern)."""
        nonlocal nodes
        for block0, u_lo0, u_hi0, dummy_free in combos[k]:
            for mask in range(1 << J):
                lo, hi = u_lo0, u_hi0
                cover = 0.0
                ok = True
                for j in range(J):
                    if mask >> j & 1:
                        # support lot: rho_j = u_k - phi >= 0
                        if phi[k, j] > lo:
                            lo = phi[k, j]
                        if rho_zero >> j & 1 and phi[k, j] < hi:
                            hi = phi[k, j]     # rho_j pinned 0: u = phi exactly
                        cover += h_ub[k, j]
                    elif rho_zero >> j & 1:
                        # unused lot with rho = 0: u <= phi
                        if phi[k, j] < hi:
                            hi = phi[k, j]
                if lo > hi + tol:
                    continue
                if not dummy_free:
                    # clearing with no dummy outlet: reachable flow must cover
                    # demand at the cheapest admissible disutility.
                    if cover < a[k] - b[k] * hi - tol:
                        continue
                # Saturated lots must remain fillable by undecided classes.
                pot2 = pot.copy()
                for j in range(J):
                    if not mask >> j & 1:
                        pot2[j] -= h_ub[k, j]
                for j in range(J):
                    if saturated >> j & 1 and pot2[j] < r[j] - tol:
                        ok = False
                        break
                if not ok:
                    continue
                block = list(block0)
                for j in range(J):
                    if mask >> j & 1:
                        block.append(eq([(j, 1.0), (u_i(k), -1.0)], -float(phi[k, j])))
                    else:
                        block.append(eq_unit(h_i(k, j), 0.0))
                nodes += 1
                if nodes > 2_000_000:
                    raise EquilibriumError("pattern enumeration exceeded its node budget")
                child = _apply_block(tab, nrows, pivcols, block, n)
                if child is not None and signs_ok(*child):
                    recurse(level + 1, *child, rho_zero, saturated, pot2)

    def recurse(level, tab, nrows, pivcols, rho_zero, saturated, pot):
        nonlocal nodes
        if level == J + K:
            vec = solve_tab(tab, nrows)
            if vec is not None:
                sol = leaf_check(vec)
                if sol is not None:
                    solutions.append(sol)
            return
        if level < J:
            j = level
            nodes += 1
            child = _apply_block(tab, nrows, pivcols, [eq_unit(j, 0.0)], n)
            if child is not None and signs_ok(*child):
                recurse(level + 1, *child, rho_zero | (1 << j), saturated, pot)
            if pot[j] >= r[j] - tol:
                inflow = eq([(h_i(k, j), 1.0) for k in range(K)], float(r[j]))
                child = _apply_block(tab, nrows, pivcols, [inflow], n)
                if child is not None and signs_ok(*child):
                    recurse(level + 1, *child, rho_zero, saturated | (1 << j), pot)
        else:
            class_level(level - J, level, tab, nrows, pivcols, rho_zero, saturated, pot)

    pot0 = h_ub.sum(axis=0)
    recurse(0, np.zeros((n + 1, n + 1)), 0, np.zeros(n + 1, dtype=np.int64), 0, 0, pot0)

    if not solutions:
        raise EquilibriumError("no complementarity pattern is consistent "
                               "(bug or infeasible state)")
    best = solutions[0]
    for other in solutions[1:]:
        if (np.abs(other.disutility - best.disutility).max(initial=0.0) > 1e-6
                or np.abs(other.class_totals - best.class_totals).max(initial=0.0) > 1e-6):
            raise EquilibriumError("enumeration found two equilibria with distinct "
                                   "(u, class totals); uniqueness violated")
    return best


@dataclass
class BestResponseResult:
    flows: np.ndarray           # per class x (areas + dummy), whole users
    spread: np.ndarray          # per class: max-min disutility across used lots
    converged: bool
    passes: int


def oracle_agent_best_response(
    instance: NetworkInstance,
    open_capacity: np.ndarray,
    prices_per_interval: np.ndarray,
    classes: list[DemandClass],
    lambdas: np.ndarray,
    max_passes: int = 400,
) -> BestResponseResult:
    """Discrete best-response dynamics: whole users repeatedly move to the
    cheapest area with open capacity (or the outside option, or stay home when
    everything beats their reservation) until no user can improve.

    An approximate Wardrop check; the per-class disutility spread across used
    areas is reported. Gauss-Seidel in fixed user order, capped at max_passes
    (the best iterate is returned when the cap trips).
    """
    J = instance.n_areas
    K = len(classes)
    r = np.floor(np.maximum(np.asarray(open_capacity, dtype=float), 0.0) + 1e-9).astype(int)
    phi = _class_costs(instance, classes, prices_per_interval) if K else np.zeros((0, J))
    lambdas = np.asarray(lambdas, dtype=float)

    users = []  # (class k, reservation)
    for k, cls in enumerate(classes):
        m = int(round(cls.intercept))
        for i in range(m):
            res = (cls.intercept - (i + 0.5)) / cls.slope
            users.append((k, res))

    OUT = J + 1  # position J is the dummy lot
    assign = np.full(len(users), OUT, dtype=int)
    load = np.zeros(J, dtype=int)

    def cost(k, res, j):
        if j < J:
            return phi[k, j]
        if j == J:
            return lambdas[k]
        return res

    converged = False
    passes = 0
    for _ in range(max_passes):
        passes += 1
        moved = False
        for ui, (k, res) in enumerate(users):
            cur = assign[ui]
            best_j, best_c = OUT, res
            for j in range(J):
                if load[j] < r[j] or cur == j:
                    cj = phi[k, j]
                    if cj < best_c - 1e-12:
                        best_c, best_j = cj, j
            if lambdas[k] < best_c - 1e-12:
                best_c, best_j = lambdas[k], J
            if best_j != cur:
                if cur < J:
                    load[cur] -= 1
                if best_j < J:
                    load[best_j] += 1
                assign[ui] = best_j
                moved = True
        if not moved:
            converged = True
            break

    flows = np.zeros((K, J + 1))
    for ui, (k, res) in enumerate(users):
        if assign[ui] <= J:
            flows[k, assign[ui]] += 1
    spread = np.zeros(K)
    for k in range(K):
        used = [phi[k, j] for j in range(J) if flows[k, j] > 0]
        if flows[k, J] > 0:
            used.append(lambdas[k])
        if len(used) >= 2:
            spread[k] = max(used) - min(used)
    return BestResponseResult(flows, spread, converged, passes)
