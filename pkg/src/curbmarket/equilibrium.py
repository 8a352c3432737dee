"""Lower-level parking market equilibrium.

Given per-interval prices and the open capacity of each area, the users'
collective choice satisfies four complementarity families: Wardrop conditions
on real areas and on the outside option, capacity/shadow-price complementarity,
and market clearing against the linear demand curves. The solver minimizes the
equivalent convex program

    sum_k sum_j phi_{jk} h_{jk} + sum_k lambda_k h_{zeta,k}
        - sum_k integral_0^{X_k} H_k^{-1}(s) ds,
    s.t. per-area capacity, X_k = total flow of class k, h >= 0,

whose first-order conditions are exactly those four families; the result is
always re-verified through kkt_residuals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .demand import DemandClass, access_costs
from .model import NetworkInstance, SystemState, available_capacity
from .qp import QpResult, QpSettings, solve_qp

FEAS_TOL = 1e-9
COMP_TOL = 1e-8


class EquilibriumError(RuntimeError):
    """Solver failed to reach an equilibrium within tolerance."""

    def __init__(self, message: str, residual: float = float("nan")):
        self.residual = residual
        super().__init__(message)


@dataclass
class ResidualReport:
    """Worst violations per complementarity family.

    Each entry is (negativity of x, negativity/infeasibility of y, |x*y|).
    A zero report is exactly an equilibrium.
    """

    wardrop_real: tuple[float, float, float]
    wardrop_dummy: tuple[float, float, float]
    capacity: tuple[float, float, float]
    clearing: tuple[float, float, float]

    @property
    def max_violation(self) -> float:
        return max(max(t) for t in
                   (self.wardrop_real, self.wardrop_dummy, self.capacity, self.clearing))

    def families(self) -> dict:
        return {"8.1": self.wardrop_real, "8.2": self.wardrop_dummy,
                "8.3": self.capacity, "8.4": self.clearing}


@dataclass
class EquilibriumSolution:
    """Flows h[k, j] (last column = dummy lot), per-class disutilities u,
    per-area shadow prices rho, and the posterior residual."""

    classes: list[DemandClass]
    flows: np.ndarray
    disutility: np.ndarray
    shadow_price: np.ndarray
    lambdas: np.ndarray
    residual: float
    qp: QpResult | None = field(default=None, repr=False)

    @property
    def class_totals(self) -> np.ndarray:
        return self.flows.sum(axis=1)

    @property
    def inflow(self) -> np.ndarray:
        """Total vehicles entering each real area."""
        return self.flows[:, :-1].sum(axis=0) if len(self.classes) else self.flows.sum(axis=0)[:-1]

    def arrivals_by_duration(self, instance: NetworkInstance) -> np.ndarray:
        """q[j, n_index]: inflow split by parking duration."""
        q = np.zeros((instance.n_areas, len(instance.durations)))
        n_idx = {n: i for i, n in enumerate(instance.durations)}
        for k, cls in enumerate(self.classes):
            q[:, n_idx[cls.duration_n]] += self.flows[k, :-1]
        return q


def _class_costs(instance: NetworkInstance, classes, prices_per_interval):
    """phi[k, j] = n*p_j + access cost, for real areas."""
    p = np.asarray(prices_per_interval, dtype=float)
    return np.array([cls.duration_n * p + access_costs(cls, instance) for cls in classes])


def solve_market(
    instance: NetworkInstance,
    open_capacity: np.ndarray,
    prices_per_interval: np.ndarray,
    classes: list[DemandClass],
    lambdas: np.ndarray,
    warm: EquilibriumSolution | None = None,
    settings: QpSettings | None = None,
) -> EquilibriumSolution:
    """Equilibrium at given prices against explicit open capacity r_j.

    `warm` re-uses a previous solution on the same class structure (the usual
    case when probing nearby price vectors).
    """
    J = instance.n_areas
    K = len(classes)
    r = np.asarray(open_capacity, dtype=float).copy()
    if np.any(r < -FEAS_TOL * np.maximum(1.0, instance.capacities)):
        j = int(np.argmin(r))
        raise EquilibriumError(
            f"negative available capacity at area {instance.areas[j].id}: {r[j]:.6g}")
    r = np.maximum(r, 0.0)
    lambdas = np.asarray(lambdas, dtype=float)
    if len(lambdas) != K:
        raise ValueError("one dummy disutility per class required")

    if K == 0:
        sol = EquilibriumSolution([], np.zeros((0, J + 1)), np.zeros(0),
                                  np.zeros(J), np.zeros(0), 0.0)
        return sol

    a = np.array([cls.intercept for cls in classes])
    b = np.array([cls.slope for cls in classes])
    u_max = a / b
    phi = _class_costs(instance, classes, prices_per_interval)

    nh = K * (J + 1)
    n = nh + K
    D = np.zeros(n)
    D[nh:] = 1.0 / b
    c = np.zeros(n)
    for k in range(K):
        c[k * (J + 1): k * (J + 1) + J] = phi[k]
        c[k * (J + 1) + J] = lambdas[k]
    c[nh:] = -u_max

    A_eq = np.zeros((K, n))
    for k in range(K):
        A_eq[k, k * (J + 1): (k + 1) * (J + 1)] = -1.0
        A_eq[k, nh + k] = 1.0
    b_eq = np.zeros(K)
    A_ub = np.zeros((J, n))
    for j in range(J):
        A_ub[j, j: nh: J + 1] = 1.0
    b_ub = r

    # Flows are capped by the intercept only; capacity must stay a row so its
    # dual is the shadow price (a bound would swallow it).
    lb = np.zeros(n)
    ub = np.empty(n)
    for k in range(K):
        ub[k * (J + 1): (k + 1) * (J + 1)] = a[k]
    ub[nh:] = a

    x0 = None
    warm_sets = None
    if warm is not None and warm.qp is not None and len(warm.classes) == K:
        x0 = warm.qp.x
        warm_sets = (warm.qp.fixed, warm.qp.active)

    res = solve_qp(D, c, A_eq, b_eq, A_ub, b_ub, lb, ub,
                   x0=x0, warm=warm_sets, settings=settings)
    if res.status != "optimal":
        raise EquilibriumError(
            f"equilibrium solve ended with status {res.status}", residual=res.max_violation)

    h = res.x[:nh].reshape(K, J + 1).copy()
    X = res.x[nh:]
    h[np.abs(h) < 1e-11] = 0.0
    u = np.clip((a - X) / b, 0.0, u_max)
    rho = np.maximum(res.row_duals[K: K + J], 0.0)
    rho[rho < 1e-11] = 0.0

    sol = EquilibriumSolution(list(classes), h, u, rho, lambdas, 0.0, qp=res)
    report = kkt_residuals(sol, instance, r, prices_per_interval)
    sol.residual = report.max_violation
    if sol.residual > COMP_TOL * _scale(a, u_max):
        raise EquilibriumError(
            f"posterior KKT residual {sol.residual:.3e} above tolerance",
            residual=sol.residual)
    return sol


def _scale(a, u_max) -> float:
    return 1.0 + float(a.max(initial=0.0)) * float(np.asarray(u_max).max(initial=0.0))


def solve_equilibrium(
    prices_per_interval: np.ndarray,
    state: SystemState,
    classes: list[DemandClass],
    lambdas: np.ndarray,
    warm: EquilibriumSolution | None = None,
) -> EquilibriumSolution:
    """Equilibrium for the next interval of `state` at the given prices."""
    r = available_capacity(state, state.time + 1)
    return solve_market(state.instance, r, prices_per_interval, classes, lambdas, warm=warm)


def kkt_residuals(
    solution: EquilibriumSolution,
    instance: NetworkInstance,
    open_capacity: np.ndarray,
    prices_per_interval: np.ndarray,
) -> ResidualReport:
    """Worst-case violations of the four complementarity families, per family.

    Pure check; zero everywhere exactly characterizes an equilibrium.
    """
    classes = solution.classes
    K = len(classes)
    J = instance.n_areas
    h = solution.flows
    u = solution.disutility
    rho = solution.shadow_price
    lam = solution.lambdas
    r = np.maximum(np.asarray(open_capacity, dtype=float), 0.0)

    if K == 0:
        zero = (0.0, 0.0, max(0.0, float(np.max(-rho, initial=0.0))))
        cap_y = float(np.maximum(-rho, 0.0).max(initial=0.0))
        cap_x = float(np.maximum(-r, 0.0).max(initial=0.0))
        comp = float(np.abs(rho * r).max(initial=0.0))
        return ResidualReport((0.0, 0.0, 0.0), (0.0, 0.0, 0.0),
                              (cap_x, cap_y, comp), (0.0, 0.0, 0.0))

    a = np.array([cls.intercept for cls in classes])
    b = np.array([cls.slope for cls in classes])
    phi = _class_costs(instance, classes, prices_per_interval)

    y1 = phi + rho[None, :] - u[:, None]
    x1 = h[:, :-1]
    f1 = (float(np.maximum(-x1, 0.0).max(initial=0.0)),
          float(np.maximum(-y1, 0.0).max(initial=0.0)),
          float(np.abs(x1 * y1).max(initial=0.0)))

    x2 = h[:, -1]
    y2 = lam - u
    f2 = (float(np.maximum(-x2, 0.0).max(initial=0.0)),
          float(np.maximum(-y2, 0.0).max(initial=0.0)),
          float(np.abs(x2 * y2).max(initial=0.0)))

    inflow = h[:, :-1].sum(axis=0)
    x3 = r - inflow
    f3 = (float(np.maximum(-x3, 0.0).max(initial=0.0)),
          float(np.maximum(-rho, 0.0).max(initial=0.0)),
          float(np.abs(x3 * rho).max(initial=0.0)))

    x4 = u
    y4 = h.sum(axis=1) - (a - b * u)
    f4 = (float(np.maximum(-x4, 0.0).max(initial=0.0)),
          float(np.maximum(-y4, 0.0).max(initial=0.0)),
          float(np.abs(x4 * y4).max(initial=0.0)))

    return ResidualReport(f1, f2, f3, f4)


def export_solution_csv(solution: EquilibriumSolution, instance: NetworkInstance,
                        path, t: int | None = None) -> None:
    """Long-format CSV: one row per (class, area), dummy area last."""
    with open(path, "w", newline="") as fh:
        fh.write("t,o,d,n,area,h,u,rho,lambda\n")
        for k, cls in enumerate(solution.classes):
            for j in range(instance.n_areas + 1):
                area = instance.areas[j].id if j < instance.n_areas else "ZETA"
                rho = solution.shadow_price[j] if j < instance.n_areas else 0.0
                fh.write(f"{t if t is not None else cls.arrival},"
                         f"{instance.origins[cls.origin]},"
                         f"{instance.destinations[cls.destination]},"
                         f"{cls.duration_n},{area},"
                         f"{solution.flows[k, j]:.12g},{solution.disutility[k]:.12g},"
                         f"{rho:.12g},{solution.lambdas[k]:.12g}\n")
