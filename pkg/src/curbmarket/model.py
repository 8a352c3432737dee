"""Domain types for the parking market: areas, network, policy, and the
occupancy/arrival/departure ledgers with their exact conservation bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

# Tolerance for fractional flow bookkeeping; counts coming from the continuous
# equilibrium are doubles, everything else is exact integers.
FLOW_TOL = 1e-9

DEFAULT_DURATIONS = (1, 3, 6, 12, 16)  # 15 min, 45 min, 1.5 h, 3 h, 4 h
DEFAULT_INTERVAL_MINUTES = 15
DEFAULT_HORIZON_INTERVALS = 36  # 9:00-18:00 at 15 min
DAY_START_HOUR = 9.0


class ValidationError(ValueError):
    """Raised when an instance, policy, or state violates its invariants."""


class InfeasibleStateError(RuntimeError):
    """Raised when a state update would overfill a parking area."""

    def __init__(self, area_id: str, occupancy: float, capacity: float):
        self.area_id = area_id
        super().__init__(
            f"area {area_id!r}: occupancy {occupancy:.9g} exceeds capacity {capacity:g}"
        )


@dataclass(frozen=True)
class ParkingArea:
    id: str
    capacity: int
    target_occupancy: float = 0.85
    price_floor: float = 0.0       # currency per hour
    price_ceiling: float = float("inf")
    kind: str = "on-street"        # on-street | garage

    def validate(self) -> None:
        if self.capacity < 0:
            raise ValidationError(f"area {self.id}: capacity must be >= 0")
        if not 0.0 <= self.target_occupancy <= 1.0:
            raise ValidationError(f"area {self.id}: target_occupancy outside [0, 1]")
        if self.price_floor < 0:
            raise ValidationError(f"area {self.id}: price_floor must be >= 0")
        if self.price_ceiling < self.price_floor:
            raise ValidationError(f"area {self.id}: price_ceiling below price_floor")
        if self.kind not in ("on-street", "garage"):
            raise ValidationError(f"area {self.id}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class NetworkInstance:
    """The parking network: areas, access costs, and the time discretization.

    walk_minutes[j, d] is area->destination walking time, drive_minutes[o, j]
    origin->area driving time, inter_area_miles[j, j'] cruising distance
    (simulation only). Money enters through the values of time (currency per
    minute).
    """

    areas: tuple[ParkingArea, ...]
    origins: tuple[str, ...]
    destinations: tuple[str, ...]
    walk_minutes: np.ndarray
    drive_minutes: np.ndarray
    inter_area_miles: np.ndarray
    value_of_walk: float = 0.42
    value_of_drive: float = 0.26
    interval_minutes: int = DEFAULT_INTERVAL_MINUTES
    horizon_intervals: int = DEFAULT_HORIZON_INTERVALS
    durations: tuple[int, ...] = DEFAULT_DURATIONS
    name: str = "unnamed"
    synthetic_geometry: bool = True

    def __post_init__(self):
        object.__setattr__(self, "walk_minutes", np.asarray(self.walk_minutes, dtype=float))
        object.__setattr__(self, "drive_minutes", np.asarray(self.drive_minutes, dtype=float))
        object.__setattr__(self, "inter_area_miles", np.asarray(self.inter_area_miles, dtype=float))

    @property
    def n_areas(self) -> int:
        return len(self.areas)

    @property
    def max_duration(self) -> int:
        return max(self.durations)

    @property
    def capacities(self) -> np.ndarray:
        return np.array([a.capacity for a in self.areas], dtype=float)

    @property
    def targets(self) -> np.ndarray:
        return np.array([a.target_occupancy * a.capacity for a in self.areas], dtype=float)

    def area_index(self, area_id: str) -> int:
        for i, a in enumerate(self.areas):
            if a.id == area_id:
                return i
        raise KeyError(area_id)

    def hour_of(self, t: int) -> float:
        """Clock hour at the midpoint of interval t (1-based)."""
        return DAY_START_HOUR + (t - 0.5) * self.interval_minutes / 60.0

    def access_cost(self, o: int, d: int, j: int) -> float:
        """Walk + drive money cost theta*w_jd + theta'*v_oj."""
        return (self.value_of_walk * self.walk_minutes[j, d]
                + self.value_of_drive * self.drive_minutes[o, j])

    def validate(self) -> None:
        if not self.areas:
            raise ValidationError("instance has no parking areas")
        if not self.origins or not self.destinations:
            raise ValidationError("instance needs at least one origin and one destination")
        for a in self.areas:
            a.validate()
        ids = [a.id for a in self.areas]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate area ids")
        nj, no, nd = len(self.areas), len(self.origins), len(self.destinations)
        if self.walk_minutes.shape != (nj, nd):
            raise ValidationError(
                f"walk_minutes shape {self.walk_minutes.shape} != (areas={nj}, destinations={nd})")
        if self.drive_minutes.shape != (no, nj):
            raise ValidationError(
                f"drive_minutes shape {self.drive_minutes.shape} != (origins={no}, areas={nj})")
        if self.inter_area_miles.shape != (nj, nj):
            raise ValidationError(
                f"inter_area_miles shape {self.inter_area_miles.shape} != (areas={nj}, areas={nj})")
        for name, m in (("walk_minutes", self.walk_minutes),
                        ("drive_minutes", self.drive_minutes),
                        ("inter_area_miles", self.inter_area_miles)):
            if not np.all(np.isfinite(m)):
                raise ValidationError(f"{name} has missing or non-finite entries")
            if np.any(m < 0):
                raise ValidationError(f"{name} has negative entries")
        if self.value_of_walk < 0 or self.value_of_drive < 0:
            raise ValidationError("values of time must be >= 0")
        if self.interval_minutes <= 0:
            raise ValidationError("interval_minutes must be > 0")
        if self.horizon_intervals < 1:
            raise ValidationError("horizon_intervals must be >= 1")
        if not self.durations or any(n < 1 for n in self.durations):
            raise ValidationError("durations must be a non-empty set of intervals >= 1")
        if len(set(self.durations)) != len(self.durations):
            raise ValidationError("duplicate durations")

    def per_hour(self, price_per_interval: float) -> float:
        return price_per_interval * 60.0 / self.interval_minutes

    def per_interval(self, price_per_hour: float) -> float:
        return price_per_hour * self.interval_minutes / 60.0


@dataclass(frozen=True)
class PricePolicy:
    """Agency-side pricing policy: objective weights and price-variation limits.

    Money fields are currency per hour (file convention); the step limits bound
    the change between consecutive intervals.
    """

    beta: float = 2.5              # occupancy-deviation penalty per spot per interval
    alpha_s: float = 0.0           # social-surplus weight
    alpha_r: float = 0.0           # revenue weight
    step_down: float = 1.0         # max decrease, currency/hour per interval
    step_up: float = 1.0           # max increase, currency/hour per interval
    tau: int = 1                   # rolling-horizon length in intervals

    def validate(self) -> None:
        if self.beta < 0 or self.alpha_s < 0 or self.alpha_r < 0:
            raise ValidationError("objective weights must be >= 0")
        if self.step_down < 0 or self.step_up < 0:
            raise ValidationError("price step limits must be >= 0")
        if self.tau < 1:
            raise ValidationError("tau must be >= 1")
        if (self.alpha_s > 0 or self.alpha_r > 0) and self.tau != 1:
            raise ValidationError(
                "revenue/social-surplus objectives require tau = 1 "
                "(the bilinear reformulation is single-interval only)")


@dataclass
class SystemState:
    """Occupancy ledger: f (per area), the arrivals ledger q[(t, j, n_index)],
    and realized per-interval prices (currency per interval).

    `time` is the last completed interval; 0 means nothing has happened yet.
    Durations are indexed by position in instance.durations.
    """

    instance: NetworkInstance
    time: int = 0
    occupancy: np.ndarray = None
    arrivals_ledger: dict = field(default_factory=dict)   # (t, j, n_idx) -> count
    prices: dict = field(default_factory=dict)            # t -> np.ndarray per area

    def __post_init__(self):
        if self.occupancy is None:
            self.occupancy = np.zeros(self.instance.n_areas)
        else:
            self.occupancy = np.asarray(self.occupancy, dtype=float)

    def copy(self) -> "SystemState":
        return SystemState(
            instance=self.instance,
            time=self.time,
            occupancy=self.occupancy.copy(),
            arrivals_ledger=dict(self.arrivals_ledger),
            prices={t: p.copy() for t, p in self.prices.items()},
        )


def departures(state: SystemState, t: int) -> np.ndarray:
    """Vehicles leaving each area at the start of interval t: every arrival at
    interval m with duration t-m, for m in [max(1, t-N), t-1]."""
    inst = state.instance
    horizon = inst.horizon_intervals + inst.max_duration
    if t < 1 or t > horizon:
        raise IndexError(f"interval {t} outside [1, {horizon}]")
    g = np.zeros(inst.n_areas)
    dur_index = {n: i for i, n in enumerate(inst.durations)}
    for m in range(max(1, t - inst.max_duration), t):
        n = t - m
        ni = dur_index.get(n)
        if ni is None:
            continue
        for j in range(inst.n_areas):
            q = state.arrivals_ledger.get((m, j, ni))
            if q:
                g[j] += q
    return g


def available_capacity(state: SystemState, t: int) -> np.ndarray:
    """Spaces open to interval-t arrivals: c - f^{t-1} + g^t."""
    return state.instance.capacities - state.occupancy + departures(state, t)


def advance_state(state: SystemState, new_arrivals: np.ndarray,
                  prices_per_interval: np.ndarray | None = None) -> SystemState:
    """Apply interval t = state.time + 1: remove departures, add new_arrivals
    (area x duration-index counts), and append the interval's prices.

    Returns a new state; the input is left untouched.
    """
    inst = state.instance
    t = state.time + 1
    new_arrivals = np.asarray(new_arrivals, dtype=float)
    if new_arrivals.shape != (inst.n_areas, len(inst.durations)):
        raise ValidationError(
            f"new_arrivals shape {new_arrivals.shape} != (areas, durations)")
    if np.any(new_arrivals < -FLOW_TOL):
        raise ValidationError("negative arrival counts")

    g = departures(state, t)
    f_new = state.occupancy - g + new_arrivals.sum(axis=1)
    caps = inst.capacities
    for j in range(inst.n_areas):
        if f_new[j] > caps[j] + max(FLOW_TOL, FLOW_TOL * caps[j]):
            raise InfeasibleStateError(inst.areas[j].id, f_new[j], caps[j])
        if f_new[j] < -FLOW_TOL:
            raise InfeasibleStateError(inst.areas[j].id, f_new[j], caps[j])
    f_new = np.clip(f_new, 0.0, caps)

    out = state.copy()
    out.time = t
    out.occupancy = f_new
    for j in range(inst.n_areas):
        for ni in range(len(inst.durations)):
            q = new_arrivals[j, ni]
            if q > FLOW_TOL:
                out.arrivals_ledger[(t, j, ni)] = out.arrivals_ledger.get((t, j, ni), 0.0) + q
    if prices_per_interval is not None:
        out.prices[t] = np.asarray(prices_per_interval, dtype=float).copy()
    return out


def replay_occupancy(instance: NetworkInstance, ledger: dict, up_to: int,
                     initial: np.ndarray | None = None) -> np.ndarray:
    """Recompute f^t for t in [0, up_to] from the arrivals ledger alone;
    row t of the result is the occupancy vector after interval t."""
    f = np.zeros(instance.n_areas) if initial is None else np.asarray(initial, dtype=float).copy()
    out = np.zeros((up_to + 1, instance.n_areas))
    out[0] = f
    dur_index = {n: i for i, n in enumerate(instance.durations)}
    for t in range(1, up_to + 1):
        g = np.zeros(instance.n_areas)
        for m in range(max(1, t - instance.max_duration), t):
            ni = dur_index.get(t - m)
            if ni is None:
                continue
            for j in range(instance.n_areas):
                q = ledger.get((m, j, ni))
                if q:
                    g[j] += q
        arr = np.zeros(instance.n_areas)
        for (tt, j, ni), q in ledger.items():
            if tt == t:
                arr[j] += q
        f = f - g + arr
        out[t] = f
    return out


def period_of(t: int, intervals_per_period: int = 12) -> int:
    """Time-of-day period index (0, 1, 2) of interval t: 9-12, 12-15, 15-18."""
    return min((t - 1) // intervals_per_period, 2)


def grid_instance(
    block_rows: int,
    block_cols: int,
    capacities: Sequence[int],
    origin_cells: Sequence[tuple[float, float]],
    destination_cells: Sequence[tuple[float, float]],
    block_miles: float = 0.1,
    garage_cells: Sequence[int] = (),
    name: str = "grid",
    **kwargs,
) -> NetworkInstance:
    """Synthesize a parking network on a rectangular block grid.

    Areas sit at cell centers; walking is Manhattan distance at 3 mph, driving
    at 10 mph. `garage_cells` lists area indices to mark as garages.
    """
    n = block_rows * block_cols
    if len(capacities) != n:
        raise ValidationError(f"need {n} capacities for a {block_rows}x{block_cols} grid")
    coords = [(r * block_miles, c * block_miles)
              for r in range(block_rows) for c in range(block_cols)]

    def manhattan(a, b):
        return abs(a[0] - b[0]) + abs(a[1] - b[1])

    areas = tuple(
        ParkingArea(
            id=f"A{i + 1:02d}",
            capacity=int(capacities[i]),
            kind="garage" if i in garage_cells else "on-street",
        )
        for i in range(n)
    )
    dest_xy = [(r * block_miles, c * block_miles) for r, c in destination_cells]
    orig_xy = [(r * block_miles, c * block_miles) for r, c in origin_cells]
    walk = np.array([[manhattan(coords[j], dxy) / 3.0 * 60.0 for dxy in dest_xy]
                     for j in range(n)])
    drive = np.array([[manhattan(oxy, coords[j]) / 10.0 * 60.0 for j in range(n)]
                      for oxy in orig_xy])
    inter = np.array([[manhattan(coords[a], coords[b]) for b in range(n)] for a in range(n)])
    inst = NetworkInstance(
        areas=areas,
        origins=tuple(f"O{k + 1}" for k in range(len(origin_cells))),
        destinations=tuple(f"D{k + 1}" for k in range(len(destination_cells))),
        walk_minutes=walk,
        drive_minutes=drive,
        inter_area_miles=inter,
        name=name,
        synthetic_geometry=True,
        **kwargs,
    )
    inst.validate()
    return inst
