"""Elastic linear demand: per-class demand curves, disutility assembly, the
dummy-lot (outside option) disutility, and the synthetic intercept generator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import NetworkInstance, PricePolicy, ValidationError


@dataclass(frozen=True)
class DemandClass:
    """One (origin, destination, arrival interval, duration) demand type with
    inverse demand H(u) = a - b*u. Indices are positions into the instance's
    origin/destination/duration lists; duration_n is the stay in intervals."""

    origin: int
    destination: int
    arrival: int
    duration_n: int
    intercept: float            # a, vehicles
    slope: float                # b > 0, vehicles per unit disutility

    def __post_init__(self):
        if self.slope <= 0:
            raise ValidationError("demand slope must be > 0")
        if self.intercept < 0:
            raise ValidationError("demand intercept must be >= 0")

    @property
    def u_max(self) -> float:
        """Choke disutility H^{-1}(0) = a/b."""
        return self.intercept / self.slope

    def key(self) -> tuple:
        return (self.origin, self.destination, self.arrival, self.duration_n)


def demand_at(cls: DemandClass, u: float) -> float:
    """Vehicles demanded at disutility u; clipped at zero beyond the choke point."""
    return max(0.0, cls.intercept - cls.slope * u)


def disutility(cls: DemandClass, instance: NetworkInstance, j: int,
               price_per_interval: float) -> float:
    """phi = n*p + theta*w_jd + theta'*v_oj for parking at area j."""
    return (cls.duration_n * price_per_interval
            + instance.access_cost(cls.origin, cls.destination, j))


def access_costs(cls: DemandClass, instance: NetworkInstance) -> np.ndarray:
    """theta*w_jd + theta'*v_oj for every area, as a vector."""
    return (instance.value_of_walk * instance.walk_minutes[:, cls.destination]
            + instance.value_of_drive * instance.drive_minutes[cls.origin, :])


def dummy_disutility(cls: DemandClass, instance: NetworkInstance,
                     policy: PricePolicy, prev_prices: np.ndarray | None,
                     t: int, t_s: int) -> float:
    """Outside-option disutility: the dearest any real lot could have become by
    interval t if prices rose at the maximum step from the last realized
    prices, capped at the class's choke disutility.

    prev_prices are the realized per-interval prices p^{t_s-1}; None (no
    history, i.e. t_s = 1) saturates the cap.
    """
    if t < t_s:
        raise ValidationError("dummy disutility asked for an interval before the horizon start")
    if prev_prices is None:
        return cls.u_max
    step_up = instance.per_interval(policy.step_up)
    drift = (t + 1 - t_s) * step_up
    acc = access_costs(cls, instance)
    worst = float(np.max(cls.duration_n * (np.asarray(prev_prices) + drift) + acc))
    return min(cls.u_max, worst)


@dataclass(frozen=True)
class DemandGenParams:
    """Synthetic demand generator: a Gaussian mixture over time-of-day periods,
    split across OD pairs and durations, with additive noise. All defaults are
    synthetic stand-ins, config-overridable."""

    k: float = 0.10                                    # adoption fraction
    od_weights: tuple = ()                             # (o, d) major order, sums to 1
    period_totals: tuple = (100.0, 900.0, 600.0, 900.0, 450.0)
    period_centers: tuple = (4.5, 7.5, 12.5, 17.0, 22.0)   # clock hours
    period_lengths: tuple = (3.0, 3.0, 6.5, 3.0, 8.0)      # hours
    duration_shares: tuple = (0.30, 0.30, 0.20, 0.12, 0.08)
    noise_sd: float = 0.25
    slope: float = 0.3                                 # demand curve b
    seed: int = 0

    def validate(self, instance: NetworkInstance) -> None:
        if self.k < 0 or self.noise_sd < 0 or self.slope <= 0:
            raise ValidationError("k and noise_sd must be >= 0 and slope > 0")
        if any(p < 0 for p in self.period_totals) or any(s <= 0 for s in self.period_lengths):
            raise ValidationError("period totals must be >= 0 and lengths > 0")
        if not (len(self.period_totals) == len(self.period_centers) == len(self.period_lengths)):
            raise ValidationError("period parameter lists must have equal length")
        w = self.resolved_od_weights(instance)
        if abs(w.sum() - 1.0) > 1e-9 or np.any(w < 0):
            raise ValidationError("od_weights must be non-negative and sum to 1")
        v = np.asarray(self.duration_shares)
        if len(v) != len(instance.durations):
            raise ValidationError("duration_shares length must match instance durations")
        if abs(v.sum() - 1.0) > 1e-9 or np.any(v < 0):
            raise ValidationError("duration_shares must be non-negative and sum to 1")

    def resolved_od_weights(self, instance: NetworkInstance) -> np.ndarray:
        """od_weights as an (origins x destinations) matrix; empty means the
        bundled default split (2/3 east origin; 0.40/0.30/0.30 destinations)."""
        no, nd = len(instance.origins), len(instance.destinations)
        if self.od_weights:
            w = np.asarray(self.od_weights, dtype=float).reshape(no, nd)
        else:
            ow = np.full(no, 1.0 / no)
            if no == 2:
                ow = np.array([2.0 / 3.0, 1.0 / 3.0])
            dw = np.full(nd, 1.0 / nd)
            if nd == 3:
                dw = np.array([0.40, 0.30, 0.30])
            w = np.outer(ow, dw)
        return w


DEMAND_SCALES = {"low": 0.5, "medium": 1.0, "high": 2.0}


def time_profile(params: DemandGenParams, hour: float) -> float:
    """Deterministic mixture value sum_tp (P/sqrt(sigma)) exp(-((h-mu)/sigma)^2)."""
    total = 0.0
    for P, mu, sig in zip(params.period_totals, params.period_centers, params.period_lengths):
        total += P / np.sqrt(sig) * np.exp(-(((hour - mu) / sig) ** 2))
    return total


def generate_intercepts(params: DemandGenParams, instance: NetworkInstance,
                        demand_level: str = "medium") -> np.ndarray:
    """Intercept tensor a[o, d, t-1, n_idx] for t in 1..T+N, rounded to whole
    vehicles and floored at zero. The demand level scales the deterministic
    part by 0.5/1/2 before the noise term is added. Deterministic per seed."""
    params.validate(instance)
    if demand_level not in DEMAND_SCALES:
        raise ValidationError(f"unknown demand level {demand_level!r}")
    scale = DEMAND_SCALES[demand_level]
    rng = np.random.default_rng(params.seed)
    no, nd = len(instance.origins), len(instance.destinations)
    n_t = instance.horizon_intervals + instance.max_duration
    w = params.resolved_od_weights(instance)
    v = np.asarray(params.duration_shares, dtype=float)

    out = np.zeros((no, nd, n_t, len(instance.durations)))
    profile = np.array([time_profile(params, instance.hour_of(t)) for t in range(1, n_t + 1)])
    # One noise draw per (od, t); the bracketed term is shared across durations.
    noise = rng.normal(0.0, params.noise_sd, size=(no, nd, n_t)) if params.noise_sd > 0 \
        else np.zeros((no, nd, n_t))
    for o in range(no):
        for d in range(nd):
            bracket = scale * w[o, d] * profile + noise[o, d]
            a = params.k * bracket[:, None] * v[None, :]
            out[o, d] = np.maximum(0.0, np.rint(a))
    return out


def classes_for_interval(instance: NetworkInstance, params: DemandGenParams,
                         intercepts: np.ndarray, t: int) -> list[DemandClass]:
    """Demand classes arriving at interval t with positive intercepts."""
    no, nd = len(instance.origins), len(instance.destinations)
    classes = []
    for o in range(no):
        for d in range(nd):
            for ni, n in enumerate(instance.durations):
                a = float(intercepts[o, d, t - 1, ni])
                if a > 0:
                    classes.append(DemandClass(o, d, t, n, a, params.slope))
    return classes


def export_intercepts_csv(instance: NetworkInstance, intercepts: np.ndarray, path) -> None:
    """Write the intercept tensor as CSV with columns o, d, t, n, a."""
    with open(path, "w", newline="") as fh:
        fh.write("o,d,t,n,a\n")
        no, nd, n_t, _ = intercepts.shape
        for o in range(no):
            for d in range(nd):
                for t in range(1, n_t + 1):
                    for ni, n in enumerate(instance.durations):
                        fh.write(f"{instance.origins[o]},{instance.destinations[d]},"
                                 f"{t},{n},{intercepts[o, d, t - 1, ni]:.0f}\n")


def load_intercepts_csv(instance: NetworkInstance, path) -> np.ndarray:
    """Inverse of export_intercepts_csv."""
    no, nd = len(instance.origins), len(instance.destinations)
    n_t = instance.horizon_intervals + instance.max_duration
    o_idx = {name: i for i, name in enumerate(instance.origins)}
    d_idx = {name: i for i, name in enumerate(instance.destinations)}
    n_idx = {n: i for i, n in enumerate(instance.durations)}
    out = np.zeros((no, nd, n_t, len(instance.durations)))
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header != ["o", "d", "t", "n", "a"]:
            raise ValidationError(f"unexpected intercept CSV header: {header}")
        for line_no, line in enumerate(fh, start=2):
            parts = line.strip().split(",")
            if len(parts) != 5:
                raise ValidationError(f"line {line_no}: expected 5 fields")
            o, d, t, n, a = parts
            try:
                out[o_idx[o], d_idx[d], int(t) - 1, n_idx[int(n)]] = float(a)
            except KeyError as exc:
                raise ValidationError(f"line {line_no}: unknown key {exc}") from exc
    return out
