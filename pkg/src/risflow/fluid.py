"""Fluid limit dY/dt = lambda - R(Y) and Lyapunov drift checks.

Time is measured in slots and volumes in flows, so rates are
``bits_per_slot * log2(1 + SINR) / E[S]``. The transmitting set is frozen at
the occupancy pattern ``{k : Y_k > 0}``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .channel import ChannelStats, Scenario
from .errors import DomainError
from .sinr import sinr_vector

RateMap = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class FluidState:
    Y: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=float).ravel()
        if np.any(Y < 0):
            raise DomainError("fluid volumes must be >= 0")
        object.__setattr__(self, "Y", Y)

    @classmethod
    def normalized(cls, direction) -> "FluidState":
        d = np.asarray(direction, dtype=float)
        if np.any(d < 0) or d.sum() <= 0:
            raise DomainError("direction must be nonnegative and nonzero")
        return cls(d / d.sum())


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray  # (n,)
    Y: np.ndarray  # (n, K)
    dt: float

    @property
    def total(self) -> np.ndarray:
        return self.Y.sum(axis=1)

    def empty_time(self) -> float:
        """First sample time with all volumes zero (inf if never)."""
        idx = np.flatnonzero(self.total <= 0.0)
        return float(self.t[idx[0]]) if idx.size else math.inf


def rate_map(scenario: Scenario, stats: ChannelStats, eta_value: float, tdma: bool = False) -> RateMap:
    """Occupancy mask -> service rate per location in flows/slot."""
    scale = scenario.bandwidth_hz * scenario.slot_s / scenario.mean_file_bits
    cache = {}

    def R(active):
        active = np.asarray(active, dtype=bool)
        key = active.tobytes()
        r = cache.get(key)
        if r is None:
            if tdma:
                # equal time share among occupied locations, no interference
                r = np.zeros(active.size)
                n = int(active.sum())
                for k in np.flatnonzero(active):
                    s = sinr_vector(stats, eta_value, [k], scenario.tx_power, scenario.noise_power)[k]
                    r[k] = scale[k] * math.log2(1.0 + s) / n
            else:
                s = sinr_vector(stats, eta_value, active, scenario.tx_power, scenario.noise_power)
                r = scale * np.log2(1.0 + s)
            cache[key] = r
        return r

    return R


def all_active_rates(rates: RateMap, K: int) -> np.ndarray:
    return np.asarray(rates(np.ones(K, dtype=bool)), dtype=float)


def fluid_integrate(Y0, lam, rates: RateMap, horizon: float, dt: float) -> Trajectory:
    """Explicit Euler with clipping at 0.

    An empty location with ``lambda_k`` above the rate it would get by joining
    the transmitting set starts filling; otherwise it stays at 0 and does not
    interfere.
    """
    if not dt > 0:
        raise DomainError("dt must be > 0")
    if not horizon > 0:
        raise DomainError("horizon must be > 0")
    Y = (Y0.Y if isinstance(Y0, FluidState) else np.asarray(Y0, dtype=float)).copy()
    t0 = Y0.t if isinstance(Y0, FluidState) else 0.0
    lam = np.asarray(lam, dtype=float)
    if lam.shape != Y.shape:
        raise DomainError("lambda and Y0 must have the same length")
    n = int(math.ceil(horizon / dt))
    out = np.empty((n + 1, Y.size))
    out[0] = Y
    for i in range(n):
        active = Y > 0
        R = rates(active)
        drift = lam - R
        for k in np.flatnonzero(~active):
            if lam[k] > 0:
                trial = active.copy()
                trial[k] = True
                rk = rates(trial)[k]
                drift[k] = lam[k] - rk if lam[k] > rk else 0.0
            else:
                drift[k] = 0.0
        Y = np.maximum(Y + dt * drift, 0.0)
        out[i + 1] = Y
    return Trajectory(t0 + dt * np.arange(n + 1), out, dt)


def lyapunov_weights(lam, gamma: float, eps: float) -> np.ndarray:
    z = gamma * np.asarray(lam, dtype=float) + eps
    if np.any(z <= 0):
        raise DomainError("gamma * lambda_k + eps must be > 0")
    return 1.0 / -np.expm1(-z)  # e^z / (e^z - 1)


def lyapunov_value(Y, lam, gamma: float, eps: float) -> float:
    w = lyapunov_weights(lam, gamma, eps)
    Y = np.asarray(Y, dtype=float)
    return float(0.5 * np.sum(w * Y * Y, axis=-1)) if Y.ndim == 1 else 0.5 * (Y * Y) @ w


@dataclass(frozen=True)
class DriftReport:
    L0: float
    max_drift: float       # largest dL/dt over samples with Y != 0
    eps: float
    xi: float              # min of -dL/dt / sqrt(L) over samples with Y != 0
    T: float               # drain-time bound (2/xi) sqrt(sum w / 2)
    empty_time: float
    n_samples: int

    @property
    def negative_drift(self) -> bool:
        return self.n_samples == 0 or self.max_drift < 0

    def drained_by_bound(self, slack: float = 0.0) -> bool:
        return self.empty_time <= self.T + slack

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("L0", "max_drift", "eps", "xi", "T", "empty_time", "n_samples")} | {
            "negative_drift": self.negative_drift}


def drift_check(traj: Trajectory, lam, gamma: float, eps: float) -> DriftReport:
    """Finite-difference Lyapunov drift along ``traj``."""
    if traj.Y.shape[0] < 2:
        raise DomainError("trajectory too short to estimate drift")
    L = np.asarray(lyapunov_value(traj.Y, lam, gamma, eps))
    w = lyapunov_weights(lam, gamma, eps)
    if L[0] == 0.0:
        return DriftReport(0.0, 0.0, eps, math.inf, 0.0, float(traj.t[0]), 0)
    dL = np.diff(L) / traj.dt
    live = L[:-1] > 0
    # a step that reaches zero is cut short by the clip; keep it only if it is a drift sample
    d = dL[live]
    ratio = -d / np.sqrt(L[:-1][live])
    xi = float(ratio.min())
    bound = (2.0 / xi) * math.sqrt(0.5 * w.sum()) if xi > 0 else math.inf
    return DriftReport(float(L[0]), float(d.max()), eps, xi, bound, traj.empty_time(), int(live.sum()))


def select_epsilon(lam, boundary_scale: float, gamma: float) -> float:
    """Half the margin between ``gamma * lambda`` and the boundary along its direction."""
    lam = np.asarray(lam, dtype=float)
    norm = float(np.linalg.norm(lam))
    if norm == 0:
        return 0.5 * boundary_scale
    d = lam / norm
    pos = d[d > 0]
    margin = boundary_scale - gamma * norm
    if margin <= 0:
        raise DomainError("gamma * lambda is not inside the region along its direction")
    return 0.5 * margin * float(pos.min())


def box_boundary_scale(direction, rates: np.ndarray) -> float:
    """Largest s with ``s * direction`` below the rate box ``rates`` (componentwise)."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    pos = d > 0
    return float(np.min(rates[pos] / d[pos]))


def lemma1_check(gamma, x) -> bool:
    """``log(1 + gamma x) >= gamma log(1 + x)`` for gamma in (0, 1], x > 0."""
    g = np.asarray(gamma, dtype=float)
    xv = np.asarray(x, dtype=float)
    if np.any((g <= 0) | (g > 1)) or np.any(xv <= 0):
        raise DomainError("need gamma in (0, 1] and x > 0")
    lhs = np.log1p(g * xv)
    rhs = g * np.log1p(xv)
    return bool(np.all(lhs >= rhs - 1e-15 * np.abs(rhs)))


def stochastic_gap(scenario: Scenario, stats: ChannelStats, policy, Y0, beta: float,
                   horizon: float, rates: RateMap, dt: float, seed=0) -> float:
    """Sup-norm distance between ``X(beta t) / beta`` and the fluid path on [0, horizon]."""
    from .flowsim import FlowState, run

    Y0 = Y0 if isinstance(Y0, FluidState) else FluidState(Y0)
    rng = np.random.default_rng(seed)
    init_rng, sim_rng = rng.spawn(2)
    counts = np.rint(beta * Y0.Y).astype(int)
    state = FlowState.with_flows(counts, scenario.mean_file_bits, init_rng)
    n_slots = int(math.ceil(beta * horizon))
    tr = run(scenario, stats, policy, n_slots, sim_rng, state=state)
    fl = fluid_integrate(Y0, scenario.arrival_rates, rates, horizon, dt)
    idx = np.minimum(np.rint(fl.t * beta).astype(int), n_slots)
    return float(np.max(np.abs(tr.x[idx] / beta - fl.Y)))
