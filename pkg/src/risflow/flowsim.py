"""Flow-level simulation: Poisson flow arrivals, exponential file sizes,
rates from the closed-form SINR of whichever locations are transmitting.

Time is slotted. Each slot draws ``Poisson(lambda_k)`` arrivals per location
with arrival instants uniform inside the slot; between events (an arrival or
a head-of-line completion) the transmitting set is fixed and each
transmitting flow is served at its rate in bits/slot. A slot therefore
delivers ``rate * slot`` bits per transmitting location, leftover capacity
rolls over to the next flow in the same queue, and interference tracks the
instantaneous occupancy.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .channel import ChannelStats, Scenario
from .errors import DomainError
from .phase_opt import PhaseSolution, equal_phase_config, random_phases
from .sinr import eta as eta_of
from .sinr import sinr_vector


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------

@dataclass
class Policy:
    """How the RIS is configured and who transmits in each slot.

    ``optimized``: one precomputed phase solution, all occupied locations
    transmit. ``equal``: same with all phases equal. ``random``: fresh uniform
    phases every slot. ``tdma``: optimized phases, one occupied location per
    slot in round-robin order, no inter-location interference.
    """

    kind: str
    eta: float = 0.0
    solution: Optional[PhaseSolution] = field(default=None, repr=False)
    R: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("optimized", "equal", "random", "tdma"):
            raise DomainError(f"unknown policy {self.kind!r}")

    @classmethod
    def optimized(cls, solution: PhaseSolution) -> "Policy":
        return cls("optimized", solution.eta, solution)

    @classmethod
    def tdma(cls, solution: PhaseSolution) -> "Policy":
        return cls("tdma", solution.eta, solution)

    @classmethod
    def equal(cls, stats: ChannelStats) -> "Policy":
        return cls("equal", eta_of(equal_phase_config(stats.M), stats))

    @classmethod
    def random_per_slot(cls, stats: ChannelStats) -> "Policy":
        return cls("random", float(stats.M), R=stats.R)

    @property
    def static(self) -> bool:
        return self.kind != "random"

    def slot_eta(self, rng: np.random.Generator) -> float:
        if self.kind == "random":
            return eta_of(random_phases(self.R.shape[0], rng), self.R)
        return self.eta


def make_policy(kind: str, stats: ChannelStats, solution: Optional[PhaseSolution] = None) -> Policy:
    if kind in ("optimized", "tdma"):
        if solution is None:
            raise DomainError(f"policy {kind!r} needs a phase solution")
        return Policy.optimized(solution) if kind == "optimized" else Policy.tdma(solution)
    if kind == "equal":
        return Policy.equal(stats)
    if kind == "random":
        return Policy.random_per_slot(stats)
    raise DomainError(f"unknown policy {kind!r}")


# ---------------------------------------------------------------------------
# State and engine
# ---------------------------------------------------------------------------

@dataclass
class FlowState:
    """Per-location FIFO queues of residual file sizes (bits); head is index 0."""

    queues: list
    t: int = 0
    rr: int = 0  # round-robin pointer for TDMA

    @classmethod
    def empty(cls, K: int) -> "FlowState":
        return cls([deque() for _ in range(K)])

    @classmethod
    def with_flows(cls, counts, mean_bits, rng: np.random.Generator) -> "FlowState":
        counts = [int(c) for c in counts]
        mean_bits = np.broadcast_to(np.asarray(mean_bits, dtype=float), (len(counts),))
        return cls([deque((mean_bits[k] * rng.standard_exponential(c)).tolist())
                    for k, c in enumerate(counts)])

    @property
    def X(self) -> np.ndarray:
        return np.array([len(q) for q in self.queues], dtype=np.int64)

    def copy(self) -> "FlowState":
        return FlowState([deque(q) for q in self.queues], self.t, self.rr)


class _Engine:
    """Serves one slot at a time; rates are cached per transmitting set for static policies."""

    def __init__(self, scenario: Scenario, stats: ChannelStats, policy: Policy):
        self.K = scenario.K
        self.policy = policy
        self.stats = stats
        self.powers = scenario.tx_power
        self.noise = scenario.noise_power
        self.bits_per_slot = scenario.bandwidth_hz * scenario.slot_s
        self.all_active = scenario.all_active_transmit
        self.cache: dict = {}
        self.eta = policy.eta

    def rates(self, key: tuple) -> list:
        """Bits/slot per location for transmitter counts ``key`` (length K)."""
        r = self.cache.get(key)
        if r is None:
            counts = np.asarray(key, dtype=float)
            mask = counts > 0
            if self.all_active:
                # every flow transmits; interference scales with the flow count
                s = self._sinr_weighted(counts)
            else:
                s = sinr_vector(self.stats, self.eta, mask, self.powers, self.noise)
            r = (self.bits_per_slot * np.log2(1.0 + s)).tolist()
            self.cache[key] = r
        return r

    def _sinr_weighted(self, counts):
        st = self.stats
        a = st.alpha_loc
        s1 = st.alpha_ap.sum()
        s2 = float(np.dot(st.alpha_ap, st.alpha_ap))
        load = float(np.dot(a * self.powers, counts))
        den = s2 * self.eta * load + self.noise * s1
        out = np.where(counts > 0, a * s1 * s1 * self.eta * self.powers / den, 0.0) if den > 0 else np.zeros(self.K)
        return out

    def _transmitters(self, state: FlowState, sched: int) -> tuple:
        q = state.queues
        if self.policy.kind == "tdma":
            return tuple(1 if (k == sched and q[k]) else 0 for k in range(self.K))
        if self.all_active:
            return tuple(len(x) for x in q)
        return tuple(1 if x else 0 for x in q)

    def _pick_tdma(self, state: FlowState) -> int:
        K = self.K
        for i in range(K):
            k = (state.rr + i) % K
            if state.queues[k]:
                state.rr = (k + 1) % K
                return k
        return -1

    def run_slot(self, state: FlowState, arrivals: list, policy_rng):
        """Advance ``state`` by one slot.

        ``arrivals`` is a time-sorted list of ``(instant, location, bits)``.
        Returns (arrival counts, departure counts, served bits) per location.
        """
        K = self.K
        q = state.queues
        if not self.policy.static:
            self.eta = self.policy.slot_eta(policy_rng)
            self.cache.clear()
        tdma = self.policy.kind == "tdma"
        sched = self._pick_tdma(state) if tdma else -1
        n_arr = [0] * K
        n_dep = [0] * K
        served = [0.0] * K

        t = 0.0
        ai = 0
        na = len(arrivals)
        key = self._transmitters(state, sched)
        rates = self.rates(key)
        while True:
            # earliest head-of-line (or any flow, when all transmit) completion
            tc, kc, jc = 1.0, -1, 0
            for k in range(K):
                if key[k] and rates[k] > 0.0:
                    r = rates[k]
                    if self.all_active:
                        qk = q[k]
                        j = min(range(len(qk)), key=qk.__getitem__)
                        tk = t + qk[j] / r
                    else:
                        j = 0
                        tk = t + q[k][0] / r
                    if tk < tc:
                        tc, kc, jc = tk, k, j
            ta = arrivals[ai][0] if ai < na else 1.0
            if ta <= tc:
                tn, kc = ta, -1
            else:
                tn = tc
            dt = tn - t
            if dt > 0.0:
                for k in range(K):
                    if key[k] and rates[k] > 0.0:
                        work = rates[k] * dt
                        qk = q[k]
                        if self.all_active:
                            for j in range(len(qk)):
                                qk[j] -= work
                            served[k] += work * len(qk)
                        else:
                            qk[0] -= work
                            served[k] += work
            t = tn
            if kc >= 0:
                qk = q[kc]
                if self.all_active:
                    served[kc] += qk[jc]  # undo rounding drift on the finished flow
                    del qk[jc]
                else:
                    served[kc] += qk[0]
                    qk.popleft()
                n_dep[kc] += 1
            elif ai < na:
                _, k, bits = arrivals[ai]
                q[k].append(bits)
                n_arr[k] += 1
                ai += 1
                if tdma and sched < 0:
                    sched = self._pick_tdma(state)
            else:
                break
            new_key = self._transmitters(state, sched)
            if new_key != key:
                key = new_key
                rates = self.rates(key)
        state.t += 1
        return n_arr, n_dep, served


def _draw_arrivals(rng: np.random.Generator, lam: np.ndarray, mean_bits: np.ndarray, n_slots: int):
    """Per-slot time-sorted arrival lists for ``n_slots`` slots."""
    K = lam.size
    counts = rng.poisson(lam, size=(n_slots, K))
    total = int(counts.sum())
    instants = rng.random(total).tolist()
    sizes = rng.standard_exponential(total)
    locs = np.repeat(np.tile(np.arange(K), n_slots), counts.ravel())
    sizes = (sizes * mean_bits[locs]).tolist()
    locs = locs.tolist()
    per_slot = counts.sum(axis=1).tolist()
    out = []
    i = 0
    for n in per_slot:
        if n == 0:
            out.append([])
        elif n == 1:
            out.append([(instants[i], locs[i], sizes[i])])
        else:
            out.append(sorted(zip(instants[i:i + n], locs[i:i + n], sizes[i:i + n])))
        i += n
    return out


def step(state: FlowState, policy: Policy, scenario: Scenario, stats: ChannelStats,
         rng: np.random.Generator) -> FlowState:
    """Return the state one slot later (the input state is not modified)."""
    new = state.copy()
    eng = _Engine(scenario, stats, policy)
    arrivals = _draw_arrivals(rng, scenario.arrival_rates, scenario.mean_file_bits, 1)[0]
    eng.run_slot(new, arrivals, rng)
    return new


# ---------------------------------------------------------------------------
# Traces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Trace:
    """Per-slot record of a run.

    ``x[t]`` is the flow count per location at the start of slot ``t``
    (``x[0]`` is the initial state, ``x[-1]`` the state after the last slot).
    """

    x: np.ndarray            # (T + 1, K)
    arrivals: np.ndarray     # (T, K)
    departures: np.ndarray   # (T, K)
    served_bits: np.ndarray  # (T, K)
    seed: Optional[int] = None
    scenario_hash: str = ""
    policy: str = ""

    @property
    def horizon(self) -> int:
        return self.arrivals.shape[0]

    @property
    def total(self) -> np.ndarray:
        return self.x.sum(axis=1)

    def conserved(self) -> bool:
        expect = self.x[0] + np.vstack([np.zeros((1, self.x.shape[1]), np.int64),
                                        np.cumsum(self.arrivals - self.departures, axis=0)])
        return bool(np.array_equal(expect, self.x))


def run(scenario: Scenario, stats: ChannelStats, policy: Policy, horizon: int,
        rng=None, state: Optional[FlowState] = None, chunk: int = 4096,
        scenario_hash: str = "") -> Trace:
    """Simulate ``horizon`` slots.

    ``rng`` may be a seed or a Generator. Arrivals and policy randomness use
    separate child streams, so two policies run with the same seed see the
    same arrival sequence.
    """
    if horizon < 1:
        raise DomainError("horizon must be >= 1")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    root = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    arr_rng, pol_rng = root.spawn(2)
    K = scenario.K
    state = FlowState.empty(K) if state is None else state.copy()
    eng = _Engine(scenario, stats, policy)
    x = np.zeros((horizon + 1, K), dtype=np.int64)
    arr = np.zeros((horizon, K), dtype=np.int64)
    dep = np.zeros((horizon, K), dtype=np.int64)
    served = np.zeros((horizon, K))
    x[0] = state.X
    lam = scenario.arrival_rates
    bits = scenario.mean_file_bits
    t = 0
    while t < horizon:
        n = min(chunk, horizon - t)
        batch = _draw_arrivals(arr_rng, lam, bits, n)
        for i in range(n):
            a, d, s = eng.run_slot(state, batch[i], pol_rng)
            arr[t] = a
            dep[t] = d
            served[t] = s
            t += 1
            x[t] = [len(qk) for qk in state.queues]
    return Trace(x, arr, dep, served, seed, scenario_hash, policy.kind)


def moving_average(series, window: int) -> np.ndarray:
    """Trailing moving average (expanding over the first ``window`` entries).

    Accepts a :class:`Trace` (uses the total flow count) or an array; 2-D
    arrays are averaged column-wise. If ``window`` exceeds the length, the
    single full-length mean is returned.
    """
    if window < 1:
        raise DomainError("window must be >= 1")
    y = series.total if isinstance(series, Trace) else np.asarray(series, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    if n == 0:
        raise DomainError("empty series")
    if window > n:
        return y.mean(axis=0, keepdims=True)
    c = np.cumsum(np.concatenate([np.zeros((1,) + y.shape[1:]), y]), axis=0)
    idx = np.arange(1, n + 1)
    lo = np.maximum(idx - window, 0)
    counts = (idx - lo).reshape((-1,) + (1,) * (y.ndim - 1))
    return (c[idx] - c[lo]) / counts


def stability_metric(trace, T: Optional[int] = None) -> float:
    """Time average of the total flow count over the first ``T`` slots."""
    total = trace.total if isinstance(trace, Trace) else np.asarray(trace)
    if total.ndim > 1:
        total = total.sum(axis=1)
    if total.size == 0:
        raise DomainError("empty trace")
    T = total.size if T is None else int(T)
    if T < 1 or T > total.size:
        raise DomainError(f"T must be in [1, {total.size}]")
    return float(np.mean(total[:T]))


@dataclass(frozen=True)
class TrendResult:
    slope: float       # flows per slot
    stderr: float      # HAC standard error
    p_positive: float  # one-sided p-value for slope > 0

    def diverging(self, alpha: float = 0.05) -> bool:
        return self.p_positive < alpha


def trend_test(series, fraction: float = 0.25, maxlags: Optional[int] = None) -> TrendResult:
    """OLS slope over the last ``fraction`` of ``series`` with Newey-West errors."""
    import statsmodels.api as sm
    from scipy.stats import norm

    y = np.asarray(series, dtype=float).ravel()
    n0 = int(math.floor(y.size * (1.0 - fraction)))
    y = y[n0:]
    if y.size < 3:
        raise DomainError("series too short for a trend test")
    t = np.arange(y.size, dtype=float)
    if np.ptp(y) == 0.0:
        return TrendResult(0.0, 0.0, 1.0)
    lags = maxlags if maxlags is not None else max(1, y.size // 5)
    fit = sm.OLS(y, sm.add_constant(t)).fit(cov_type="HAC", cov_kwds={"maxlags": lags})
    slope, se = float(fit.params[1]), float(fit.bse[1])
    p = float(norm.sf(slope / se)) if se > 0 else (0.0 if slope > 0 else 1.0)
    return TrendResult(slope, se, p)


def slope_unstable(trace: Trace, window: int, threshold: float) -> bool:
    """Divergence rule: slope of the moving average over its last half exceeds ``threshold``."""
    ma = moving_average(trace, window)
    y = ma[ma.size // 2:]
    if y.size < 2:
        return False
    t = np.arange(y.size, dtype=float)
    slope = np.polyfit(t, y, 1)[0]
    return bool(slope > threshold)


# ---------------------------------------------------------------------------
# Stability region
# ---------------------------------------------------------------------------

def alone_rates(scenario: Scenario, stats: ChannelStats, eta_value: float) -> np.ndarray:
    """Flows/slot each location gets when it is the only transmitter."""
    out = np.zeros(scenario.K)
    for k in range(scenario.K):
        s = sinr_vector(stats, eta_value, [k], scenario.tx_power, scenario.noise_power)[k]
        out[k] = scenario.bandwidth_hz * scenario.slot_s * math.log2(1.0 + s) / scenario.mean_file_bits[k]
    return out


@dataclass(frozen=True)
class RegionPoint:
    direction: tuple
    scale: float        # boundary scale along the ray (flows/slot)
    lower: float        # largest scale classified stable
    upper: float        # smallest scale classified unstable
    bracketed: bool     # False: stable at the largest probed scale
    policy: str

    @property
    def rates(self) -> np.ndarray:
        return self.scale * np.asarray(self.direction)


def probe_unstable(scenario, stats, policy, rates, T, window, threshold, seed) -> bool:
    tr = run(scenario.with_rates(rates), stats, policy, T, seed)
    return slope_unstable(tr, window, threshold)


def estimate_region(scenario: Scenario, stats: ChannelStats, policy: Policy,
                    rays: Sequence, T: int = 20000, threshold: float = 1e-3,
                    rng=0, window: int = 500, rel_tol: float = 0.03,
                    scale_max: Optional[float] = None, max_probes: int = 12) -> list:
    """Boundary scale along each ray by bisection on stable/unstable probes.

    ``scale_max`` defaults to 1.2 x the smallest ``alone_rate / direction``,
    beyond which some location is overloaded under any policy. Probe seeds
    depend only on ``rng`` and the probe position, so two policies bisected
    with the same ``rng`` see common random numbers.
    """
    base = int(rng) if isinstance(rng, (int, np.integer)) else int(np.random.default_rng(rng).integers(2 ** 31))
    caps = alone_rates(scenario, stats, policy.eta if policy.static else float(stats.M))
    if policy.kind == "random":
        # random phases cannot beat the optimum over phases
        from .phase_opt import solve_sdp
        caps = alone_rates(scenario, stats, solve_sdp(stats.R).upper)
    out = []
    for i, d in enumerate(rays):
        d = np.asarray(d, dtype=float)
        if np.any(d < 0) or not np.any(d > 0):
            raise DomainError("ray directions must be nonnegative and nonzero")
        d = d / np.linalg.norm(d)
        pos = d > 0
        hi = scale_max if scale_max is not None else 1.2 * float(np.min(caps[pos] / d[pos]))
        lo = 0.0
        seeds = np.random.SeedSequence([base, i]).generate_state(max_probes + 1)
        if not probe_unstable(scenario, stats, policy, hi * d, T, window, threshold, int(seeds[0])):
            out.append(RegionPoint(tuple(d), hi, hi, math.inf, False, policy.kind))
            continue
        probes = 1
        while (hi - lo) > rel_tol * hi and probes <= max_probes:
            mid = 0.5 * (lo + hi)
            if probe_unstable(scenario, stats, policy, mid * d, T, window, threshold, int(seeds[probes])):
                hi = mid
            else:
                lo = mid
            probes += 1
        out.append(RegionPoint(tuple(d), 0.5 * (lo + hi), lo, hi, True, policy.kind))
    return out


def rays_from_angles(degrees: Sequence[float]) -> list:
    return [(math.cos(math.radians(a)), math.sin(math.radians(a))) for a in degrees]


@dataclass(frozen=True)
class SweepResult:
    rates: np.ndarray
    metric: np.ndarray
    unstable: np.ndarray  # slope rule per grid point
    policy: str

    @property
    def onset(self) -> float:
        """Smallest grid rate flagged unstable (inf if none)."""
        idx = np.flatnonzero(self.unstable)
        return float(self.rates[idx[0]]) if idx.size else math.inf


def metric_sweep(scenario: Scenario, stats: ChannelStats, policy: Policy, rates: Sequence[float],
                 T: int, seed=0, window: int = 500, threshold: float = 1e-3) -> SweepResult:
    """Stability metric and divergence flag for a common arrival rate at every location."""
    metric, flags = [], []
    for lam in rates:
        tr = run(scenario.with_rates(np.full(scenario.K, float(lam))), stats, policy, T, seed)
        metric.append(stability_metric(tr, T))
        flags.append(slope_unstable(tr, window, threshold))
    return SweepResult(np.asarray(rates, dtype=float), np.array(metric), np.array(flags), policy.kind)
