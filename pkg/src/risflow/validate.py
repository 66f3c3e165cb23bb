"""Oracle suite run by ``risflow validate``.

Each check compares a model quantity with an independent reference (sample
moments, closed-form queueing results, exhaustive enumeration) and reports
the measured discrepancy next to its tolerance.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
import numpy as np

from .channel import (ChannelStats, CorrelationModel, Scenario, build_correlation, calibrated_noise_power,
                      sample_realization)
from .phase_opt import gaussian_randomization, random_phases, random_psd, solve_sdp
from .sinr import SinrInputs, eta, eta_trace, moments_monte_carlo, sinr_closed_form


@dataclass(frozen=True)
class OracleResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name:<22} measured={self.measured:.4g} tol={self.tolerance:.4g} ({self.seconds:.1f}s)"


def _correlation(rng, reduced):
    worst = 0.0
    for _ in range(20 if reduced else 100):
        rt = rng.uniform(0, 1) * np.exp(1j * rng.uniform(0, 2 * np.pi))
        rr = rng.uniform(0, 1) * np.exp(1j * rng.uniform(0, 2 * np.pi))
        m = CorrelationModel.exponential(rt, rr)
        Rt, Rr = build_correlation(m, 16, "t"), build_correlation(m, 16, "r")
        R = Rt * Rr.T
        for A in (Rt, Rr, R):
            worst = max(worst, -np.linalg.eigvalsh(0.5 * (A + A.conj().T))[0])
    iso = build_correlation(CorrelationModel.isotropic(0.25), 16)
    worst = max(worst, -np.linalg.eigvalsh(iso)[0])
    return worst, 1e-9


def _trace_identity(rng, reduced):
    worst = 0.0
    for _ in range(100):
        M = int(rng.integers(2, 12))
        Rt, Rr = random_psd(M, rng), random_psd(M, rng)
        ph = random_phases(M, rng)
        a = eta_trace(ph, Rt, Rr)
        b = float(np.real(np.vdot(ph.phi, (Rt * Rr.T) @ ph.phi)))
        worst = max(worst, abs(a - b) / abs(a))
    return worst, 1e-10


def _sample_covariance(rng, reduced):
    n = 20000 if reduced else 100000
    st = ChannelStats.from_matrices([2.0], [1.0], np.eye(4), build_correlation(
        CorrelationModel.exponential(0.9), 4))
    G = np.array([sample_realization(st, rng).g[0] for _ in range(n)])
    C = G.T @ G.conj() / n
    err = np.abs(C - 2.0 * st.R_r).max() / 2.0
    return err, 0.05 if not reduced else 0.1


def _eta_mean(rng, reduced):
    M = 16
    R = random_psd(M, rng)
    n = 2000 if reduced else 10000
    vals = [eta(random_phases(M, rng), R) for _ in range(n)]
    return abs(np.mean(vals) / M - 1), 0.02 if not reduced else 0.05


def _mc_sinr(rng, reduced):
    M, N, K = 256, 16, 4
    st = ChannelStats.from_matrices(rng.uniform(0.5, 2, K), rng.uniform(0.5, 2, N), np.eye(M), np.eye(M))
    ph = random_phases(M, rng)
    # noise at 0 dB on the reference link, as in the default configs
    noise = calibrated_noise_power(st, 1.0, 0.0)
    inp = SinrInputs(st, eta(ph, st), range(K), 1.0, noise)
    n = 2000 if reduced else 10000
    mc = moments_monte_carlo(st, ph, n, rng)
    worst = max(abs(mc.sinr(k, range(K), 1.0, noise) / sinr_closed_form(k, inp) - 1) for k in range(K))
    return worst, 0.02 if not reduced else 0.04


def _sdr_ratio(rng, reduced):
    n = 30 if reduced else 100
    ok = 0
    for _ in range(n):
        R = random_psd(8, rng)
        sdp = solve_sdp(R, rng=rng)
        ph = gaussian_randomization(sdp, R, 1000, rng)
        ok += eta(ph, R) / sdp.upper >= math.pi / 4
    return 1 - ok / n, 0.01 if not reduced else 0.04


def _mm1(rng, reduced):
    from .flowsim import Policy, run, stability_metric
    from .sinr import sinr_vector

    st = ChannelStats.from_matrices([1.0], [1.0] * 4, np.eye(8), np.eye(8))
    sc = Scenario([[0.5, 0.5]], [[0.2, 0.2]], 8, 1.0, 1.0, 0.0, 1e6)
    mu = sc.bandwidth_hz * sc.slot_s * math.log2(1 + sinr_vector(st, 8.0, [0], 1.0, 1.0)[0]) / 1e6
    sc = sc.with_rates([0.5 * mu])
    T = 50000 if reduced else 200000
    tr = run(sc, st, Policy("optimized", 8.0), T, int(rng.integers(2 ** 31)))
    return abs(stability_metric(tr) - 1.0), 0.05 if not reduced else 0.1


def _fluid_drain(rng, reduced):
    from .fluid import fluid_integrate

    R, lam, dt = 2.0, 0.5, 1e-3
    tr = fluid_integrate([1.0], [lam], lambda a: np.array([R]), 2.0, dt)
    return abs(tr.empty_time() - 1.0 / (R - lam)), 2 * dt


def _lemma1(rng, reduced):
    from .fluid import lemma1_check

    g = rng.uniform(1e-6, 1.0, 10000)
    x = np.exp(rng.uniform(-10, 10, 10000))
    return float(not lemma1_check(g, x)), 0.0


CHECKS: dict = {
    "correlation_psd": _correlation,
    "trace_identity": _trace_identity,
    "sample_covariance": _sample_covariance,
    "random_phase_eta": _eta_mean,
    "mc_vs_closed_sinr": _mc_sinr,
    "sdr_pi_over_4": _sdr_ratio,
    "mm1_queue": _mm1,
    "fluid_linear_drain": _fluid_drain,
    "lemma1_sweep": _lemma1,
}


def run_oracles(seed: int = 0, reduced: bool = False, only=None) -> list:
    out = []
    for i, (name, fn) in enumerate(CHECKS.items()):
        if only and name not in only:
            continue
        rng = np.random.default_rng([seed, i])
        t = time.perf_counter()
        measured, tol = fn(rng, reduced)
        out.append(OracleResult(name, bool(measured <= tol), float(measured), float(tol),
                                time.perf_counter() - t))
    return out
