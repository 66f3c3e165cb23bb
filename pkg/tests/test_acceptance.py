"""End-to-end acceptance checks, one test per criterion.

Each test prints a single PASS/FAIL line with the measured value and the
wall-clock time, then asserts both the criterion and its runtime limit.
"""
import itertools
import math
import time

import numpy as np
import pytest

from conftest import single_queue
from risflow.channel import ChannelStats, CorrelationModel, build_correlation, calibrated_noise_power
from risflow.cli import main
from risflow.config import load_config
from risflow.flowsim import (Policy, estimate_region, make_policy, metric_sweep, moving_average, rays_from_angles,
                             run, stability_metric, trend_test)
from risflow.fluid import (FluidState, all_active_rates, box_boundary_scale, drift_check, fluid_integrate,
                           lemma1_check, rate_map, select_epsilon)
from risflow.output import read_csv_body
from risflow.phase_opt import (brute_force_opt, discrete_accuracy_bound, equal_phase_config, optimize,
                               random_phases, random_psd)
from risflow.sinr import SinrInputs, eta, eta_trace, moments_monte_carlo, sinr_closed_form

pytestmark = pytest.mark.slow


@pytest.fixture
def report(capsys):
    t0 = time.perf_counter()

    def emit(n, ok, detail, limit):
        dt = time.perf_counter() - t0
        ok = bool(ok) and dt <= limit
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n:2d}: {detail} ({dt:.1f}s / {limit:g}s)")
        return dt

    return emit


def test_c01_closed_form_vs_monte_carlo(report):
    rng = np.random.default_rng(101)
    M, N, K = 256, 16, 4
    worst = 0.0
    for _ in range(10):
        st = ChannelStats.from_matrices(rng.uniform(0.5, 2, K), rng.uniform(0.5, 2, N), np.eye(M), np.eye(M))
        ph = random_phases(M, rng)
        noise = calibrated_noise_power(st, 1.0, 0.0)
        inp = SinrInputs(st, eta(ph, st), range(K), 1.0, noise)
        mc = moments_monte_carlo(st, ph, 10_000, rng)
        for k in range(K):
            worst = max(worst, abs(mc.sinr(k, range(K), 1.0, noise) / sinr_closed_form(k, inp) - 1))
    dt = report(1, worst <= 0.02, f"worst relative SINR error {worst:.4f} <= 0.02", 120)
    assert worst <= 0.02 and dt <= 120


def test_c02_trace_identity(report):
    rng = np.random.default_rng(102)
    worst = 0.0
    for _ in range(100):
        M = int(rng.integers(1, 17))
        Rt, Rr = random_psd(M, rng), random_psd(M, rng)
        ph = random_phases(M, rng)
        a, b = eta_trace(ph, Rt, Rr), eta(ph, Rt * Rr.T)
        worst = max(worst, abs(a - b) / abs(a))
    dt = report(2, worst <= 1e-10, f"worst relative gap {worst:.2e}", 1)
    assert worst <= 1e-10 and dt <= 1


def test_c03_sdr_guarantee(report):
    rng = np.random.default_rng(103)
    ok = {8: 0, 16: 0}
    for M in ok:
        for _ in range(100):
            R = random_psd(M, rng)
            sol = optimize(R, n_rand=1000, rng=rng)
            ok[M] += sol.eta / sol.sdp_upper >= math.pi / 4
    worst = math.inf
    for M in (4, 5, 6):
        for _ in range(5):
            R = random_psd(M, rng)
            star = brute_force_opt(R, 16)[1]
            worst = min(worst, optimize(R, n_rand=1000, rng=rng).eta / star)
    good = min(ok.values()) >= 99 and worst >= math.pi / 4
    dt = report(3, good, f"ratio >= pi/4 in {ok[8]}/100 (M=8), {ok[16]}/100 (M=16); "
                         f"min eta/eta*(L=16) = {worst:.4f}", 300)
    assert good and dt <= 300


def test_c04_equal_phase_optimal(report):
    rng = np.random.default_rng(104)
    roots = np.exp(2j * np.pi * np.arange(16) / 16)
    # first phase pinned to 1; eta is invariant to a common rotation
    grid = np.array([np.concatenate([[1.0], roots[list(c)]]) for c in itertools.product(range(16), repeat=3)])
    worst = -math.inf
    for _ in range(20):
        rho = 0.95 * math.sqrt(rng.uniform()) * np.exp(1j * rng.uniform(0, 2 * np.pi))
        Rt = build_correlation(CorrelationModel.exponential(rho), 4)
        R = Rt * Rt.T
        best = np.max(np.real(np.einsum("ni,ij,nj->n", grid.conj(), R, grid)))
        e = eta(equal_phase_config(4), R)
        worst = max(worst, best - e)
    dt = report(4, worst <= 1e-9, f"max(grid best - equal) = {worst:.2e}", 120)
    assert worst <= 1e-9 and dt <= 120


def test_c05_discrete_bound(report):
    rng = np.random.default_rng(105)
    counts = {}
    for L in (2, 4, 8):
        bound = discrete_accuracy_bound(L)
        counts[L] = sum(
            (lambda s: s.eta / s.sdp_upper >= bound)(optimize(random_psd(8, rng), "discrete", levels=L, rng=rng))
            for _ in range(100))
    good = min(counts.values()) >= 99
    dt = report(5, good, "passes per L " + ", ".join(f"L={L}: {c}/100" for L, c in counts.items()), 120)
    assert good and dt <= 120


def test_c06_mm1_mean(report):
    sc, st, e, mu = single_queue()
    tr = run(sc.with_rates([0.5 * mu]), st, Policy("optimized", e), 1_000_000, 6)
    m = stability_metric(tr)
    err = abs(m - 1.0)
    dt = report(6, err <= 0.05, f"time-average X = {m:.4f}, target 1.0", 60)
    assert err <= 0.05 and dt <= 60


def test_c07_containment(report, desk):
    cfg, stats, sol = desk
    rays = rays_from_angles([15, 30, 45, 60, 75])
    kw = dict(T=100_000, rel_tol=0.01, rng=3)
    opt = estimate_region(cfg.scenario, stats, make_policy("optimized", stats, sol), rays, **kw)
    tdma = estimate_region(cfg.scenario, stats, make_policy("tdma", stats, sol), rays, **kw)
    pairs = [(a.scale, b.scale) for a, b in zip(opt, tdma)]
    good = all(a >= b for a, b in pairs) and all(p.bracketed for p in opt + tdma)
    detail = "optimized/tdma " + " ".join(f"{a:.3f}/{b:.3f}" for a, b in pairs)
    dt = report(7, good, detail, 900)
    assert good and dt <= 900


def test_c08_moving_average_convergence(report, desk):
    cfg, stats, sol = desk
    pol = make_policy("optimized", stats, sol)
    d = np.asarray(rays_from_angles([45])[0])
    (pt,) = estimate_region(cfg.scenario, stats, pol, [d], T=50_000, rel_tol=0.02, rng=8)
    res = {}
    for f in (0.8, 1.2):
        tr = run(cfg.scenario.with_rates(f * pt.scale * d), stats, pol, 100_000, 8)
        res[f] = trend_test(moving_average(tr.total[:-1], 500))
    good = pt.bracketed and not res[0.8].diverging() and res[1.2].diverging()
    detail = (f"boundary {pt.scale:.3f}; 0.8x slope {res[0.8].slope:.2e} p={res[0.8].p_positive:.3f}, "
              f"1.2x slope {res[1.2].slope:.2e} p={res[1.2].p_positive:.3g}")
    dt = report(8, good, detail, 300)
    assert good and dt <= 300


def test_c09_grid_sweep(report):
    cfg = load_config(profile="grid")
    stats = cfg.stats()
    sol = optimize(stats, rng=np.random.default_rng(cfg.seed))
    rates = [0.02, 0.04, 0.06, 0.08, 0.1, 0.12, 0.14, 0.16, 0.18, 0.2, 0.25]
    onset = {}
    for kind in ("random", "optimized"):
        onset[kind] = metric_sweep(cfg.scenario, stats, make_policy(kind, stats, sol), rates, 10_000, seed=9).onset
    good = onset["random"] < onset["optimized"]
    dt = report(9, good, f"divergence onset random {onset['random']:g} < optimized {onset['optimized']:g}", 900)
    assert good and dt <= 900


def test_c10_fluid_drift(report, desk):
    cfg, stats, sol = desk
    R = rate_map(cfg.scenario, stats, sol.eta)
    box = all_active_rates(R, 2)
    d = np.array([1.0, 1.0]) / math.sqrt(2)
    s = box_boundary_scale(d, box)
    lam = 0.8 * s * d
    # the all-active box lies inside the stability region, so gamma * lam does too
    eps = select_epsilon(lam, s, sol.gamma)
    dt_ = 1e-2
    inside = drift_check(fluid_integrate(FluidState.normalized([1, 1]), lam, R, 60, dt_), lam, sol.gamma, eps)
    alone = R(np.array([False, True]))[1]
    lam_out = np.array([0.1, 1.2 * alone])
    outside = drift_check(fluid_integrate(FluidState.normalized([1, 1]), lam_out, R, 30, dt_),
                          lam_out, sol.gamma, eps)
    good = inside.negative_drift and inside.drained_by_bound(5 * dt_) and outside.max_drift > 0
    detail = (f"inside empties at t={inside.empty_time:.2f} <= T={inside.T:.2f}, max drift {inside.max_drift:.3g}; "
              f"outside max drift {outside.max_drift:.3g}")
    dt = report(10, good, detail, 120)
    assert good and dt <= 120


def test_c11_lemma1_sweep(report):
    rng = np.random.default_rng(111)
    g = rng.uniform(1e-9, 1, 10_000)
    x = np.exp(rng.uniform(-20, 20, 10_000))
    lhs, rhs = np.log1p(g * x), g * np.log1p(x)
    violations = int(np.sum(lhs < rhs * (1 - 1e-12)))
    good = violations == 0 and lemma1_check(g, x)
    dt = report(11, good, f"{violations} violations in 10000 pairs", 1)
    assert good and dt <= 1


def test_c12_reproducible_trace(report, tmp_path):
    bodies = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["simulate", "--slots", "5000", "--seed", "12", "--out", str(out)]) == 0
        bodies.append(read_csv_body(out / "trace.csv").encode())
    same = bodies[0] == bodies[1]
    dt = report(12, same, f"trace bodies identical ({len(bodies[0])} bytes)", 60)
    assert same
