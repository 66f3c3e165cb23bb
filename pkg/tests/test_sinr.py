import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from risflow.channel import ChannelStats, CorrelationModel, build_correlation
from risflow.errors import DimensionError, DomainError
from risflow.phase_opt import equal_phase_config, random_phases, random_psd
from risflow.sinr import (PhaseConfig, SinrInputs, eta, eta_trace, fourth_order_trace, interference_free_ceiling,
                          moments_closed_form, moments_exact, moments_monte_carlo, rate, sinr_closed_form,
                          sinr_monte_carlo, sinr_vector)


def _stats(M=8, K=3, N=4, seed=0, corr=None):
    r = np.random.default_rng(seed)
    if corr is None:
        Rt = Rr = np.eye(M)
    else:
        Rt, Rr = (build_correlation(corr, M, s) for s in "tr")
    return ChannelStats.from_matrices(r.uniform(0.5, 2, K), r.uniform(0.5, 2, N), Rt, Rr)


def _reference_sinr(k, stats, eta_v, active, P, noise):
    # written out term by term, independent of sinr_vector
    a, b = stats.alpha_loc, stats.alpha_ap
    num = a[k] ** 2 * b.sum() ** 2 * eta_v * P[k]
    den = sum(a[k] * a[j] * (b ** 2).sum() * eta_v * P[j] for j in active) + noise * a[k] * b.sum()
    return num / den


class TestEta:
    def test_identity_gives_M(self, rng):
        R = np.eye(7)
        assert eta(random_phases(7, rng), R) == pytest.approx(7)

    def test_equal_phases_sum_entries(self):
        Rt = build_correlation(CorrelationModel.exponential(0.6), 5)
        s = ChannelStats.from_matrices([1.0], [1.0], Rt, Rt)
        assert eta(equal_phase_config(5), s) == pytest.approx(s.R.sum().real)

    def test_random_mean_is_trace(self, rng):
        R = random_psd(12, rng)
        vals = [eta(random_phases(12, rng), R) for _ in range(10_000)]
        assert np.mean(vals) == pytest.approx(12, rel=0.02)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            eta(PhaseConfig(np.zeros(3)), np.eye(4))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 12), st.integers(0, 2 ** 32 - 1))
    def test_trace_identity(self, M, seed):
        r = np.random.default_rng(seed)
        Rt, Rr = random_psd(M, r), random_psd(M, r)
        ph = random_phases(M, r)
        direct = eta_trace(ph, Rt, Rr)
        assert eta(ph, Rt * Rr.T) == pytest.approx(direct, rel=1e-10, abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 12), st.integers(0, 2 ** 32 - 1))
    def test_bounds(self, M, seed):
        r = np.random.default_rng(seed)
        R = random_psd(M, r)
        v = eta(random_phases(M, r), R)
        lam = np.linalg.eigvalsh(R)[-1]
        assert 0 <= v <= M * lam * (1 + 1e-12) <= M * M * (1 + 1e-12)

    def test_phase_modulus(self, rng):
        ph = PhaseConfig(rng.normal(0, 10, 50))
        assert np.all(np.abs(np.abs(ph.phi) - 1) < 1e-12)
        assert np.all((ph.theta >= 0) & (ph.theta < 2 * np.pi))


class TestClosedForm:
    def test_matches_written_out_formula(self):
        s = _stats()
        P = np.array([0.1, 0.2, 0.3])
        inp = SinrInputs(s, 5.0, (0, 2), P, 0.7)
        for k in (0, 2):
            assert sinr_closed_form(k, inp) == pytest.approx(_reference_sinr(k, s, 5.0, (0, 2), P, 0.7))

    def test_zero_eta(self):
        s = _stats()
        assert sinr_closed_form(0, SinrInputs(s, 0.0, (0, 1), 1.0, 1.0)) == 0.0

    def test_ceiling(self):
        s = _stats(N=6)
        v = sinr_closed_form(1, SinrInputs(s, 3.0, (1,), 1.0, 1e-20))
        b = s.alpha_ap
        assert v == pytest.approx(b.sum() ** 2 / (b ** 2).sum(), rel=1e-9)
        assert interference_free_ceiling(s) == pytest.approx(v, rel=1e-9)

    def test_errors(self):
        s = _stats()
        with pytest.raises(DomainError):
            sinr_closed_form(1, SinrInputs(s, 1.0, (0,), 1.0, 1.0))
        with pytest.raises(DomainError):
            sinr_closed_form(0, SinrInputs(s, -1.0, (0,), 1.0, 1.0))

    @settings(max_examples=100, deadline=None)
    @given(st.floats(1e-3, 1e3), st.floats(1.001, 10), st.integers(0, 2 ** 32 - 1))
    def test_increasing_in_eta(self, e1, factor, seed):
        s = _stats(seed=seed % 1000)
        inp = lambda e: SinrInputs(s, e, (0, 1, 2), 1.0, 0.5)
        assert sinr_closed_form(0, inp(e1 * factor)) > sinr_closed_form(0, inp(e1))

    @settings(max_examples=50, deadline=None)
    @given(st.floats(1e-2, 1e2), st.integers(0, 2 ** 32 - 1))
    def test_adding_interferer_never_helps(self, e, seed):
        s = _stats(K=4, seed=seed % 1000)
        base = sinr_vector(s, e, [0, 1], 1.0, 0.3)
        more = sinr_vector(s, e, [0, 1, 3], 1.0, 0.3)
        assert np.all(more[:2] <= base[:2])

    def test_inactive_get_zero(self):
        s = _stats()
        v = sinr_vector(s, 2.0, np.array([True, False, True]), 1.0, 1.0)
        assert v[1] == 0 and v[0] > 0


class TestRate:
    def test_values(self):
        assert rate(0.0, 20e6, 1e-3) == 0.0
        assert rate(1.0, 20e6, 1e-3) == pytest.approx(20_000)

    def test_monotone(self):
        r = rate(np.linspace(0, 100, 1001), 1e6, 1.0)
        assert np.all(np.diff(r) > 0)

    def test_negative(self):
        with pytest.raises(DomainError):
            rate(-0.1, 1.0, 1.0)


class TestMonteCarlo:
    def test_identity_M256(self, rng):
        # noise calibrated to 0 dB on the reference link; at this size the
        # approximation error is about 1% (see moments_exact)
        from risflow.channel import calibrated_noise_power

        s = _stats(M=256, K=4, N=16, seed=3)
        ph = random_phases(256, rng)
        noise = calibrated_noise_power(s, 1.0, 0.0)
        inp = SinrInputs(s, eta(ph, s), range(4), 1.0, noise)
        mc = moments_monte_carlo(s, ph, 10_000, rng)
        for k in range(4):
            assert mc.sinr(k, range(4), 1.0, noise) == pytest.approx(sinr_closed_form(k, inp), rel=0.02)

    def test_single_user_low_noise(self, rng):
        # one AP, so the relative uncertainty term is 2/M
        s = ChannelStats.from_matrices([1.0], [1.0], np.eye(256), np.eye(256))
        ph = random_phases(256, rng)
        inp = SinrInputs(s, eta(ph, s), (0,), 1.0, 1e-15)
        ratio = sinr_monte_carlo(0, inp, ph, 10_000, rng) / sinr_closed_form(0, inp)
        assert 0.98 <= ratio <= 1.02

    def test_desired_signal(self, rng):
        s = _stats(M=64, K=2, N=4)
        ph = PhaseConfig(np.zeros(64))
        mc = moments_monte_carlo(s, ph, 10_000, rng)
        expect = (s.alpha_loc * 64 * s.alpha_ap.sum()) ** 2
        np.testing.assert_allclose(mc.ds, expect, rtol=0.03)

    def test_terms_match_exact_moments(self, rng):
        corr = CorrelationModel.exponential(0.8, 0.5 + 0.3j)
        s = _stats(M=32, K=3, N=5, corr=corr)
        ph = random_phases(32, rng)
        mc = moments_monte_carlo(s, ph, 20_000, rng)
        ex = moments_exact(s, ph)
        np.testing.assert_allclose(mc.gain, ex.gain, rtol=0.03)
        np.testing.assert_allclose(mc.bu, ex.bu, rtol=0.03)
        np.testing.assert_allclose(mc.ui, ex.ui, rtol=0.03)
        np.testing.assert_allclose(mc.noise(0.5), 0.5 * ex.gain, rtol=0.03)

    def test_closed_form_is_exact_minus_fourth_order(self, rng):
        s = _stats(M=16, K=2, N=3, corr=CorrelationModel.exponential(0.5))
        ph = random_phases(16, rng)
        e = eta(ph, s)
        cf, ex = moments_closed_form(s, e), moments_exact(s, ph)
        tau = fourth_order_trace(ph, s)
        b = s.alpha_ap
        a = s.alpha_loc
        np.testing.assert_allclose(ex.bu - cf.bu, a ** 2 * tau * ((b ** 2).sum() + b.sum() ** 2))
        np.testing.assert_allclose(cf.gain, ex.gain)

    def test_gain_uses_eta_trace(self):
        s = _stats(M=6, corr=CorrelationModel.exponential(0.4, 0.2j))
        ph = PhaseConfig(np.arange(6) * 0.3)
        cf = moments_closed_form(s, eta_trace(ph, s.R_t, s.R_r))
        np.testing.assert_allclose(cf.gain, s.alpha_loc * eta(ph, s) * s.alpha_ap.sum())

    def test_sample_count(self, rng):
        with pytest.raises(DomainError):
            moments_monte_carlo(_stats(), PhaseConfig(np.zeros(8)), 0, rng)
