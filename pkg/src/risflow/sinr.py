"""Uplink SINR of the RIS-assisted cell-free system.

The phase configuration enters every SINR through a single scalar
``eta = phi^H R phi``. Three routes to the SINR terms are provided:

* ``moments_closed_form`` - the large-M Gaussian approximation, which is what
  ``sinr_closed_form`` evaluates;
* ``moments_monte_carlo`` - sampled channels, the independent oracle;
* ``moments_exact`` - finite-M moments of the product channel. These differ
  from the closed form by terms of relative size ``tau / eta**2 * (N_eff + 1)``
  in the interference and uncertainty terms, where
  ``tau = tr((R_t Theta R_r Theta^H)^2)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .channel import ChannelStats, sample_cascaded
from .errors import DimensionError, DomainError


@dataclass(frozen=True)
class PhaseConfig:
    """RIS phase shifts ``theta`` in [0, 2pi); ``phi = exp(1j * theta)``."""

    theta: np.ndarray

    def __post_init__(self):
        th = np.mod(np.asarray(self.theta, dtype=float).ravel(), 2 * np.pi)
        th[th >= 2 * np.pi] = 0.0
        object.__setattr__(self, "theta", th)

    @classmethod
    def from_phi(cls, phi) -> "PhaseConfig":
        # arg(0) is taken as 0
        return cls(np.angle(np.asarray(phi, dtype=complex)))

    @property
    def phi(self) -> np.ndarray:
        return np.exp(1j * self.theta)

    @property
    def M(self) -> int:
        return self.theta.size


def _R(stats_or_R) -> np.ndarray:
    return stats_or_R.R if isinstance(stats_or_R, ChannelStats) else np.asarray(stats_or_R)


def eta(phase: Union[PhaseConfig, np.ndarray], stats_or_R) -> float:
    """``phi^H R phi``, the phase-dependent gain shared by all locations."""
    phi = phase.phi if isinstance(phase, PhaseConfig) else np.asarray(phase, dtype=complex)
    R = _R(stats_or_R)
    if R.shape != (phi.size, phi.size):
        raise DimensionError(f"phase length {phi.size} does not match R of shape {R.shape}")
    return max(float(np.real(np.vdot(phi, R @ phi))), 0.0)


def eta_trace(phase: Union[PhaseConfig, np.ndarray], R_t: np.ndarray, R_r: np.ndarray) -> float:
    """``tr(Theta^H R_t Theta R_r)`` evaluated directly."""
    phi = phase.phi if isinstance(phase, PhaseConfig) else np.asarray(phase, dtype=complex)
    T = np.diag(phi)
    return float(np.real(np.trace(T.conj().T @ R_t @ T @ R_r)))


@dataclass(frozen=True)
class SinrInputs:
    stats: ChannelStats
    eta: float
    active: tuple
    powers: np.ndarray
    noise_power: float

    def __post_init__(self):
        object.__setattr__(self, "active", tuple(sorted(int(j) for j in self.active)))
        object.__setattr__(self, "powers", np.broadcast_to(
            np.asarray(self.powers, dtype=float), (self.stats.K,)).copy())


def sinr_vector(stats: ChannelStats, eta_value: float, active, powers, noise_power: float) -> np.ndarray:
    """SINR of every location given the set of transmitting locations.

    ``active`` is a boolean mask or an index iterable. Inactive locations get
    0. The interference sum includes the location itself (the
    beamforming-uncertainty term).
    """
    if eta_value < 0:
        raise DomainError("eta must be >= 0")
    mask = _mask(active, stats.K)
    a = stats.alpha_loc
    s1 = stats.alpha_ap.sum()
    s2 = np.dot(stats.alpha_ap, stats.alpha_ap)
    p = np.broadcast_to(np.asarray(powers, dtype=float), (stats.K,))
    load = np.dot(a[mask], p[mask])
    den = s2 * eta_value * load + noise_power * s1
    out = np.zeros(stats.K)
    if den > 0:
        out[mask] = a[mask] * s1 * s1 * eta_value * p[mask] / den
    return out


def _mask(active, K) -> np.ndarray:
    active = np.asarray(active if not isinstance(active, (set, frozenset)) else sorted(active))
    if active.dtype == bool:
        if active.shape != (K,):
            raise DimensionError("active mask must have length K")
        return active
    mask = np.zeros(K, dtype=bool)
    mask[active.astype(int)] = True
    return mask


def sinr_closed_form(k: int, inputs: SinrInputs) -> float:
    """Large-M effective SINR of location ``k``."""
    if inputs.eta < 0:
        raise DomainError("eta must be >= 0")
    if k not in inputs.active:
        raise DomainError(f"location {k} is not in the active set {inputs.active}")
    return float(sinr_vector(inputs.stats, inputs.eta, inputs.active, inputs.powers,
                             inputs.noise_power)[k])


def rate(sinr, bandwidth: float, slot: float):
    """Bits per slot: ``bandwidth * slot * log2(1 + sinr)``."""
    s = np.asarray(sinr, dtype=float)
    if np.any(s < 0):
        raise DomainError("sinr must be >= 0")
    r = bandwidth * slot * np.log2(1.0 + s)
    return float(r) if r.ndim == 0 else r


# ---------------------------------------------------------------------------
# Moment terms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Moments:
    """Second-order terms of the use-and-then-forget bound.

    ``gain[k] = E||u_k||^2`` (so ``|DS_k|^2 = gain**2`` and
    ``E|NO_k|^2 = noise * gain``), ``ui[k, j] = E|u_k^H u_j|^2`` and
    ``bu[k] = Var(||u_k||^2)``. The diagonal of ``ui`` is ``E||u_k||^4``.
    """

    gain: np.ndarray
    ui: np.ndarray
    bu: np.ndarray
    n_samples: int = 0

    @property
    def ds(self) -> np.ndarray:
        return self.gain ** 2

    def noise(self, noise_power: float) -> np.ndarray:
        return noise_power * self.gain

    def sinr(self, k: int, active, powers, noise_power: float) -> float:
        K = self.gain.size
        p = np.broadcast_to(np.asarray(powers, dtype=float), (K,))
        others = [j for j in _indices(active) if j != k]
        den = sum(self.ui[k, j] * p[j] for j in others) + self.bu[k] * p[k] + noise_power * self.gain[k]
        return float(self.ds[k] * p[k] / den) if den > 0 else 0.0


def _indices(active) -> list:
    a = np.asarray(active if not isinstance(active, (set, frozenset)) else sorted(active))
    return list(np.flatnonzero(a)) if a.dtype == bool else [int(j) for j in a]


def moments_closed_form(stats: ChannelStats, eta_value: float) -> Moments:
    a = stats.alpha_loc
    s1 = stats.alpha_ap.sum()
    s2 = np.dot(stats.alpha_ap, stats.alpha_ap)
    gain = a * eta_value * s1
    ui = np.outer(a, a) * eta_value ** 2 * s2
    bu = a ** 2 * eta_value ** 2 * s2
    np.fill_diagonal(ui, bu + gain ** 2)
    return Moments(gain, ui, bu)


def fourth_order_trace(phase: PhaseConfig, stats: ChannelStats) -> float:
    """``tau = tr((R_t C)^2)`` with ``C = Theta R_r Theta^H``."""
    phi = phase.phi
    C = phi[:, None] * stats.R_r * phi.conj()[None, :]
    A = stats.R_t @ C
    return float(np.real(np.trace(A @ A)))


def moments_exact(stats: ChannelStats, phase: PhaseConfig) -> Moments:
    """Exact moments for Gaussian ``g_k`` and ``h_n`` at finite M."""
    e = eta(phase, stats)
    tau = fourth_order_trace(phase, stats)
    a = stats.alpha_loc
    s1 = stats.alpha_ap.sum()
    s2 = np.dot(stats.alpha_ap, stats.alpha_ap)
    gain = a * e * s1
    ui = np.outer(a, a) * (e ** 2 * s2 + tau * s1 ** 2)
    bu = a ** 2 * ((e ** 2 + tau) * s2 + tau * s1 ** 2)
    np.fill_diagonal(ui, bu + gain ** 2)
    return Moments(gain, ui, bu)


def moments_monte_carlo(stats: ChannelStats, phase: PhaseConfig, n_samples: int,
                        rng: np.random.Generator, chunk: int = 1000) -> Moments:
    """Sample-average estimates of the moment terms.

    The noise term is not sampled: it is ``noise * E||u_k||^2`` exactly
    because the noise is independent of the channels.
    """
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    K = stats.K
    count = 0
    mean = np.zeros(K)
    m2 = np.zeros(K)
    ui_sum = np.zeros((K, K))
    for u in sample_cascaded(stats, phase.phi, n_samples, rng, chunk):
        G = np.matmul(u.conj().transpose(0, 2, 1), u)  # (s, K, K), G[k, j] = u_k^H u_j
        ui_sum += np.sum(np.abs(G) ** 2, axis=0)
        x = np.real(np.einsum("skk->sk", G))
        n = x.shape[0]
        bm = x.mean(axis=0)
        bm2 = ((x - bm) ** 2).sum(axis=0)
        delta = bm - mean
        tot = count + n
        mean = mean + delta * n / tot
        m2 = m2 + bm2 + delta ** 2 * count * n / tot
        count = tot
    bu = m2 / max(count - 1, 1)
    return Moments(mean, ui_sum / count, bu, count)


def sinr_monte_carlo(k: int, inputs: SinrInputs, phase: PhaseConfig, n_samples: int,
                     rng: np.random.Generator) -> float:
    """Monte-Carlo SINR of location ``k`` assembled from sampled moment terms."""
    if k not in inputs.active:
        raise DomainError(f"location {k} is not in the active set {inputs.active}")
    m = moments_monte_carlo(inputs.stats, phase, n_samples, rng)
    return m.sinr(k, inputs.active, inputs.powers, inputs.noise_power)


def interference_free_ceiling(stats: ChannelStats) -> float:
    """Single-user SINR as noise vanishes: ``(sum a)^2 / sum a^2``."""
    s1 = stats.alpha_ap.sum()
    return float(s1 * s1 / np.dot(stats.alpha_ap, stats.alpha_ap))
