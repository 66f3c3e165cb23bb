"""RIS phase design: maximize ``phi^H R phi`` over unit-modulus ``phi``.

The relaxation ``max tr(R Phi) s.t. Phi >= 0, diag(Phi) = 1`` is solved with
a rank-p factorization ``Phi = V V^H`` whose rows are kept at unit norm.
Rounding back to a phase vector uses Gaussian randomization.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .channel import ChannelStats, complex_normal
from .errors import BudgetError, DimensionError, DomainError
from .sinr import PhaseConfig, eta

log = logging.getLogger(__name__)

ENUMERATION_BUDGET = 2 ** 24


@dataclass(frozen=True)
class SdpSolution:
    Phi: np.ndarray
    objective: float       # tr(R Phi), a lower bound on the relaxation optimum
    upper: float           # certified upper bound on the relaxation optimum
    iterations: int
    converged: bool
    V: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def gap(self) -> float:
        return (self.upper - self.objective) / max(abs(self.upper), 1e-300)


@dataclass(frozen=True)
class PhaseSolution:
    phase: PhaseConfig
    eta: float
    sdp_upper: float
    mode: str
    sdp: Optional[SdpSolution] = field(default=None, repr=False)

    @property
    def gamma(self) -> float:
        """Certified accuracy ``eta / sdp_upper``."""
        return self.eta / self.sdp_upper if self.sdp_upper > 0 else 1.0

    def to_dict(self) -> dict:
        d = {
            "theta": [float(t) for t in self.phase.theta],
            "eta": self.eta,
            "sdp_upper": self.sdp_upper,
            "gamma_certified": self.gamma,
            "mode": self.mode,
        }
        if self.sdp is not None:
            d["sdp"] = {"objective": self.sdp.objective, "iterations": self.sdp.iterations,
                        "converged": self.sdp.converged}
        return d


def _check_hermitian(R) -> np.ndarray:
    R = np.asarray(R, dtype=complex)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise DimensionError(f"R must be square, got shape {R.shape}")
    scale = max(np.abs(R).max(), 1.0)
    if np.abs(R - R.conj().T).max() > 1e-9 * scale:
        raise DomainError("R is not Hermitian")
    return 0.5 * (R + R.conj().T)


def dual_upper_bound(R: np.ndarray, y: np.ndarray) -> float:
    """Upper bound on ``tr(R Phi)`` over the relaxation's feasible set.

    For any real ``y``: ``tr(R Phi) <= sum(y) + M * max(0, -lambda_min(diag(y) - R))``.
    """
    S = np.diag(np.asarray(y, dtype=float)) - R
    lam = float(np.linalg.eigvalsh(S)[0])
    return float(np.sum(y) + R.shape[0] * max(0.0, -lam))


def certify(R, phi) -> float:
    """Dual bound built from a phase vector; equals eta(phi) when phi is optimal."""
    R = np.asarray(R, dtype=complex)
    phi = np.asarray(phi, dtype=complex)
    y = np.real(np.conj(phi) * (R @ phi))
    return dual_upper_bound(R, y)


def solve_sdp(R, tol: float = 1e-6, max_iter: int = 5000, rank: Optional[int] = None,
              rng: Optional[np.random.Generator] = None, stall_tol: float = 1e-12,
              V0: Optional[np.ndarray] = None) -> SdpSolution:
    """Solve ``max tr(R Phi)`` with ``Phi >= 0`` and unit diagonal.

    Each iteration is the ascent step ``V <- rownormalize(R V)``, which never
    decreases the objective for PSD ``R`` (a shift by the smallest eigenvalue
    is applied otherwise; it changes the objective by a constant). Iteration
    stops once the dual certificate is within ``tol``, the relative objective
    change drops below ``stall_tol``, or after ``max_iter`` steps. A result
    whose certificate misses ``tol`` is returned with ``converged=False``;
    ``upper`` stays a valid bound either way.
    """
    R = _check_hermitian(R)
    M = R.shape[0]
    p = rank or int(math.ceil(math.sqrt(2 * M))) + 1
    p = min(p, M)
    rng = np.random.default_rng(0) if rng is None else rng
    lam = np.linalg.eigvalsh(R)
    shift = max(0.0, -lam[0])
    lam_max = float(lam[-1])
    Rs = R + shift * np.eye(M) if shift > 0 else R

    if V0 is None:
        V = complex_normal(rng, (M, p))
    else:
        V = np.array(V0, dtype=complex).reshape(M, -1)
    V /= np.maximum(np.linalg.norm(V, axis=1, keepdims=True), 1e-300)

    trivial_upper = M * lam_max
    obj = float(np.real(np.vdot(V, R @ V)))
    upper = trivial_upper
    it = 0
    converged = False
    check_every = 25
    while it < max_iter:
        G = Rs @ V
        norms = np.linalg.norm(G, axis=1, keepdims=True)
        V = np.where(norms > 1e-300, G / np.maximum(norms, 1e-300), V)
        it += 1
        new = float(np.real(np.vdot(V, R @ V)))
        stalled = abs(new - obj) <= stall_tol * max(abs(new), 1e-300)
        obj = new
        if stalled or it % check_every == 0 or it == max_iter:
            y = np.linalg.norm(Rs @ V, axis=1) - shift
            upper = min(dual_upper_bound(R, y), trivial_upper)
            if upper - obj <= tol * max(abs(upper), 1e-300):
                converged = True
                break
            if stalled:
                break
    if not converged:
        log.warning("SDP not certified after %d iterations (gap %.3e)", it,
                    (upper - obj) / max(abs(upper), 1e-300))
    Phi = V @ V.conj().T
    return SdpSolution(Phi, obj, max(upper, obj), it, converged, V)


def gaussian_randomization(sdp: SdpSolution, R, n_rand: int = 1000,
                           rng: Optional[np.random.Generator] = None,
                           levels: Optional[int] = None) -> PhaseConfig:
    """Best projected candidate ``phi = exp(j arg(U Sigma^{1/2} r))``.

    With ``levels`` set, each candidate is snapped to the L-level alphabet
    instead of the continuous circle.
    """
    if n_rand < 1:
        raise DomainError("n_rand must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    R = np.asarray(R, dtype=complex)
    w, U = np.linalg.eigh(0.5 * (sdp.Phi + sdp.Phi.conj().T))
    w = np.where(w > 1e-12 * max(w[-1], 0.0), w, 0.0)
    W = U * np.sqrt(w)
    # real and imaginary parts interleaved per candidate, so a larger n_rand
    # extends the same candidate sequence
    z = rng.standard_normal((n_rand, R.shape[0], 2))
    r = (z[..., 0] + 1j * z[..., 1]) / math.sqrt(2.0)
    cand = W @ r.T
    theta = np.angle(cand)
    if levels is not None:
        theta = _snap(theta, levels)
    Phi_c = np.exp(1j * theta)
    vals = np.real(np.sum(np.conj(Phi_c) * (R @ Phi_c), axis=0))
    return PhaseConfig(theta[:, int(np.argmax(vals))])


def _snap(theta, L: int):
    step = 2 * np.pi / L
    return np.mod(np.round(np.asarray(theta) / step), L) * step


def quantize_phases(phase: PhaseConfig, L: int) -> PhaseConfig:
    """Snap every phase to the nearest of ``{0, 2pi/L, ..., 2pi(L-1)/L}``."""
    if L < 2:
        raise DomainError(f"L must be >= 2, got {L}")
    return PhaseConfig(_snap(phase.theta, L))


def discrete_accuracy_bound(L: int) -> float:
    """Worst-case relaxation accuracy for L-level phases: ``(L sin(pi/L))^2 / (4 pi)``."""
    return (L * math.sin(math.pi / L)) ** 2 / (4 * math.pi)


def equal_phase_config(M: int) -> PhaseConfig:
    if M < 1:
        raise DimensionError("M must be >= 1")
    return PhaseConfig(np.zeros(M))


def random_phases(M: int, rng: np.random.Generator) -> PhaseConfig:
    return PhaseConfig(rng.uniform(0.0, 2 * np.pi, M))


def brute_force_opt(R, L: int, chunk: int = 1 << 16):
    """Exact maximizer of ``phi^H R phi`` over the L-level alphabet.

    The first element is pinned to phase 0 (eta is invariant to a common
    rotation), so ``L**(M-1)`` configurations are scanned.
    """
    R = _check_hermitian(R)
    M = R.shape[0]
    if L < 2:
        raise DomainError("L must be >= 2")
    if L ** M > ENUMERATION_BUDGET:
        raise BudgetError(f"L^M = {L}^{M} exceeds the enumeration budget {ENUMERATION_BUDGET}")
    roots = np.exp(2j * np.pi * np.arange(L) / L)
    total = L ** (M - 1)
    best_val, best_idx = -np.inf, 0
    powers = L ** np.arange(M - 2, -1, -1) if M > 1 else np.zeros(0, dtype=int)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        digits = (idx[:, None] // powers[None, :]) % L if M > 1 else np.zeros((idx.size, 0), int)
        Phi = np.concatenate([np.ones((idx.size, 1), complex), roots[digits]], axis=1)
        vals = np.real(np.sum(np.conj(Phi) * (Phi @ R.T), axis=1))
        j = int(np.argmax(vals))
        if vals[j] > best_val:
            best_val, best_idx = float(vals[j]), int(idx[j])
    digits = [(best_idx // int(q)) % L for q in powers]
    theta = np.array([0.0] + [2 * np.pi * d / L for d in digits])
    return PhaseConfig(theta), best_val


def optimize(R, mode: str = "continuous", n_rand: int = 1000,
             rng: Optional[np.random.Generator] = None, levels: Optional[int] = None,
             equal_correlation: bool = False, **sdp_opts) -> PhaseSolution:
    """Phase configuration maximizing eta, with a certified accuracy.

    ``R`` may be a matrix or a ``ChannelStats``; in the latter case its
    ``equal_correlation`` flag triggers the equal-phase shortcut. ``mode`` is
    ``continuous``, ``discrete`` (needs ``levels``), ``equal`` or ``random``.
    """
    if isinstance(R, ChannelStats):
        equal_correlation = equal_correlation or R.equal_correlation
        R = R.R
    R = _check_hermitian(R)
    M = R.shape[0]
    rng = np.random.default_rng(0) if rng is None else rng
    if mode not in ("continuous", "discrete", "equal", "random"):
        raise DomainError(f"unknown mode {mode!r}")
    if mode == "discrete" and (levels is None or levels < 2):
        raise DomainError("discrete mode needs levels >= 2")

    if mode == "equal" or (equal_correlation and mode == "continuous"):
        phase = equal_phase_config(M)
        e = eta(phase, R)
        upper = min(certify(R, phase.phi), M * float(np.linalg.eigvalsh(R)[-1]))
        return PhaseSolution(phase, e, max(upper, e), "equal")

    sdp = solve_sdp(R, rng=rng, **sdp_opts)
    if mode == "random":
        phase = random_phases(M, rng)
    else:
        phase = gaussian_randomization(sdp, R, n_rand, rng,
                                       levels=levels if mode == "discrete" else None)
    e = eta(phase, R)
    tag = f"discrete({levels})" if mode == "discrete" else mode
    return PhaseSolution(phase, e, max(sdp.upper, e), tag, sdp)


def random_psd(M: int, rng: np.random.Generator, rank: Optional[int] = None) -> np.ndarray:
    """Random Hermitian PSD matrix with unit diagonal (a valid ``R``)."""
    r = rank or M
    A = complex_normal(rng, (M, r))
    R = A @ A.conj().T
    d = 1.0 / np.sqrt(np.real(np.diag(R)))
    R = d[:, None] * R * d[None, :]
    R = 0.5 * (R + R.conj().T)
    np.fill_diagonal(R, 1.0)
    return R
