"""Geometry, large-scale fading, RIS spatial correlation and channel sampling.

All gains and powers are linear (W); dB appears only in the helpers that
convert configuration values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimensionError, DomainError, GeometryError, InvalidModelError, NumericError


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def dbm_to_watt(x_dbm):
    return db_to_linear(x_dbm) * 1e-3


def thermal_noise_power(bandwidth_hz: float, noise_figure_db: float = 9.0) -> float:
    """Noise power in W for -174 dBm/Hz over ``bandwidth_hz`` plus a noise figure."""
    return float(dbm_to_watt(-174.0 + 10.0 * math.log10(bandwidth_hz) + noise_figure_db))


# ---------------------------------------------------------------------------
# Correlation models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CorrelationModel:
    """Transmit/receive correlation of the RIS elements.

    ``kind`` is one of ``"exponential"``, ``"isotropic"`` or ``"identity"``.
    The exponential variant carries separate coefficients for the RIS->AP
    (``rho_t``) and user->RIS (``rho_r``) sides.
    """

    kind: str = "identity"
    rho_t: complex = 0.0
    rho_r: complex = 0.0
    spacing: float = 0.25  # element spacing in wavelengths, isotropic only

    def __post_init__(self):
        if self.kind not in ("exponential", "isotropic", "identity"):
            raise InvalidModelError(f"unknown correlation model {self.kind!r}")
        if self.kind == "exponential":
            for name in ("rho_t", "rho_r"):
                if abs(complex(getattr(self, name))) > 1.0:
                    raise InvalidModelError(f"|{name}| must be <= 1, got {getattr(self, name)}")
        if self.kind == "isotropic" and not self.spacing > 0:
            raise InvalidModelError("isotropic spacing must be > 0")

    @classmethod
    def exponential(cls, rho_t: complex, rho_r: Optional[complex] = None) -> "CorrelationModel":
        return cls("exponential", complex(rho_t), complex(rho_t if rho_r is None else rho_r))

    @classmethod
    def isotropic(cls, spacing: float) -> "CorrelationModel":
        return cls("isotropic", spacing=float(spacing))

    @property
    def symmetric(self) -> bool:
        """True when the transmit and receive matrices coincide."""
        return self.kind != "exponential" or complex(self.rho_t) == complex(self.rho_r)


def exponential_correlation(rho: complex, M: int) -> np.ndarray:
    """Hermitian Toeplitz matrix with entry ``rho**(j-i)`` above the diagonal."""
    if M < 1:
        raise DimensionError(f"M must be >= 1, got {M}")
    rho = complex(rho)
    if abs(rho) > 1.0:
        raise InvalidModelError(f"|rho| must be <= 1, got {rho}")
    idx = np.arange(M)
    lag = idx[None, :] - idx[:, None]
    upper = rho ** np.abs(lag)
    R = np.where(lag >= 0, upper, np.conj(upper))
    np.fill_diagonal(R, 1.0)
    return R.astype(complex)


def isotropic_correlation(spacing: float, M: int) -> np.ndarray:
    """Isotropic-scattering correlation of a planar RIS.

    Elements sit on a square-ish grid with ``ceil(sqrt(M))`` columns and
    ``spacing`` wavelengths between neighbours; entry (m, l) is
    ``sinc(2 * dist(m, l))`` with ``sinc(x) = sin(pi x) / (pi x)``.
    """
    if M < 1:
        raise DimensionError(f"M must be >= 1, got {M}")
    if not spacing > 0:
        raise InvalidModelError("spacing must be > 0")
    cols = int(math.ceil(math.sqrt(M)))
    m = np.arange(M)
    pos = np.stack([m % cols, m // cols], axis=1) * spacing
    dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    return np.sinc(2.0 * dist).astype(complex)


def build_correlation(model: CorrelationModel, M: int, side: str = "t") -> np.ndarray:
    """Correlation matrix for one side (``"t"`` transmit, ``"r"`` receive)."""
    if M < 1:
        raise DimensionError(f"M must be >= 1, got {M}")
    if model.kind == "identity":
        return np.eye(M, dtype=complex)
    if model.kind == "isotropic":
        return isotropic_correlation(model.spacing, M)
    rho = model.rho_t if side == "t" else model.rho_r
    return exponential_correlation(rho, M)


# ---------------------------------------------------------------------------
# Path loss
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PathlossParams:
    """Three-slope model constants (distances in km, heights in m)."""

    d0_km: float = 0.01
    d1_km: float = 0.05
    h_ap_m: float = 15.0
    h_user_m: float = 1.65
    shadowing_db: float = 0.0  # log-normal std; 0 disables the hook

    def offset_db(self, carrier_ghz: float) -> float:
        f = carrier_ghz * 1e3  # MHz
        lf = math.log10(f)
        return (46.3 + 33.9 * lf - 13.82 * math.log10(self.h_ap_m)
                - (1.1 * lf - 0.7) * self.h_user_m + (1.56 * lf - 0.8))


def three_slope_pathloss(distance, carrier_ghz: float = 1.9,
                         params: PathlossParams = PathlossParams()):
    """Linear power gain of the three-slope model at ``distance`` km.

    Slopes: flat below d0, 20 dB/decade between d0 and d1, 35 dB/decade
    beyond d1. Accepts scalars or arrays.
    """
    d = np.asarray(distance, dtype=float)
    if np.any(~(d > 0)):
        raise DomainError("distance must be > 0")
    L = params.offset_db(carrier_ghz)
    d0, d1 = params.d0_km, params.d1_km
    far = -L - 35.0 * np.log10(np.maximum(d, 1e-300))
    mid = -L - 15.0 * math.log10(d1) - 20.0 * np.log10(np.maximum(d, 1e-300))
    near = -L - 15.0 * math.log10(d1) - 20.0 * math.log10(d0)
    pl_db = np.where(d > d1, far, np.where(d > d0, mid, near))
    gain = 10.0 ** (pl_db / 10.0)
    return float(gain) if gain.ndim == 0 else gain


# ---------------------------------------------------------------------------
# Scenario and statistics
# ---------------------------------------------------------------------------

@dataclass
class Scenario:
    """Deployment and traffic description.

    Positions are in km. ``tx_power``, ``mean_file_bits`` and
    ``arrival_rates`` are per location (length K).
    """

    ap_positions: np.ndarray
    location_positions: np.ndarray
    n_elements: int
    tx_power: np.ndarray
    noise_power: float
    arrival_rates: np.ndarray
    mean_file_bits: np.ndarray
    ris_position: np.ndarray = field(default_factory=lambda: np.zeros(2))
    half_width: float = 1.0
    carrier_ghz: float = 1.9
    bandwidth_hz: float = 20e6
    slot_s: float = 0.05
    seed: int = 0
    pathloss: PathlossParams = field(default_factory=PathlossParams)
    correlation: CorrelationModel = field(default_factory=CorrelationModel)
    all_active_transmit: bool = False

    def __post_init__(self):
        self.ap_positions = np.atleast_2d(np.asarray(self.ap_positions, dtype=float))
        self.location_positions = np.atleast_2d(np.asarray(self.location_positions, dtype=float))
        self.ris_position = np.asarray(self.ris_position, dtype=float).reshape(2)
        K = self.location_positions.shape[0]
        self.tx_power = _per_location(self.tx_power, K, "tx_power")
        self.arrival_rates = _per_location(self.arrival_rates, K, "arrival_rates")
        self.mean_file_bits = _per_location(self.mean_file_bits, K, "mean_file_bits")
        self.n_elements = int(self.n_elements)
        self.validate()

    @property
    def N(self) -> int:
        return self.ap_positions.shape[0]

    @property
    def K(self) -> int:
        return self.location_positions.shape[0]

    @property
    def M(self) -> int:
        return self.n_elements

    def validate(self) -> None:
        if self.ap_positions.shape[1] != 2 or self.location_positions.shape[1] != 2:
            raise DimensionError("positions must be 2-D points")
        if self.N < 1 or self.K < 1 or self.M < 1:
            raise DimensionError(f"need N, K, M >= 1 (got {self.N}, {self.K}, {self.M})")
        if np.any(self.tx_power <= 0):
            raise DomainError("transmit powers must be > 0")
        if not self.noise_power > 0:
            raise DomainError("noise power must be > 0")
        if np.any(self.arrival_rates < 0):
            raise DomainError("arrival rates must be >= 0")
        if np.any(self.mean_file_bits <= 0):
            raise DomainError("mean file sizes must be > 0")
        if not (self.bandwidth_hz > 0 and self.slot_s > 0):
            raise DomainError("bandwidth and slot duration must be > 0")
        w = self.half_width
        for name in ("ap_positions", "location_positions"):
            pts = getattr(self, name)
            if np.any(np.abs(pts) > w + 1e-12):
                raise GeometryError(f"{name} outside the [-{w}, {w}]^2 area")
        if np.any(np.abs(self.ris_position) > w + 1e-12):
            raise GeometryError("RIS outside the area")

    def with_rates(self, rates) -> "Scenario":
        """Copy with new arrival rates (geometry and stats unchanged)."""
        import dataclasses
        return dataclasses.replace(self, arrival_rates=np.asarray(rates, dtype=float).copy())


def _per_location(value, K, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(K, float(arr))
    if arr.shape != (K,):
        raise DimensionError(f"{name} must have length K={K}, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class ChannelStats:
    """Second-order channel description.

    ``alpha_loc`` are the user->RIS gains (length K), ``alpha_ap`` the
    RIS->AP gains (length N). ``R = R_t * R_r.T`` (elementwise).
    """

    alpha_loc: np.ndarray
    alpha_ap: np.ndarray
    R_t: np.ndarray
    R_r: np.ndarray
    R: np.ndarray
    equal_correlation: bool = False

    @property
    def M(self) -> int:
        return self.R.shape[0]

    @property
    def K(self) -> int:
        return self.alpha_loc.shape[0]

    @property
    def N(self) -> int:
        return self.alpha_ap.shape[0]

    @classmethod
    def from_matrices(cls, alpha_loc, alpha_ap, R_t, R_r) -> "ChannelStats":
        alpha_loc = np.atleast_1d(np.asarray(alpha_loc, dtype=float))
        alpha_ap = np.atleast_1d(np.asarray(alpha_ap, dtype=float))
        if np.any(~(alpha_loc > 0)) or np.any(~(alpha_ap > 0)):
            raise DomainError("large-scale gains must be > 0")
        R_t = np.asarray(R_t, dtype=complex)
        R_r = np.asarray(R_r, dtype=complex)
        if R_t.shape != R_r.shape or R_t.ndim != 2 or R_t.shape[0] != R_t.shape[1]:
            raise DimensionError("R_t and R_r must be square and of equal size")
        R = R_t * R_r.T
        R = 0.5 * (R + R.conj().T)
        return cls(alpha_loc, alpha_ap, R_t, R_r, R, bool(np.array_equal(R_t, R_r)))


def build_stats(scenario: Scenario, model: Optional[CorrelationModel] = None,
                rng: Optional[np.random.Generator] = None) -> ChannelStats:
    """Large-scale gains from distances to the RIS, plus correlation matrices.

    ``rng`` is only consulted when the shadowing hook is enabled.
    """
    model = scenario.correlation if model is None else model
    d_loc = np.linalg.norm(scenario.location_positions - scenario.ris_position, axis=1)
    d_ap = np.linalg.norm(scenario.ap_positions - scenario.ris_position, axis=1)
    if np.any(d_loc <= 0) or np.any(d_ap <= 0):
        raise GeometryError("a location or AP coincides with the RIS position")
    pl = scenario.pathloss
    alpha_loc = np.atleast_1d(three_slope_pathloss(d_loc, scenario.carrier_ghz, pl))
    alpha_ap = np.atleast_1d(three_slope_pathloss(d_ap, scenario.carrier_ghz, pl))
    if pl.shadowing_db > 0:
        rng = np.random.default_rng(scenario.seed) if rng is None else rng
        alpha_loc = alpha_loc * db_to_linear(pl.shadowing_db * rng.standard_normal(alpha_loc.shape))
        alpha_ap = alpha_ap * db_to_linear(pl.shadowing_db * rng.standard_normal(alpha_ap.shape))
    M = scenario.M
    R_t = build_correlation(model, M, "t")
    R_r = build_correlation(model, M, "r")
    return ChannelStats.from_matrices(alpha_loc, alpha_ap, R_t, R_r)


def calibrated_noise_power(stats: ChannelStats, tx_power, snr_db: float) -> float:
    """Noise power giving ``snr_db`` at a reference link.

    The reference link has the mean user->RIS gain, the mean transmit power,
    random-phase average eta (= M) and coherent combining over all APs, so
    that ``snr = mean(alpha_loc) * sum(alpha_ap) * M * P / noise``.
    """
    p = float(np.mean(tx_power))
    signal = float(np.mean(stats.alpha_loc) * np.sum(stats.alpha_ap) * stats.M * p)
    return signal / float(db_to_linear(snr_db))


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def covariance_factor(C: np.ndarray) -> np.ndarray:
    """Matrix ``L`` with ``L @ L^H = C``.

    Cholesky first; for numerically semi-definite input fall back to an
    eigendecomposition with eigenvalues below 1e-12 clipped to 0.
    """
    C = np.asarray(C, dtype=complex)
    C = 0.5 * (C + C.conj().T)
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        pass
    w, U = np.linalg.eigh(C)
    if w.min() < -1e-8 * max(1.0, abs(w).max()):
        raise NumericError(f"covariance is not PSD (min eigenvalue {w.min():.3e})")
    w = np.where(w < 1e-12, 0.0, w)
    return U * np.sqrt(w)


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard circularly-symmetric complex Gaussian samples, E|z|^2 = 1."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


@dataclass(frozen=True)
class ChannelRealization:
    g: np.ndarray  # (K, M) user -> RIS
    h: np.ndarray  # (N, M) RIS -> AP


def sample_realization(stats: ChannelStats, rng: np.random.Generator) -> ChannelRealization:
    """One block: ``g_k ~ CN(0, alpha_loc[k] R_r)``, ``h_n ~ CN(0, alpha_ap[n] R_t)``."""
    if np.any(~(stats.alpha_loc > 0)) or np.any(~(stats.alpha_ap > 0)):
        raise DomainError("large-scale gains must be > 0")
    L_r = covariance_factor(stats.R_r)
    L_t = covariance_factor(stats.R_t)
    M = stats.M
    g = np.sqrt(stats.alpha_loc)[:, None] * (complex_normal(rng, (stats.K, M)) @ L_r.T)
    h = np.sqrt(stats.alpha_ap)[:, None] * (complex_normal(rng, (stats.N, M)) @ L_t.T)
    return ChannelRealization(g, h)


def sample_cascaded(stats: ChannelStats, phi: np.ndarray, n_samples: int,
                    rng: np.random.Generator, chunk: int = 1000):
    """Yield batches of cascaded channels ``u[s, n, k] = h_n^H diag(phi) g_k``.

    Uses ``u = sqrt(a_n b_k) z_n^H (L_t^H diag(phi) L_r) w_k`` so the M x M
    product is formed once instead of per sample.
    """
    L_r = covariance_factor(stats.R_r)
    L_t = covariance_factor(stats.R_t)
    B = L_t.conj().T @ (phi[:, None] * L_r)
    scale = np.sqrt(np.outer(stats.alpha_ap, stats.alpha_loc))
    M, K, N = stats.M, stats.K, stats.N
    done = 0
    while done < n_samples:
        n = min(chunk, n_samples - done)
        w = complex_normal(rng, (n, M, K))
        z = complex_normal(rng, (n, N, M))
        u = np.matmul(z.conj(), np.matmul(B, w))
        yield u * scale
        done += n
