"""Experiment configuration: INI-style files with sections, plus built-in profiles.

A config is layered as ``profile defaults <- file <- overrides``. Overrides
are ``section.key=value`` strings. Positions are given either explicitly
(``x y; x y; ...``) or generated from a layout rule and the scenario seed.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .channel import (ChannelStats, CorrelationModel, PathlossParams, Scenario, build_stats,
                      calibrated_noise_power, dbm_to_watt, thermal_noise_power)
from .errors import ConfigError, RisFlowError

_COMMON = {
    "scenario": {
        "seed": "7",
        "half_width": "1.0",
        "carrier_ghz": "1.9",
        "bandwidth_hz": "20e6",
        "slot_s": "0.05",
        "tx_power_dbm": "20",
        "mean_file_bits": "1e6",
        "all_active_transmit": "false",
    },
    "noise": {
        "mode": "calibrated",
        "noise_figure_db": "9",
        "reference_snr_db": "0",
    },
    "geometry": {
        "ris": "0 0",
        "ap_layout": "uniform_subregion",
        "ap_region": "-1 -0.75",
        "locations": "explicit",
        "grid_range": "0.05 1",
    },
    "correlation": {
        "model": "exponential",
        "rho_t": "0.9",
        "rho_r": "0.6+0.3j",
        "spacing": "0.25",
    },
    "pathloss": {
        "d0_km": "0.01",
        "d1_km": "0.05",
        "h_ap_m": "15",
        "h_user_m": "1.65",
        "shadowing_db": "0",
    },
    "phase": {"mode": "continuous", "n_rand": "1000", "levels": "0"},
    "simulation": {"policy": "optimized", "slots": "20000", "window": "500", "threshold": "1e-3"},
    "region": {"rays_deg": "15 30 45 60 75", "policies": "optimized tdma", "rel_tol": "0.03"},
    "sweep": {"rates": "", "policies": "optimized random"},
    "fluid": {"dt": "0", "horizon": "0", "load": "0.8"},
}

PROFILES = {
    # two locations for region / moving-average experiments
    "desk": {
        "scenario": {"n_elements": "64", "arrival_rates": "0.5 0.5"},
        "geometry": {"n_aps": "16", "location_positions": "0.25 0.25; 0.75 0.75"},
    },
    # square mesh of locations for the stability-metric sweeps
    "grid": {
        "scenario": {"n_elements": "64", "arrival_rates": "0.05"},
        "geometry": {"n_aps": "16", "locations": "grid", "grid_size": "5", "grid_range": "0.1 1"},
        "noise": {"reference_snr_db": "10"},
        "simulation": {"slots": "10000"},
    },
    # full size; long-running
    "paper": {
        "scenario": {"n_elements": "1600", "arrival_rates": "0.1"},
        "geometry": {"n_aps": "128", "locations": "grid", "grid_size": "20"},
        "simulation": {"slots": "10000"},
    },
}


@dataclass
class Config:
    scenario: Scenario
    parser: configparser.ConfigParser = field(repr=False)
    profile: str = "desk"
    source: Optional[str] = None

    def get(self, section: str, key: str, fallback=None) -> str:
        return self.parser.get(section, key, fallback=fallback)

    def getfloat(self, section, key, fallback=None) -> float:
        return _num(self, section, key, float, fallback)

    def getint(self, section, key, fallback=None) -> int:
        return _num(self, section, key, lambda s: int(float(s)), fallback)

    def floats(self, section, key) -> list:
        raw = self.get(section, key, "") or ""
        try:
            return [float(v) for v in re.split(r"[,\s]+", raw.strip()) if v]
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from None

    def words(self, section, key) -> list:
        raw = self.get(section, key, "") or ""
        return [w for w in re.split(r"[,\s]+", raw.strip()) if w]

    @property
    def seed(self) -> int:
        return self.scenario.seed

    def as_dict(self) -> dict:
        return {s: dict(self.parser.items(s)) for s in self.parser.sections()}

    @property
    def hash(self) -> str:
        """Stable digest of the fully-resolved configuration."""
        blob = json.dumps(self.as_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def stats(self) -> ChannelStats:
        return build_stats(self.scenario)


def _num(cfg, section, key, conv, fallback):
    raw = cfg.get(section, key, None)
    if raw is None or raw == "":
        if fallback is None:
            raise ConfigError(f"missing [{section}] {key}")
        return fallback
    try:
        return conv(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}"
                          + _where(cfg.source, section, key)) from None


def _where(text: Optional[str], section: str, key: str) -> str:
    """`` (line N)`` pointing at ``key`` inside ``[section]`` of the source text."""
    if not text:
        return ""
    current = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[(.+)\]", s)
        if m:
            current = m.group(1).strip()
        elif current == section and re.match(rf"{re.escape(key)}\s*[=:]", s):
            return f" (line {i})"
    return ""


def _parse_points(raw: str, what: str) -> np.ndarray:
    pts = []
    for chunk in raw.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        vals = [float(v) for v in re.split(r"[,\s]+", chunk) if v]
        if len(vals) != 2:
            raise ConfigError(f"{what}: expected 'x y' pairs, got {chunk!r}")
        pts.append(vals)
    if not pts:
        raise ConfigError(f"{what}: no points given")
    return np.array(pts)


def _parse_complex(raw: str) -> complex:
    return complex(raw.replace(" ", "").replace("i", "j"))


def grid_locations(n: int, lo: float, hi: float) -> np.ndarray:
    """``n x n`` square mesh over ``[lo, hi]^2``."""
    g = np.linspace(lo, hi, n)
    xx, yy = np.meshgrid(g, g)
    return np.column_stack([xx.ravel(), yy.ravel()])


def load_config(path=None, profile: str = "desk", overrides=(), text: Optional[str] = None) -> Config:
    """Build a :class:`Config` from a profile, an optional file and overrides."""
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r} (choose from {sorted(PROFILES)})")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";;"))
    parser.optionxform = str
    parser.read_dict(_COMMON)
    parser.read_dict(PROFILES[profile])
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    if text is not None:
        try:
            parser.read_string(text, source=str(path or "<string>"))
        except configparser.Error as exc:
            raise ConfigError(f"config parse error: {exc}") from None
    for ov in overrides:
        m = re.match(r"^\s*([\w-]+)\.([\w-]+)\s*=\s*(.*)$", ov)
        if not m:
            raise ConfigError(f"override {ov!r} is not of the form section.key=value")
        sec, key, val = m.groups()
        if not parser.has_section(sec):
            parser.add_section(sec)
        parser.set(sec, key, val)
    cfg = Config(None, parser, profile, text)  # type: ignore[arg-type]
    try:
        cfg.scenario = _build_scenario(cfg)
    except ConfigError:
        raise
    except RisFlowError as exc:
        raise ConfigError(f"invalid scenario: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"invalid value: {exc}") from None
    return cfg


def _build_scenario(cfg: Config) -> Scenario:
    seed = cfg.getint("scenario", "seed")
    rng = np.random.default_rng(seed)
    half = cfg.getfloat("scenario", "half_width")

    ris = _parse_points(cfg.get("geometry", "ris"), "geometry.ris")[0]
    ap_layout = cfg.get("geometry", "ap_layout")
    if ap_layout == "uniform_subregion":
        lo, hi = sorted(cfg.floats("geometry", "ap_region"))
        n_aps = cfg.getint("geometry", "n_aps")
        aps = rng.uniform(lo, hi, size=(n_aps, 2))
    elif ap_layout == "explicit":
        aps = _parse_points(cfg.get("geometry", "ap_positions", ""), "geometry.ap_positions")
    else:
        raise ConfigError(f"[geometry] ap_layout: unknown layout {ap_layout!r}"
                          + _where(cfg.source, "geometry", "ap_layout"))

    loc_mode = cfg.get("geometry", "locations")
    if loc_mode == "grid":
        lo, hi = cfg.floats("geometry", "grid_range")
        locs = grid_locations(cfg.getint("geometry", "grid_size"), lo, hi)
    elif loc_mode == "explicit":
        locs = _parse_points(cfg.get("geometry", "location_positions", ""),
                             "geometry.location_positions")
    else:
        raise ConfigError(f"[geometry] locations: unknown mode {loc_mode!r}"
                          + _where(cfg.source, "geometry", "locations"))
    K = len(locs)

    rates = cfg.floats("scenario", "arrival_rates")
    if len(rates) == 1:
        rates = rates * K
    if len(rates) != K:
        raise ConfigError(f"[scenario] arrival_rates: expected 1 or {K} values, got {len(rates)}"
                          + _where(cfg.source, "scenario", "arrival_rates"))

    kind = cfg.get("correlation", "model")
    try:
        if kind == "exponential":
            model = CorrelationModel.exponential(_parse_complex(cfg.get("correlation", "rho_t")),
                                                 _parse_complex(cfg.get("correlation", "rho_r")))
        elif kind == "isotropic":
            model = CorrelationModel.isotropic(cfg.getfloat("correlation", "spacing"))
        else:
            model = CorrelationModel(kind)
    except RisFlowError as exc:
        raise ConfigError(f"[correlation] {exc}" + _where(cfg.source, "correlation", "model")) from None
    except ValueError as exc:
        raise ConfigError(f"[correlation] {exc}") from None

    pl = PathlossParams(**{k: cfg.getfloat("pathloss", k) for k in
                           ("d0_km", "d1_km", "h_ap_m", "h_user_m", "shadowing_db")})
    bandwidth = cfg.getfloat("scenario", "bandwidth_hz")
    tx = float(dbm_to_watt(cfg.getfloat("scenario", "tx_power_dbm")))

    noise_mode = cfg.get("noise", "mode")
    if noise_mode == "thermal":
        noise = thermal_noise_power(bandwidth, cfg.getfloat("noise", "noise_figure_db"))
    elif noise_mode == "fixed":
        noise = cfg.getfloat("noise", "power_w")
    elif noise_mode == "calibrated":
        noise = 1.0  # placeholder, replaced once gains are known
    else:
        raise ConfigError(f"[noise] mode: unknown mode {noise_mode!r}" + _where(cfg.source, "noise", "mode"))
    if not noise > 0:
        raise ConfigError(f"[noise] noise power must be > 0, got {noise}"
                          + _where(cfg.source, "noise", "power_w"))

    all_active = cfg.get("scenario", "all_active_transmit").strip().lower() in ("1", "true", "yes", "on")
    sc = Scenario(
        ap_positions=aps, location_positions=locs, n_elements=cfg.getint("scenario", "n_elements"),
        tx_power=tx, noise_power=noise, arrival_rates=np.array(rates),
        mean_file_bits=cfg.getfloat("scenario", "mean_file_bits"), ris_position=ris, half_width=half,
        carrier_ghz=cfg.getfloat("scenario", "carrier_ghz"), bandwidth_hz=bandwidth,
        slot_s=cfg.getfloat("scenario", "slot_s"), seed=seed, pathloss=pl, correlation=model,
        all_active_transmit=all_active,
    )
    if noise_mode == "calibrated":
        st = build_stats(sc)
        sc.noise_power = calibrated_noise_power(st, sc.tx_power, cfg.getfloat("noise", "reference_snr_db"))
    return sc


def scenario_hash(sc: Scenario) -> str:
    d = {
        "aps": np.round(sc.ap_positions, 12).tolist(),
        "locs": np.round(sc.location_positions, 12).tolist(),
        "ris": sc.ris_position.tolist(), "M": sc.M, "P": sc.tx_power.tolist(),
        "noise": repr(sc.noise_power), "lam": sc.arrival_rates.tolist(),
        "S": sc.mean_file_bits.tolist(), "B": sc.bandwidth_hz, "slot": sc.slot_s,
        "corr": repr(sc.correlation), "pl": repr(sc.pathloss), "seed": sc.seed,
        "all": sc.all_active_transmit,
    }
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


EXAMPLE_CONFIG = """\
# Two locations in the upper-right quadrant served through a 64-element RIS
# at the origin by 16 APs scattered in the lower-left corner.
[scenario]
seed = 7
n_elements = 64
bandwidth_hz = 20e6
slot_s = 0.05              # bandwidth * slot = 1 Mbit, so rates read as files/slot
tx_power_dbm = 20
mean_file_bits = 1e6
arrival_rates = 0.5 0.5    # flows per slot, one value per location (or one for all)

[noise]
# thermal: -174 dBm/Hz + noise figure; calibrated: pick the noise power that
# gives reference_snr_db on a reference link (mean gain, random phases)
mode = calibrated
reference_snr_db = 0

[geometry]
ris = 0 0
ap_layout = uniform_subregion
ap_region = -1 -0.75       # APs uniform in [-1, -0.75]^2
n_aps = 16
locations = explicit
location_positions = 0.25 0.25; 0.75 0.75

[correlation]
model = exponential        # exponential | isotropic | identity
rho_t = 0.9
rho_r = 0.6+0.3j
"""
