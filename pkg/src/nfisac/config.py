"""System parameters and the two stock profiles (full scale and desk scale)."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 3e8
"Speed of light in m/s, rounded so that 30 GHz maps to a 1 cm wavelength."


def dbm_to_mw(dbm: float | np.ndarray) -> float | np.ndarray:
    return 10.0 ** (dbm / 10.0)


def mw_to_dbm(mw: float | np.ndarray) -> float | np.ndarray:
    return 10.0 * np.log10(mw)


@dataclass(frozen=True)
class SystemConfig:
    """Physical and algorithmic scalars of one RSMA near-field ISAC system.

    All powers are linear milliwatts. ``reflect_coeffs`` holds one power
    reflection coefficient per target; a single value is broadcast.
    """

    n_tx: int = 16
    n_rx: int = 16
    n_rf: int = 8
    n_users: int = 3
    n_targets: int = 2
    n_scatterers: int = 2
    spacing_m: float = 0.5 / 15
    carrier_hz: float = 30e9
    wavelength_m: float = 0.01
    power_max_mw: float = 1000.0
    noise_comm_mw: float = 1e-8
    noise_sense_mw: float = 1e-8
    sense_rate_min_bps: float = 4.0
    reflect_coeffs: tuple[float, ...] = (1.0,)
    sic_residual: float = 0.0

    def __post_init__(self):
        for name in ("n_tx", "n_rx", "n_rf", "n_users", "n_targets"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.n_scatterers < 0:
            raise ValueError("n_scatterers must be non-negative")
        if self.n_rf > self.n_tx:
            raise ValueError("n_rf must not exceed n_tx")
        for name in ("spacing_m", "carrier_hz", "wavelength_m", "power_max_mw",
                     "noise_comm_mw", "noise_sense_mw"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.sense_rate_min_bps < 0:
            raise ValueError("sense_rate_min_bps must be non-negative")
        if not 0.0 <= self.sic_residual <= 1.0:
            raise ValueError("sic_residual must lie in [0, 1]")
        rel = abs(self.wavelength_m * self.carrier_hz - SPEED_OF_LIGHT) / SPEED_OF_LIGHT
        if rel > 1e-6:
            raise ValueError("wavelength_m * carrier_hz must equal the speed of light")
        coeffs = tuple(float(a) for a in np.atleast_1d(self.reflect_coeffs))
        if len(coeffs) not in (1, self.n_targets) or min(coeffs) <= 0:
            raise ValueError("reflect_coeffs needs one positive value or one per target")
        object.__setattr__(self, "reflect_coeffs", coeffs)

    @property
    def alphas(self) -> np.ndarray:
        """Per-target power reflection coefficients, length ``n_targets``."""
        a = np.asarray(self.reflect_coeffs, dtype=float)
        return np.broadcast_to(a, (self.n_targets,)).copy() if a.size == 1 else a

    @property
    def aperture_m(self) -> float:
        return (max(self.n_tx, self.n_rx) - 1) * self.spacing_m

    @property
    def power_max_dbm(self) -> float:
        return float(mw_to_dbm(self.power_max_mw))

    @property
    def sense_sinr_min(self) -> float:
        return 2.0 ** self.sense_rate_min_bps - 1.0

    def replace(self, **changes) -> "SystemConfig":
        """Copy with some fields changed; ``power_dbm`` is accepted as a shortcut."""
        if "power_dbm" in changes:
            changes["power_max_mw"] = float(dbm_to_mw(changes.pop("power_dbm")))
        if "n_targets" in changes and len(self.reflect_coeffs) != 1 \
                and "reflect_coeffs" not in changes:
            changes["reflect_coeffs"] = (self.reflect_coeffs[0],)
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["reflect_coeffs"] = list(self.reflect_coeffs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SystemConfig":
        d = dict(d)
        if "power_dbm" in d:
            d["power_max_mw"] = float(dbm_to_mw(d.pop("power_dbm")))
        if "reflect_coeffs" in d:
            d["reflect_coeffs"] = tuple(d["reflect_coeffs"])
        return cls(**d)


def _array_config(n_tx: int, n_rx: int, aperture_m: float, carrier_hz: float, **kw) -> SystemConfig:
    n = max(n_tx, n_rx)
    return SystemConfig(n_tx=n_tx, n_rx=n_rx, spacing_m=aperture_m / (n - 1),
                        carrier_hz=carrier_hz, wavelength_m=SPEED_OF_LIGHT / carrier_hz, **kw)


def paper_config() -> SystemConfig:
    """Full-scale parameters: 64-element arrays with a 0.5 m aperture at 30 GHz."""
    return _array_config(
        64, 64, 0.5, 30e9,
        n_rf=8, n_users=6, n_targets=4, n_scatterers=2,
        power_max_mw=float(dbm_to_mw(30.0)),
        noise_comm_mw=float(dbm_to_mw(-80.0)),
        noise_sense_mw=float(dbm_to_mw(-80.0)),
        sense_rate_min_bps=6.0,
        reflect_coeffs=(1.0,),
    )


def desk_config() -> SystemConfig:
    """Reduced profile for quick runs. The aperture stays at 0.5 m so the
    Rayleigh distance (and hence the near-field region) matches the full-scale profile."""
    return _array_config(
        16, 16, 0.5, 30e9,
        n_rf=8, n_users=3, n_targets=2, n_scatterers=2,
        power_max_mw=float(dbm_to_mw(30.0)),
        noise_comm_mw=float(dbm_to_mw(-80.0)),
        noise_sense_mw=float(dbm_to_mw(-80.0)),
        sense_rate_min_bps=4.0,
        reflect_coeffs=(1.0,),
    )


PROFILES = {"desk": desk_config, "paper": paper_config}


def get_profile(name: str) -> SystemConfig:
    try:
        return PROFILES[name]()
    except KeyError:
        raise ValueError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None
