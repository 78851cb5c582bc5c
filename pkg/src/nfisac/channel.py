"""Array responses and channel synthesis from polar geometry.

Antennas sit at ``(0, n d)`` for ``n = 1..N`` with the reference point at the
origin. Near-field responses use the second-order (Fresnel) expansion of the
element-to-point distance; far-field responses keep only the linear term.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import SPEED_OF_LIGHT, SystemConfig

SCENARIO_SCHEMA = "nfisac.scenario/1"


@dataclass(frozen=True)
class PolarCoord:
    """A point at ``range_m`` from the array reference, ``angle_rad`` off broadside."""

    range_m: float
    angle_rad: float

    @classmethod
    def from_degrees(cls, range_m: float, angle_deg: float) -> "PolarCoord":
        return cls(float(range_m), float(np.deg2rad(angle_deg)))

    @property
    def xy(self) -> tuple[float, float]:
        return (self.range_m * np.cos(self.angle_rad), self.range_m * np.sin(self.angle_rad))


@dataclass(frozen=True)
class Scatterer:
    position: PolarCoord
    link_range_m: float
    "Distance between the scatterer and the user it serves."


def _check_range(r: float):
    if not r > 0:
        raise ValueError(f"range must be strictly positive to build a channel, got {r}")


def rayleigh_distance(aperture_m: float, wavelength_m: float) -> float:
    """Near-field boundary ``2 D^2 / lambda`` in meters."""
    if not wavelength_m > 0:
        raise ValueError("wavelength must be strictly positive")
    if aperture_m < 0:
        raise ValueError("aperture must be non-negative")
    return 2.0 * aperture_m ** 2 / wavelength_m


def fresnel_offset(coord: PolarCoord, n_elems: int, spacing_m: float) -> np.ndarray:
    """Second-order path-length advance ``delta_n`` of each element, in meters."""
    _check_range(coord.range_m)
    nd = np.arange(1, n_elems + 1) * spacing_m
    s, c = np.sin(coord.angle_rad), np.cos(coord.angle_rad)
    return nd * s - nd ** 2 * c ** 2 / (2.0 * coord.range_m)


def nf_steering(coord: PolarCoord, n_elems: int, spacing_m: float, wavelength_m: float) -> np.ndarray:
    """Near-field array response with unit-modulus entries ``exp(j 2 pi delta_n / lambda)``."""
    delta = fresnel_offset(coord, n_elems, spacing_m)
    return np.exp(2j * np.pi / wavelength_m * delta)


def ff_steering(angle_rad: float, n_elems: int, spacing_m: float, wavelength_m: float) -> np.ndarray:
    """Plane-wave array response ``exp(j 2 pi n d sin(theta) / lambda)``."""
    nd = np.arange(1, n_elems + 1) * spacing_m
    return np.exp(2j * np.pi / wavelength_m * nd * np.sin(angle_rad))


def _response(coord: PolarCoord, n_elems: int, cfg: SystemConfig, far_field: bool) -> np.ndarray:
    if far_field:
        _check_range(coord.range_m)
        return ff_steering(coord.angle_rad, n_elems, cfg.spacing_m, cfg.wavelength_m)
    return nf_steering(coord, n_elems, cfg.spacing_m, cfg.wavelength_m)


def path_gain(path_m: float, cfg: SystemConfig) -> complex:
    """Free-space complex gain over a propagation path of ``path_m`` meters."""
    _check_range(path_m)
    mag = SPEED_OF_LIGHT / (4 * np.pi * cfg.carrier_hz * path_m)
    return mag * np.exp(-2j * np.pi * path_m / cfg.wavelength_m)


def echo_gain(target: PolarCoord, cfg: SystemConfig) -> complex:
    """Round-trip gain of a target echo.

    Magnitude follows the free-space law at the target range and the phase
    accumulates over the two-way path. The reflection coefficient enters the
    SINR separately.
    """
    _check_range(target.range_m)
    mag = SPEED_OF_LIGHT / (4 * np.pi * cfg.carrier_hz * target.range_m)
    return mag * np.exp(-4j * np.pi * target.range_m / cfg.wavelength_m)


def build_comm_channel(user: PolarCoord, scatterers: Sequence[Scatterer], cfg: SystemConfig,
                       far_field: bool = False) -> np.ndarray:
    """LoS plus ``Q`` single-bounce NLoS paths, a length-``n_tx`` complex vector."""
    if len(scatterers) != cfg.n_scatterers:
        raise ValueError(f"expected {cfg.n_scatterers} scatterers, got {len(scatterers)}")
    h = path_gain(user.range_m, cfg) * _response(user, cfg.n_tx, cfg, far_field)
    for sc in scatterers:
        _check_range(sc.link_range_m)
        gain = path_gain(sc.position.range_m + sc.link_range_m, cfg)
        h = h + gain * _response(sc.position, cfg.n_tx, cfg, far_field)
    return h


def build_sense_channel(target: PolarCoord, cfg: SystemConfig, far_field: bool = False) -> np.ndarray:
    """Rank-one round-trip matrix ``beta b a^T`` of shape ``(n_rx, n_tx)``."""
    b = _response(target, cfg.n_rx, cfg, far_field)
    a = _response(target, cfg.n_tx, cfg, far_field)
    return echo_gain(target, cfg) * np.outer(b, a)


@dataclass
class Scenario:
    """Geometry of one drop together with the synthesized channels.

    ``comm_channels`` has shape ``(K, n_tx)`` (row ``k`` is ``h_k``) and
    ``sense_channels`` has shape ``(M, n_rx, n_tx)``.
    """

    users: list[PolarCoord]
    scatterers: list[list[Scatterer]]
    targets: list[PolarCoord]
    comm_channels: np.ndarray
    sense_channels: np.ndarray
    far_field: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_targets(self) -> int:
        return len(self.targets)

    def check(self, cfg: SystemConfig):
        K, M = cfg.n_users, cfg.n_targets
        if self.comm_channels.shape != (K, cfg.n_tx):
            raise ValueError(f"comm_channels shape {self.comm_channels.shape} != {(K, cfg.n_tx)}")
        if self.sense_channels.shape != (M, cfg.n_rx, cfg.n_tx):
            raise ValueError("sense_channels shape does not match the configuration")


def build_scenario(users: Sequence[PolarCoord], scatterers: Sequence[Sequence[Scatterer]],
                   targets: Sequence[PolarCoord], cfg: SystemConfig, far_field: bool = False,
                   meta: dict | None = None) -> Scenario:
    if len(users) != cfg.n_users or len(scatterers) != cfg.n_users:
        raise ValueError("need one user and one scatterer list per configured user")
    if len(targets) != cfg.n_targets:
        raise ValueError("number of targets does not match the configuration")
    H = np.array([build_comm_channel(u, s, cfg, far_field) for u, s in zip(users, scatterers)])
    G = np.array([build_sense_channel(t, cfg, far_field) for t in targets])
    return Scenario(list(users), [list(s) for s in scatterers], list(targets), H, G,
                    far_field=far_field, meta=dict(meta or {}))


def with_far_field(scenario: Scenario, cfg: SystemConfig) -> Scenario:
    """Same geometry, channels rebuilt with plane-wave array responses."""
    return build_scenario(scenario.users, scenario.scatterers, scenario.targets, cfg,
                          far_field=True, meta=scenario.meta)


# -- JSON -------------------------------------------------------------------

def _interleave(z: np.ndarray) -> list:
    z = np.asarray(z)
    out = np.empty(z.shape + (2,))
    out[..., 0], out[..., 1] = z.real, z.imag
    return out.reshape(z.shape[:-1] + (2 * z.shape[-1],)).tolist()


def _deinterleave(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a[..., 0::2] + 1j * a[..., 1::2]


def _coord_dict(p: PolarCoord) -> dict:
    return {"range_m": p.range_m, "angle_deg": float(np.rad2deg(p.angle_rad))}


def _coord(d: dict) -> PolarCoord:
    return PolarCoord.from_degrees(d["range_m"], d["angle_deg"])


def scenario_to_dict(scenario: Scenario, cfg: SystemConfig, include_channels: bool = True) -> dict:
    d = {
        "schema": SCENARIO_SCHEMA,
        "config": cfg.to_dict(),
        "far_field": scenario.far_field,
        "users": [_coord_dict(u) for u in scenario.users],
        "scatterers": [[dict(_coord_dict(s.position), link_range_m=s.link_range_m) for s in ss]
                       for ss in scenario.scatterers],
        "targets": [_coord_dict(t) for t in scenario.targets],
        "meta": scenario.meta,
    }
    if include_channels:
        d["channels"] = {"comm": _interleave(scenario.comm_channels),
                         "sense": _interleave(scenario.sense_channels)}
    return d


def scenario_from_dict(d: dict) -> tuple[Scenario, SystemConfig]:
    """Inverse of :func:`scenario_to_dict`; channels are rebuilt when absent."""
    if d.get("schema") != SCENARIO_SCHEMA:
        raise ValueError(f"unsupported scenario schema {d.get('schema')!r}")
    cfg = SystemConfig.from_dict(d["config"])
    users = [_coord(u) for u in d["users"]]
    scat = [[Scatterer(_coord(s), float(s["link_range_m"])) for s in ss] for ss in d["scatterers"]]
    targets = [_coord(t) for t in d["targets"]]
    far = bool(d.get("far_field", False))
    if "channels" in d:
        sc = Scenario(users, scat, targets, _deinterleave(d["channels"]["comm"]),
                      _deinterleave(d["channels"]["sense"]), far_field=far, meta=d.get("meta", {}))
        sc.check(cfg)
    else:
        sc = build_scenario(users, scat, targets, cfg, far_field=far, meta=d.get("meta", {}))
    return sc, cfg


def save_scenario(path, scenario: Scenario, cfg: SystemConfig, include_channels: bool = True):
    with open(path, "w") as fh:
        json.dump(scenario_to_dict(scenario, cfg, include_channels), fh, indent=1)


def load_scenario(path) -> tuple[Scenario, SystemConfig]:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))
