"""WGS84 geodetic <-> ECEF <-> local East-North-Up conversions.

All altitudes are ellipsoidal heights; no geoid model is applied.
Both scalar (dataclass) and vectorised (``*_array``) forms are provided; the
scalar functions are thin wrappers around the array ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_B = WGS84_A * (1.0 - WGS84_F)
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)
WGS84_EP2 = WGS84_E2 / (1.0 - WGS84_E2)


@dataclass(frozen=True)
class GeodeticCoord:
    lat: float
    lon: float
    alt: float

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat}")
        if not -180.0 < self.lon <= 180.0:
            raise ValueError(f"longitude out of range: {self.lon}")
        if not math.isfinite(self.alt):
            raise ValueError(f"altitude not finite: {self.alt}")


@dataclass(frozen=True)
class EnuCoord:
    east: float
    north: float
    up: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.east, self.north, self.up)):
            raise ValueError("ENU components must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.east, self.north, self.up])

    @classmethod
    def from_array(cls, v) -> "EnuCoord":
        return cls(float(v[0]), float(v[1]), float(v[2]))


def _wrap_lon(lon):
    lon = np.asarray(lon, dtype=float)
    return np.where(lon <= -180.0, lon + 360.0, lon)


def _sincosd(deg):
    """sin and cos of degrees, exact at multiples of 90."""
    deg = np.asarray(deg, dtype=float)
    rad = np.radians(deg)
    s, c = np.sin(rad), np.cos(rad)
    quarter = np.remainder(deg, 90.0) == 0.0
    k = np.remainder(np.round(deg / 90.0), 4.0)
    s = np.where(quarter, np.choose(k.astype(int) * quarter, [0.0, 1.0, 0.0, -1.0]), s)
    c = np.where(quarter, np.choose(k.astype(int) * quarter, [1.0, 0.0, -1.0, 0.0]), c)
    return s, c


def geodetic_array_to_ecef(lat, lon, alt) -> np.ndarray:
    """Vectorised forward transform; degrees and meters in, (N, 3) meters out."""
    sphi, cphi = _sincosd(lat)
    slam, clam = _sincosd(lon)
    h = np.asarray(alt, dtype=float)
    n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * sphi * sphi)
    x = (n + h) * cphi * clam
    y = (n + h) * cphi * slam
    z = (n * (1.0 - WGS84_E2) + h) * sphi
    return np.stack([x, y, z], axis=-1)


def ecef_array_to_geodetic(xyz, tol: float = 1e-15, max_iter: int = 10):
    """Inverse transform. Returns (lat_deg, lon_deg, alt_m) arrays.

    Bowring's parametric-latitude formula seeds a fixed-point iteration on
    geodetic latitude; each step contracts the error by roughly e^2, so the
    loop exits after two or three passes for terrestrial points. Height uses
    the form that stays well conditioned at the poles.
    """
    xyz = np.asarray(xyz, dtype=float)
    x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2]
    p = np.hypot(x, y)
    lam = np.arctan2(y, x)

    beta = np.arctan2(WGS84_A * z, WGS84_B * p)
    phi = np.arctan2(
        z + WGS84_EP2 * WGS84_B * np.sin(beta) ** 3,
        p - WGS84_E2 * WGS84_A * np.cos(beta) ** 3,
    )
    for _ in range(max_iter):
        sphi = np.sin(phi)
        n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * sphi * sphi)
        nxt = np.arctan2(z + WGS84_E2 * n * sphi, p)
        done = np.all(np.abs(nxt - phi) <= tol)
        phi = nxt
        if done:
            break
    sphi = np.sin(phi)
    h = p * np.cos(phi) + z * sphi - WGS84_A * np.sqrt(1.0 - WGS84_E2 * sphi * sphi)
    return np.degrees(phi), _wrap_lon(np.degrees(lam)), h


def enu_rotation(origin: GeodeticCoord) -> np.ndarray:
    """Rows are the east, north and up unit vectors at ``origin`` in ECEF."""
    sp, cp = (float(v) for v in _sincosd(origin.lat))
    sl, cl = (float(v) for v in _sincosd(origin.lon))
    return np.array([
        [-sl, cl, 0.0],
        [-sp * cl, -sp * sl, cp],
        [cp * cl, cp * sl, sp],
    ])


def geodetic_array_to_enu(lat, lon, alt, origin: GeodeticCoord) -> np.ndarray:
    ecef = geodetic_array_to_ecef(lat, lon, alt)
    o = geodetic_to_ecef(origin)
    return (ecef - o) @ enu_rotation(origin).T


def enu_array_to_geodetic(enu, origin: GeodeticCoord):
    enu = np.asarray(enu, dtype=float)
    ecef = enu @ enu_rotation(origin) + geodetic_to_ecef(origin)
    return ecef_array_to_geodetic(ecef)


def geodetic_to_ecef(g: GeodeticCoord) -> np.ndarray:
    return geodetic_array_to_ecef(g.lat, g.lon, g.alt)


def ecef_to_geodetic(xyz) -> GeodeticCoord:
    lat, lon, alt = ecef_array_to_geodetic(np.asarray(xyz, dtype=float))
    return GeodeticCoord(float(lat), float(lon), float(alt))


def geodetic_to_enu(g: GeodeticCoord, origin: GeodeticCoord) -> EnuCoord:
    return EnuCoord.from_array(geodetic_array_to_enu(g.lat, g.lon, g.alt, origin))


def enu_to_geodetic(e, origin: GeodeticCoord) -> GeodeticCoord:
    v = e.as_array() if isinstance(e, EnuCoord) else np.asarray(e, dtype=float)
    lat, lon, alt = enu_array_to_geodetic(v, origin)
    return GeodeticCoord(float(lat), float(lon), float(alt))
