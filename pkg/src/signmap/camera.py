"""Pinhole camera model and handling of externally estimated intrinsics."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidIntrinsics, InvalidPerturbation, NonPositiveDepth, NoTurnEstimates

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PinholeIntrinsics:
    """Focal lengths and principal point in pixels, image size in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise InvalidIntrinsics(f"image size must be positive: {self.width}x{self.height}")
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidIntrinsics(f"focal lengths must be positive: fx={self.fx} fy={self.fy}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise InvalidIntrinsics(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array([
            [1.0 / self.fx, 0.0, -self.cx / self.fx],
            [0.0, 1.0 / self.fy, -self.cy / self.fy],
            [0.0, 0.0, 1.0],
        ])

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "PinholeIntrinsics":
        width, height = int(d["width"]), int(d["height"])
        cx, cy = d.get("cx"), d.get("cy")
        if cx is None or cy is None:
            log.warning("principal point missing; defaulting to image center")
            cx = width / 2.0 if cx is None else cx
            cy = height / 2.0 if cy is None else cy
        return cls(float(d["fx"]), float(d["fy"]), float(cx), float(cy), width, height)


def project(K: PinholeIntrinsics, p_cam) -> np.ndarray:
    """Project camera-frame point(s) (..., 3) to pixel coordinates (..., 2)."""
    p = np.asarray(p_cam, dtype=float)
    z = p[..., 2]
    if np.any(z <= 0):
        raise NonPositiveDepth(f"point behind or on the camera plane (z={z})")
    u = K.fx * p[..., 0] / z + K.cx
    v = K.fy * p[..., 1] / z + K.cy
    return np.stack([u, v], axis=-1)


def unproject(K: PinholeIntrinsics, pixel, depth) -> np.ndarray:
    """Back-project pixel(s) to the camera frame at the given z-depth(s)."""
    c = np.asarray(pixel, dtype=float)
    d = np.asarray(depth, dtype=float)
    if np.any(d <= 0):
        raise NonPositiveDepth(f"depth must be positive, got {depth}")
    x = (c[..., 0] - K.cx) / K.fx * d
    y = (c[..., 1] - K.cy) / K.fy * d
    return np.stack([x, y, d * np.ones_like(x)], axis=-1)


def ray_direction(K: PinholeIntrinsics, pixel) -> np.ndarray:
    """Unit viewing direction in the camera frame."""
    v = unproject(K, pixel, 1.0)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


@dataclass(frozen=True)
class IntrinsicsEstimate:
    pair_index: int
    fx: float
    fy: float
    cx: float
    cy: float
    in_turn: bool | None = None


@dataclass(frozen=True)
class IntrinsicsEstimateSeries:
    """Per-frame-pair intrinsics from a self-calibrating provider.

    ``pair_index`` is the index of the first frame of the pair.
    """

    estimates: tuple[IntrinsicsEstimate, ...]
    width: int
    height: int

    def __post_init__(self):
        if not self.estimates:
            raise InvalidIntrinsics("estimate series is empty")
        for e in self.estimates:
            PinholeIntrinsics(e.fx, e.fy, e.cx, e.cy, self.width, self.height)

    def __len__(self):
        return len(self.estimates)


def _in_ranges(idx: int, ranges: Iterable[tuple[int, int]]) -> bool:
    return any(lo <= idx <= hi for lo, hi in ranges)


def aggregate_intrinsics(series: IntrinsicsEstimateSeries, mode: str = "median",
                         turns_only: bool = False,
                         turn_ranges: Sequence[tuple[int, int]] | None = None) -> PinholeIntrinsics:
    """Reduce a per-pair series to one set of intrinsics, parameter by parameter.

    With ``turns_only`` the pairs are restricted to those whose first frame lies
    in ``turn_ranges``; if no ranges are given the per-estimate ``in_turn``
    flags are used instead.
    """
    if mode not in ("mean", "median"):
        raise ValueError(f"unknown aggregation mode {mode!r}")
    estimates = series.estimates
    if turns_only:
        if turn_ranges is not None:
            estimates = [e for e in estimates if _in_ranges(e.pair_index, turn_ranges)]
        else:
            estimates = [e for e in estimates if e.in_turn]
        if not estimates:
            raise NoTurnEstimates("no intrinsics estimates fall inside a turn")
    arr = np.array([[e.fx, e.fy, e.cx, e.cy] for e in estimates])
    agg = np.median(arr, axis=0) if mode == "median" else np.mean(arr, axis=0)
    fx, fy, cx, cy = (float(v) for v in agg)
    return PinholeIntrinsics(fx, fy, cx, cy, series.width, series.height)


def perturb_intrinsics(K: PinholeIntrinsics, df_pct: float = 0.0, dc_pct: float = 0.0) -> PinholeIntrinsics:
    """Scale both focal lengths by (1 + df_pct/100) and both principal point
    coordinates by (1 + dc_pct/100)."""
    if df_pct == 0 and dc_pct == 0:
        return K
    kf = 1.0 + df_pct / 100.0
    kc = 1.0 + dc_pct / 100.0
    try:
        return PinholeIntrinsics(K.fx * kf, K.fy * kf, K.cx * kc, K.cy * kc, K.width, K.height)
    except InvalidIntrinsics as exc:
        raise InvalidPerturbation(f"perturbation ({df_pct}%, {dc_pct}%) invalid: {exc}") from exc
