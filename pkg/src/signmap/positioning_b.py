"""Sign positioning from monocular depth maps.

Provider depth comes in arbitrary units. Each frame gets a metric scale from
the ratio of GPS displacement to provider translation with its neighbours;
a sign hypothesis is the scaled back-projection of its box center, and the
absolute position is the centroid of the hypotheses mapped into the world.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .camera import PinholeIntrinsics
from .errors import InvalidDepthSample, NoValidHypotheses, StationaryFrame
from .signs import Method, SignObservation, SignPositionResult, SignTrack, Status
from .trajectory import Pose

DEFAULT_DEPTH_CUTOFF = 20.0
STATIONARY_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Row-major (height, width) depth image. Non-positive or non-finite
    samples are invalid."""

    frame_id: int
    values: np.ndarray

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def sample(self, x: float, y: float) -> float:
        """Bilinear interpolation at continuous pixel coordinates.

        Pixel (col, row) holds the value at coordinate (col, row). Any invalid
        sample among the four neighbours invalidates the result.
        """
        h, w = self.values.shape
        if not (0.0 <= x <= w - 1 and 0.0 <= y <= h - 1):
            raise InvalidDepthSample(f"frame {self.frame_id}: ({x:.2f}, {y:.2f}) outside depth map")
        x0 = min(int(np.floor(x)), w - 2) if w > 1 else 0
        y0 = min(int(np.floor(y)), h - 2) if h > 1 else 0
        ax, ay = x - x0, y - y0
        patch = self.values[y0:y0 + 2, x0:x0 + 2].astype(float)
        if not (np.all(np.isfinite(patch)) and np.all(patch > 0)):
            raise InvalidDepthSample(f"frame {self.frame_id}: invalid depth near ({x:.2f}, {y:.2f})")
        if patch.shape != (2, 2):
            patch = np.broadcast_to(patch[:1, :1], (2, 2))
        top = patch[0, 0] * (1 - ax) + patch[0, 1] * ax
        bot = patch[1, 0] * (1 - ax) + patch[1, 1] * ax
        return float(top * (1 - ay) + bot * ay)


class ScaleProvenance(str, enum.Enum):
    FORWARD = "forward-only"
    BACKWARD = "backward-only"
    AVERAGED = "averaged"
    UNSCALABLE = "unscalable"


@dataclass(frozen=True)
class FrameScale:
    frame_id: int
    scale: float  # nan when unscalable
    provenance: ScaleProvenance

    @property
    def valid(self) -> bool:
        return self.provenance is not ScaleProvenance.UNSCALABLE


def pairwise_scale(t_rel, g_rel, tol: float = STATIONARY_TOL) -> float:
    """Metric scale of one provider translation: |GPS displacement| / |t|."""
    nt = float(np.linalg.norm(t_rel))
    if nt <= tol:
        raise StationaryFrame(f"provider translation norm {nt:g} at or below {tol:g}")
    return float(np.linalg.norm(g_rel)) / nt


def frame_scales(frame_ids: Sequence[int], rel_translations: Sequence, gps_enu: Mapping[int, np.ndarray],
                 tol: float = STATIONARY_TOL) -> dict[int, FrameScale]:
    """Per-frame depth scale from the pairs before and after each frame.

    ``rel_translations[k]`` is the provider translation between ``frame_ids[k]``
    and ``frame_ids[k + 1]``. Interior frames average both sides; end frames and
    frames next to a stationary pair use whichever side is defined.
    """
    n = len(frame_ids)
    if n < 2 or len(rel_translations) != n - 1:
        raise ValueError("need n >= 2 frames and n - 1 relative translations")
    pair_scale: list[float | None] = []
    for k in range(n - 1):
        a, b = frame_ids[k], frame_ids[k + 1]
        try:
            pair_scale.append(pairwise_scale(rel_translations[k], np.asarray(gps_enu[b]) - np.asarray(gps_enu[a]), tol))
        except StationaryFrame:
            pair_scale.append(None)
    out = {}
    for k, f in enumerate(frame_ids):
        fwd = pair_scale[k] if k < n - 1 else None
        bwd = pair_scale[k - 1] if k > 0 else None
        if fwd is not None and bwd is not None:
            out[f] = FrameScale(f, (fwd + bwd) / 2.0, ScaleProvenance.AVERAGED)
        elif fwd is not None:
            out[f] = FrameScale(f, fwd, ScaleProvenance.FORWARD)
        elif bwd is not None:
            out[f] = FrameScale(f, bwd, ScaleProvenance.BACKWARD)
        else:
            out[f] = FrameScale(f, float("nan"), ScaleProvenance.UNSCALABLE)
    return out


@dataclass(frozen=True)
class Discarded:
    frame_id: int
    reason: str  # "too-far" | "unscalable"


def sign_hypothesis(obs: SignObservation, depth: DepthMap, scale: FrameScale, K: PinholeIntrinsics,
                    cutoff: float = DEFAULT_DEPTH_CUTOFF):
    """Camera-frame sign position ``s * d(c) * K^-1 c``, or ``Discarded``."""
    if not scale.valid:
        return Discarded(obs.frame_id, "unscalable")
    c = obs.center
    d = depth.sample(c[0], c[1])
    z = scale.scale * d
    if z > cutoff:
        return Discarded(obs.frame_id, "too-far")
    return np.array([(c[0] - K.cx) / K.fx * z, (c[1] - K.cy) / K.fy * z, z])


def depth_position_track(track: SignTrack, depth_maps: Mapping[int, DepthMap],
                         scales: Mapping[int, FrameScale], poses: Mapping[int, Pose],
                         K: PinholeIntrinsics, cutoff: float = DEFAULT_DEPTH_CUTOFF) -> SignPositionResult:
    """Centroid of the surviving per-frame hypotheses mapped to the world frame."""
    rel: dict[int, np.ndarray] = {}
    world = []
    dropped: dict[int, str] = {}
    for obs in track.observations:
        f = obs.frame_id
        if f not in depth_maps or f not in scales or f not in poses:
            dropped[f] = "no-coverage"
            continue
        try:
            hyp = sign_hypothesis(obs, depth_maps[f], scales[f], K, cutoff)
        except InvalidDepthSample:
            dropped[f] = "invalid-depth"
            continue
        if isinstance(hyp, Discarded):
            dropped[f] = hyp.reason
            continue
        rel[f] = hyp
        world.append(poses[f].to_world(hyp))
    if not world:
        raise NoValidHypotheses(f"track {track.track_id}: all {len(track)} hypotheses discarded")
    p_abs = np.mean(world, axis=0)
    return SignPositionResult(track.track_id, track.class_id, Method.B, Status.OK, p_abs=p_abs,
                              rel_positions=rel, info={"discarded": dropped, "hypotheses": len(world)})


def transfer_pixel(K: PinholeIntrinsics, R_rel, t_rel, pixel, depth):
    """Carry a pixel with known depth from frame j into frame j+1.

    ``R_rel``, ``t_rel`` map camera-j coordinates to camera-(j+1) coordinates;
    returns the pixel and depth in frame j+1.
    """
    c = np.array([pixel[0], pixel[1], 1.0])
    q = K.K @ (np.asarray(R_rel) @ (K.K_inv @ (depth * c))) + K.K @ np.asarray(t_rel)
    return q[:2] / q[2], float(q[2])
