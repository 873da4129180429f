"""Turn detection on the GPS track using Ramer-Douglas-Peucker simplification."""

from __future__ import annotations

from typing import Sequence

import numpy as np

DEFAULT_EPSILON = 1.0
DEFAULT_HALF_WINDOW = 15


def _segment_distances(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from each point to the segment a-b."""
    ab = b - a
    denom = ab @ ab
    if denom == 0:
        return np.linalg.norm(points - a, axis=1)
    t = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(points - proj, axis=1)


def rdp_simplify(polyline, epsilon: float) -> list[int]:
    """Indices of the vertices kept by Ramer-Douglas-Peucker.

    Uses an explicit stack so long GPS tracks cannot hit the recursion limit.
    """
    pts = np.asarray(polyline, dtype=float)
    if len(pts) < 2:
        raise ValueError("polyline needs at least two points")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    keep = np.zeros(len(pts), dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, len(pts) - 1)]
    while stack:
        lo, hi = stack.pop()
        if hi - lo < 2:
            continue
        d = _segment_distances(pts[lo + 1:hi], pts[lo], pts[hi])
        k = int(np.argmax(d))
        if d[k] > epsilon:
            mid = lo + 1 + k
            keep[mid] = True
            stack.append((lo, mid))
            stack.append((mid, hi))
    return np.flatnonzero(keep).tolist()


def merge_ranges(ranges: Sequence[tuple[int, int]]) -> list[tuple[int, int]]:
    out: list[tuple[int, int]] = []
    for lo, hi in sorted(ranges):
        if out and lo <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], hi))
        else:
            out.append((lo, hi))
    return out


def extract_turn_ranges(gps_enu, epsilon: float = DEFAULT_EPSILON,
                        half_window: int = DEFAULT_HALF_WINDOW,
                        frame_ids: Sequence[int] | None = None) -> list[tuple[int, int]]:
    """Inclusive frame ranges around interior RDP vertices of the (east, north) track.

    Ranges are expressed in ``frame_ids`` (default: positional indices 0..n-1),
    clamped to the track and merged where they overlap.
    """
    pts = np.asarray(gps_enu, dtype=float)[:, :2]
    n = len(pts)
    if n < 3:
        raise ValueError("need at least three GPS fixes")
    ids = list(range(n)) if frame_ids is None else list(frame_ids)
    kept = rdp_simplify(pts, epsilon)
    ranges = [(max(0, c - half_window), min(n - 1, c + half_window)) for c in kept[1:-1]]
    return [(ids[lo], ids[hi]) for lo, hi in merge_ranges(ranges)]
