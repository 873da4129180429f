"""Sign detections, tracks, and positioning results."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import EmptyTrack
from .geodesy import GeodeticCoord


@dataclass(frozen=True)
class SignObservation:
    track_id: int
    frame_id: int
    class_id: int
    bbox: tuple[float, float, float, float]  # x, y, w, h in pixels

    @property
    def center(self) -> np.ndarray:
        x, y, w, h = self.bbox
        return np.array([x + w / 2.0, y + h / 2.0])

    def inside(self, width: int, height: int, margin: float = 0.0) -> bool:
        x, y, w, h = self.bbox
        return (x >= margin and y >= margin
                and x + w <= width - margin and y + h <= height - margin)


@dataclass(frozen=True)
class SignTrack:
    track_id: int
    class_id: int
    observations: tuple[SignObservation, ...]

    def __post_init__(self):
        obs = tuple(self.observations)
        if not obs:
            raise EmptyTrack(f"track {self.track_id} has no observations")
        frames = [o.frame_id for o in obs]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ValueError(f"track {self.track_id}: frame ids must be strictly increasing")
        if any(o.class_id != self.class_id or o.track_id != self.track_id for o in obs):
            raise ValueError(f"track {self.track_id}: mixed track or class ids")
        object.__setattr__(self, "observations", obs)

    @property
    def frame_ids(self) -> list[int]:
        return [o.frame_id for o in self.observations]

    def centers(self) -> np.ndarray:
        return np.array([o.center for o in self.observations])

    def __len__(self):
        return len(self.observations)


def group_tracks(observations: Sequence[SignObservation]) -> list[SignTrack]:
    """Group loose observations into tracks ordered by track id."""
    by_track: dict[int, list[SignObservation]] = {}
    for o in observations:
        by_track.setdefault(o.track_id, []).append(o)
    tracks = []
    for tid in sorted(by_track):
        obs = sorted(by_track[tid], key=lambda o: o.frame_id)
        tracks.append(SignTrack(tid, obs[0].class_id, tuple(obs)))
    return tracks


class Status(str, enum.Enum):
    OK = "Ok"
    TRIANGULATION_FAILED = "TriangulationFailed"
    SKIPPED = "Skipped"


class Method(str, enum.Enum):
    A_SHORT = "A-short"
    A_FULL = "A-full"
    B = "B"


@dataclass
class SignPositionResult:
    track_id: int
    class_id: int
    method: Method | None
    status: Status
    p_abs: np.ndarray | None = None  # ENU meters
    rel_positions: dict[int, np.ndarray] = field(default_factory=dict)
    p_geodetic: GeodeticCoord | None = None
    reason: str = ""
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status is Status.OK

    @classmethod
    def skipped(cls, track: SignTrack, reason: str, method: Method | None = None) -> "SignPositionResult":
        return cls(track.track_id, track.class_id, method, Status.SKIPPED, reason=reason)

    def with_geodetic(self, g: GeodeticCoord) -> "SignPositionResult":
        return replace(self, p_geodetic=g)
