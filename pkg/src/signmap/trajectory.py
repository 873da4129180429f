"""Camera poses, trajectories, similarity alignment and trajectory error metrics.

Poses are world-from-camera: ``translation`` is the camera center in the world
frame and ``R`` maps camera-frame directions into the world frame. Quaternions
are stored in (x, y, z, w) order.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DegenerateConfiguration, InsufficientOverlap

# Smallest-to-largest singular value ratio below which a centered point set is
# treated as rank deficient.
RANK_TOL = 1e-10


def quat_to_matrix(q) -> np.ndarray:
    return Rotation.from_quat(q).as_matrix()


def matrix_to_quat(R) -> np.ndarray:
    q = Rotation.from_matrix(R).as_quat()
    # canonical sign: w >= 0
    return -q if q[3] < 0 else q


@dataclass(frozen=True, eq=False)
class Pose:
    quat: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.quat, dtype=float).reshape(4)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise ValueError(f"quaternion not unit norm: |q|={np.linalg.norm(q)}")
        q.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "quat", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.array([0.0, 0.0, 0.0, 1.0]), np.zeros(3))

    @classmethod
    def from_Rt(cls, R, t) -> "Pose":
        return cls(matrix_to_quat(np.asarray(R, dtype=float)), t)

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls.from_Rt(T[:3, :3], T[:3, 3])

    @cached_property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.quat)

    @property
    def center(self) -> np.ndarray:
        return self.translation

    @property
    def R_cw(self) -> np.ndarray:
        """Camera-from-world rotation."""
        return self.R.T

    @property
    def t_cw(self) -> np.ndarray:
        """Camera-from-world translation, ``-R^T c``."""
        return -self.R.T @ self.translation

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.translation
        return T

    def compose(self, other: "Pose") -> "Pose":
        """``self * other``: apply ``other`` first, then ``self``."""
        return Pose.from_Rt(self.R @ other.R, self.R @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        return Pose.from_Rt(self.R.T, -self.R.T @ self.translation)

    def to_camera(self, p_world) -> np.ndarray:
        return (np.asarray(p_world, dtype=float) - self.translation) @ self.R

    def to_world(self, p_cam) -> np.ndarray:
        return np.asarray(p_cam, dtype=float) @ self.R.T + self.translation

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.quat, other.quat) and np.array_equal(self.translation, other.translation)

    def __repr__(self):
        return f"Pose(quat={self.quat.tolist()}, translation={self.translation.tolist()})"


class Trajectory(Mapping[int, Pose]):
    """Immutable frame_id -> Pose mapping with strictly increasing ids."""

    def __init__(self, frame_ids: Iterable[int], poses: Iterable[Pose]):
        ids = tuple(int(f) for f in frame_ids)
        poses = tuple(poses)
        if not ids:
            raise ValueError("trajectory is empty")
        if len(ids) != len(poses):
            raise ValueError("frame_ids and poses differ in length")
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise ValueError("frame_ids must be strictly increasing")
        self.frame_ids = ids
        self.poses = poses
        self._index = {f: i for i, f in enumerate(ids)}

    def __getitem__(self, frame_id: int) -> Pose:
        return self.poses[self._index[frame_id]]

    def __iter__(self):
        return iter(self.frame_ids)

    def __len__(self):
        return len(self.frame_ids)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return self.frame_ids == other.frame_ids and all(a == b for a, b in zip(self.poses, other.poses))

    def __repr__(self):
        return f"Trajectory({len(self)} poses, frames {self.frame_ids[0]}..{self.frame_ids[-1]})"

    def centers(self, frames: Sequence[int] | None = None) -> np.ndarray:
        frames = self.frame_ids if frames is None else frames
        return np.array([self[f].translation for f in frames])

    def subset(self, frames: Iterable[int]) -> "Trajectory":
        keep = sorted(f for f in set(frames) if f in self._index)
        return Trajectory(keep, [self[f] for f in keep])

    def covers(self, frames: Iterable[int]) -> bool:
        return all(f in self._index for f in frames)

    def relative_translations(self) -> dict[tuple[int, int], np.ndarray]:
        """Translation of each consecutive pair expressed in the earlier camera."""
        out = {}
        for a, b in zip(self.frame_ids, self.frame_ids[1:]):
            pa, pb = self[a], self[b]
            out[(a, b)] = pa.R.T @ (pb.translation - pa.translation)
        return out


def concat_relative_poses(rel_poses: Sequence[Pose], first_frame: int = 0) -> Trajectory:
    """Chain per-pair relative motions into a trajectory starting at identity.

    ``rel_poses[j]`` maps camera j+1 coordinates into camera j coordinates.
    """
    if not rel_poses:
        raise ValueError("need at least one relative pose")
    poses = [Pose.identity()]
    T = np.eye(4)
    for rel in rel_poses:
        T = T @ rel.matrix()
        poses.append(Pose.from_matrix(T))
    return Trajectory(range(first_frame, first_frame + len(poses)), poses)


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    scale: float
    quat: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        if not (self.scale > 0 and np.isfinite(self.scale)):
            raise ValueError(f"similarity scale must be positive, got {self.scale}")
        object.__setattr__(self, "quat", np.asarray(self.quat, dtype=float).reshape(4))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(1.0, np.array([0.0, 0.0, 0.0, 1.0]), np.zeros(3))

    @classmethod
    def from_Rst(cls, R, s, t) -> "SimilarityTransform":
        return cls(float(s), matrix_to_quat(R), t)

    @cached_property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.quat)

    def apply(self, points) -> np.ndarray:
        return self.scale * np.asarray(points, dtype=float) @ self.R.T + self.translation


def _similarity(src, dst, with_scale=True, strict=True):
    """Least-squares (R, s, t) with ``dst ~ s R src + t``, plus the RMSE."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError(f"point sets must be matching (N, 3) arrays, got {src.shape} and {dst.shape}")
    n = len(src)
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    var_s = (xs * xs).sum() / n
    if strict:
        if n < 3:
            raise DegenerateConfiguration(f"need at least 3 point pairs, got {n}")
        sv = np.linalg.svd(xs, compute_uv=False)
        if sv[0] == 0 or sv[1] / sv[0] < RANK_TOL:
            raise DegenerateConfiguration("source points are coincident or collinear")
        sv = np.linalg.svd(xd, compute_uv=False)
        if sv[0] == 0 or sv[1] / sv[0] < RANK_TOL:
            raise DegenerateConfiguration("target points are coincident or collinear")
    cov = xd.T @ xs / n
    U, D, Vt = np.linalg.svd(cov)
    S = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2] = -1.0
    R = U @ np.diag(S) @ Vt
    if with_scale:
        s = (D * S).sum() / var_s if var_s > 0 else 1.0
        if s <= 0:
            s = 1.0
    else:
        s = 1.0
    t = mu_d - s * R @ mu_s
    resid = dst - (s * src @ R.T + t)
    rmse = float(np.sqrt((resid * resid).sum(axis=1).mean()))
    return R, s, t, rmse


def umeyama_align(src, dst) -> SimilarityTransform:
    """Least-squares similarity mapping ``src`` points onto ``dst`` points."""
    R, s, t, _ = _similarity(src, dst, with_scale=True, strict=True)
    return SimilarityTransform.from_Rst(R, s, t)


def apply_similarity(traj: Trajectory, T: SimilarityTransform) -> Trajectory:
    """Move camera centers by ``s R c + t`` and rotate orientations by ``R``."""
    R, s, t = T.R, T.scale, T.translation
    poses = [Pose.from_Rt(R @ p.R, s * R @ p.translation + t) for p in traj.poses]
    return Trajectory(traj.frame_ids, poses)


def spread_ratio(points) -> float:
    """Second-to-first singular value ratio of the centered point set.

    Zero for collinear sets; used to judge how well a planar rotation can be
    recovered from camera centers.
    """
    x = np.asarray(points, dtype=float)
    x = x - x.mean(axis=0)
    sv = np.linalg.svd(x, compute_uv=False)
    return float(sv[1] / sv[0]) if sv[0] > 0 else 0.0


class GpsAnchoredTrajectory:
    """A provider trajectory paired with per-frame ENU GPS positions.

    ``full()`` aligns every frame that has a GPS fix; ``window()`` aligns only
    frames near a detection track, widening the window symmetrically while the
    camera centers inside it are too close to collinear to fix the rotation.
    """

    def __init__(self, trajectory: Trajectory, gps_enu: Mapping[int, np.ndarray],
                 min_spread_ratio: float = 0.02):
        self.trajectory = trajectory
        self.gps_enu = gps_enu
        self.min_spread_ratio = min_spread_ratio
        self.frames = [f for f in trajectory.frame_ids if f in gps_enu]
        self._full = None

    def _align(self, frames) -> tuple[Trajectory, SimilarityTransform]:
        src = self.trajectory.centers(frames)
        dst = np.array([self.gps_enu[f] for f in frames])
        T = umeyama_align(src, dst)
        return apply_similarity(self.trajectory, T), T

    def full(self) -> tuple[Trajectory, SimilarityTransform]:
        if self._full is None:
            self._full = self._align(self.frames)
        return self._full

    def window(self, first: int, last: int, margin: int) -> tuple[Trajectory, SimilarityTransform]:
        frames = np.array(self.frames)
        lo, hi = first - margin, last + margin
        while True:
            sel = frames[(frames >= lo) & (frames <= hi)].tolist()
            covers_all = len(sel) == len(frames)
            if len(sel) >= 3:
                src = self.trajectory.centers(sel)
                dst = np.array([self.gps_enu[f] for f in sel])
                if min(spread_ratio(src), spread_ratio(dst)) >= self.min_spread_ratio:
                    return self._align(sel)
            if covers_all:
                return self.full()
            width = max(hi - lo, 1)
            lo, hi = lo - width // 2 - 1, hi + width // 2 + 1


def _common(est: Trajectory, gt: Trajectory) -> list[int]:
    return [f for f in est.frame_ids if f in gt]


def ate_full(est: Trajectory, gt: Trajectory) -> float:
    """RMSE of camera-center distances after rigid (no scale) alignment."""
    frames = _common(est, gt)
    if len(frames) < 3:
        raise InsufficientOverlap(f"need at least 3 common frames, got {len(frames)}")
    *_, rmse = _similarity(est.centers(frames), gt.centers(frames), with_scale=False, strict=False)
    return rmse


def ate_5(est: Trajectory, gt: Trajectory, window: int = 5) -> tuple[float, float]:
    """Mean and standard deviation of per-window RMSE over 5-frame windows.

    Windows slide with stride 1 over the common frames, and each window is
    similarity-aligned (scale included) before the RMSE is taken.
    """
    frames = _common(est, gt)
    if len(frames) < window:
        raise InsufficientOverlap(f"need at least {window} common frames, got {len(frames)}")
    E, G = est.centers(frames), gt.centers(frames)
    errs = np.array([
        _similarity(E[i:i + window], G[i:i + window], with_scale=True, strict=False)[3]
        for i in range(len(frames) - window + 1)
    ])
    return float(errs.mean()), float(errs.std())
