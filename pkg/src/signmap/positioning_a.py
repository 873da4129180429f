"""Sign positioning from scaled ego-motion: mid-point triangulation refined by
single-point bundle adjustment, then projected back into each observing camera."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .camera import PinholeIntrinsics, ray_direction
from .errors import BehindCameraInit, DegenerateRays, EmptyTrack, NonConvergenceWarning
from .signs import Method, SignPositionResult, SignTrack, Status
from .trajectory import GpsAnchoredTrajectory, Pose, Trajectory

DEFAULT_SHORT_MARGIN = 10


def filter_edge_observations(track: SignTrack, margin: float, width: int, height: int) -> SignTrack:
    """Drop observations whose box comes within ``margin`` pixels of the border."""
    if margin < 0:
        raise ValueError("margin must be non-negative")
    kept = tuple(o for o in track.observations if o.inside(width, height, margin))
    if not kept:
        raise EmptyTrack(f"track {track.track_id}: every observation lies at the image edge")
    return SignTrack(track.track_id, track.class_id, kept)


def midpoint_triangulate(origins, directions, rank_tol: float = 1e-10) -> np.ndarray:
    """Point minimizing the summed squared perpendicular distance to all rays."""
    O = np.asarray(origins, dtype=float).reshape(-1, 3)
    D = np.asarray(directions, dtype=float).reshape(-1, 3)
    if len(O) < 2 or len(O) != len(D):
        raise DegenerateRays("need at least two rays with one direction each")
    D = D / np.linalg.norm(D, axis=1, keepdims=True)
    # sum over rays of (I - d d^T)
    P = np.eye(3)[None] - D[:, :, None] * D[:, None, :]
    A = P.sum(axis=0)
    b = np.einsum("nij,nj->i", P, O)
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[-1] <= rank_tol * sv[0]:
        raise DegenerateRays("rays are parallel; no unique closest point")
    return np.linalg.solve(A, b)


def reprojection_residuals(point, R_cw, t_cw, K: PinholeIntrinsics, pixels):
    """Stacked pixel residuals (2N,) and their Jacobian w.r.t. the point (2N, 3).

    ``R_cw`` is (N, 3, 3) and ``t_cw`` is (N, 3), both camera-from-world.
    """
    X = np.einsum("nij,j->ni", R_cw, point) + t_cw
    x, y, z = X[:, 0], X[:, 1], X[:, 2]
    u = K.fx * x / z + K.cx
    v = K.fy * y / z + K.cy
    r = np.stack([u, v], axis=1) - pixels
    dproj = np.zeros((len(X), 2, 3))
    dproj[:, 0, 0] = K.fx / z
    dproj[:, 0, 2] = -K.fx * x / z**2
    dproj[:, 1, 1] = K.fy / z
    dproj[:, 1, 2] = -K.fy * y / z**2
    J = np.einsum("nij,njk->nik", dproj, R_cw)
    return r.reshape(-1), J.reshape(-1, 3)


@dataclass
class BundleAdjustResult:
    point: np.ndarray
    initial_cost: float
    final_cost: float
    iterations: int
    converged: bool
    frames: list[int]


def _stack_poses(poses: Mapping[int, Pose], frames: Sequence[int]):
    R_cw = np.array([poses[f].R.T for f in frames])
    t_cw = np.array([poses[f].t_cw for f in frames])
    return R_cw, t_cw


def bundle_adjust_sign(p_init, track: SignTrack, poses: Mapping[int, Pose], K: PinholeIntrinsics,
                       max_iter: int = 100, lam0: float = 1e-3,
                       ftol: float = 1e-10, gtol: float = 1e-10) -> BundleAdjustResult:
    """Levenberg-Marquardt refinement of one sign position with poses held fixed.

    Only frames where the initial point lies in front of the camera contribute;
    steps that would move the point behind any of them are rejected.
    """
    p = np.asarray(p_init, dtype=float).copy()
    if not np.all(np.isfinite(p)):
        raise ValueError("initial point is not finite")
    frames = track.frame_ids
    R_cw, t_cw = _stack_poses(poses, frames)
    depth = np.einsum("nj,j->n", R_cw[:, 2, :], p) + t_cw[:, 2]
    front = depth > 0
    if not front.any():
        raise BehindCameraInit(f"track {track.track_id}: initial point behind every camera")
    R_cw, t_cw = R_cw[front], t_cw[front]
    pixels = track.centers()[front]
    used = [f for f, keep in zip(frames, front) if keep]

    def depths(q):
        return np.einsum("nj,j->n", R_cw[:, 2, :], q) + t_cw[:, 2]

    r, J = reprojection_residuals(p, R_cw, t_cw, K, pixels)
    cost = initial = float(r @ r)
    lam = lam0
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        g = J.T @ r
        if cost == 0.0 or np.max(np.abs(g)) < gtol:
            converged = True
            break
        H = J.T @ J
        step = np.linalg.solve(H + lam * np.diag(np.diag(H)), -g)
        cand = p + step
        if np.all(depths(cand) > 0):
            r_new, J_new = reprojection_residuals(cand, R_cw, t_cw, K, pixels)
            new_cost = float(r_new @ r_new)
        else:
            new_cost = np.inf
        if new_cost < cost:
            rel = (cost - new_cost) / cost
            p, r, J, cost = cand, r_new, J_new, new_cost
            lam = max(lam / 10.0, 1e-12)
            if rel < ftol:
                converged = True
                break
        else:
            lam *= 10.0
            if lam > 1e12 or np.linalg.norm(step) <= 1e-15 * max(1.0, np.linalg.norm(p)):
                # no representable descent step left: p is a numerical minimum
                converged = True
                break
    if not converged:
        warnings.warn(f"track {track.track_id}: bundle adjustment hit {max_iter} iterations",
                      NonConvergenceWarning, stacklevel=2)
    return BundleAdjustResult(p, initial, cost, it, converged, used)


def relative_positions(p_abs, poses: Mapping[int, Pose], frames: Sequence[int]):
    """Sign position in each listed camera frame, and whether all depths are positive."""
    rel = {f: poses[f].to_camera(p_abs) for f in frames}
    status = Status.OK if all(v[2] > 0 for v in rel.values()) else Status.TRIANGULATION_FAILED
    return rel, status


def triangulate_track(track: SignTrack, trajectory: Trajectory | GpsAnchoredTrajectory,
                      K: PinholeIntrinsics, mode: str = "full",
                      short_margin: int = DEFAULT_SHORT_MARGIN) -> SignPositionResult:
    """Position one sign track from metric camera poses.

    ``trajectory`` is either an already metric trajectory (full mode only) or a
    provider trajectory anchored to GPS, in which case full mode uses the global
    alignment and short mode re-aligns on the frames around the track.
    """
    method = {"full": Method.A_FULL, "short": Method.A_SHORT}.get(mode)
    if method is None:
        raise ValueError(f"unknown triangulation mode {mode!r}")
    if len(track) < 2:
        return SignPositionResult.skipped(track, "insufficient parallax", method)

    frames = track.frame_ids
    if isinstance(trajectory, GpsAnchoredTrajectory):
        if not trajectory.trajectory.covers(frames):
            return SignPositionResult.skipped(track, "no pose coverage", method)
        if mode == "full":
            poses, _ = trajectory.full()
        else:
            poses, _ = trajectory.window(frames[0], frames[-1], short_margin)
    else:
        if mode == "short":
            raise ValueError("short mode needs a GPS-anchored trajectory")
        if not trajectory.covers(frames):
            return SignPositionResult.skipped(track, "no pose coverage", method)
        poses = trajectory

    origins = np.array([poses[f].translation for f in frames])
    dirs_cam = ray_direction(K, track.centers())
    dirs = np.einsum("nij,nj->ni", np.array([poses[f].R for f in frames]), dirs_cam)
    p_init = midpoint_triangulate(origins, dirs)
    ba = bundle_adjust_sign(p_init, track, poses, K)
    rel, status = relative_positions(ba.point, poses, frames)
    result = SignPositionResult(
        track.track_id, track.class_id, method, status, p_abs=ba.point, rel_positions=rel,
        info={"ba_initial_cost": ba.initial_cost, "ba_final_cost": ba.final_cost,
              "ba_iterations": ba.iterations, "ba_converged": ba.converged},
    )
    if status is not Status.OK:
        result.reason = "negative relative depth"
    return result
