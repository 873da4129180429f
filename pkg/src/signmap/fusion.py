"""Provider selection for maximum map coverage, and positioning error metrics.

Calibration preference: a geometric (SfM) calibration when the drive has
turns; otherwise the learned per-pair series, reduced with the median over
turn frames when there are turns and over the whole drive when there are
none. Positioning preference per sign: short-window triangulation on the
geometric trajectory (absolute position from the loop-closed variant when
one exists), then depth-map positioning; a sign only ends up skipped if no
provider covers it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .camera import IntrinsicsEstimateSeries, PinholeIntrinsics, aggregate_intrinsics
from .errors import EmptyTrack, NoCalibrationAvailable, NoTurnEstimates, NoValidHypotheses, SignmapError
from .geodesy import GeodeticCoord, enu_to_geodetic, geodetic_to_enu
from .positioning_a import DEFAULT_SHORT_MARGIN, filter_edge_observations, triangulate_track
from .positioning_b import DEFAULT_DEPTH_CUTOFF, DepthMap, depth_position_track, frame_scales
from .signs import Method, SignPositionResult, SignTrack, Status
from .trajectory import GpsAnchoredTrajectory, Trajectory

log = logging.getLogger(__name__)

DEFAULT_GATE = 5.0


@dataclass
class ProviderBundle:
    calibration: PinholeIntrinsics | None = None
    learned_calibration: IntrinsicsEstimateSeries | None = None
    geometric_trajectory: Trajectory | None = None
    geometric_trajectory_lc: Trajectory | None = None
    learned_trajectory: Trajectory | None = None
    depth_maps: Mapping[int, DepthMap] | None = None
    turn_ranges: list[tuple[int, int]] = field(default_factory=list)

    @property
    def has_calibration(self) -> bool:
        return self.calibration is not None or self.learned_calibration is not None

    @property
    def has_motion(self) -> bool:
        return any(t is not None for t in (self.geometric_trajectory, self.geometric_trajectory_lc,
                                           self.learned_trajectory, self.depth_maps))

    def provenance(self) -> dict:
        return {
            "calibration": self.calibration is not None,
            "learned_calibration": self.learned_calibration is not None,
            "geometric_trajectory": self.geometric_trajectory is not None,
            "geometric_trajectory_lc": self.geometric_trajectory_lc is not None,
            "learned_trajectory": self.learned_trajectory is not None,
            "depth_maps": self.depth_maps is not None,
            "turn_ranges": [list(r) for r in self.turn_ranges],
        }


def select_calibration(bundle: ProviderBundle) -> tuple[PinholeIntrinsics, str]:
    turns = bool(bundle.turn_ranges)
    if turns and bundle.calibration is not None:
        return bundle.calibration, "geometric"
    if bundle.learned_calibration is not None:
        if turns:
            try:
                K = aggregate_intrinsics(bundle.learned_calibration, "median", turns_only=True,
                                         turn_ranges=bundle.turn_ranges)
                return K, "learned-turns-median"
            except NoTurnEstimates:
                log.warning("no learned intrinsics inside turn ranges; using full-sequence median")
        return aggregate_intrinsics(bundle.learned_calibration, "median"), "learned-median"
    if bundle.calibration is not None:
        log.warning("geometric calibration used on a drive without turns")
        return bundle.calibration, "geometric-no-turns"
    raise NoCalibrationAvailable("bundle holds neither a calibration nor per-pair estimates")


@dataclass(frozen=True)
class PositioningPlan:
    methods: tuple[Method, ...]
    reason: str = ""

    @property
    def primary(self) -> Method | None:
        return self.methods[0] if self.methods else None


def _geometric_for_relative(bundle: ProviderBundle) -> Trajectory | None:
    return bundle.geometric_trajectory or bundle.geometric_trajectory_lc


def select_positioning(bundle: ProviderBundle, track: SignTrack) -> PositioningPlan:
    frames = track.frame_ids
    methods = []
    geo = _geometric_for_relative(bundle)
    if geo is not None and geo.covers(frames):
        methods.append(Method.A_SHORT)
    if (bundle.depth_maps is not None and bundle.learned_trajectory is not None
            and any(f in bundle.depth_maps and f in bundle.learned_trajectory for f in frames)):
        methods.append(Method.B)
    if not methods:
        return PositioningPlan((), "NoCoverage")
    return PositioningPlan(tuple(methods))


FORCED_MODES = {
    "force-A-full": (Method.A_FULL,),
    "force-A-short": (Method.A_SHORT,),
    "force-B": (Method.B,),
}


class FusionRunner:
    """Executes positioning plans for a set of tracks against one bundle."""

    def __init__(self, bundle: ProviderBundle, gps_enu: Mapping[int, np.ndarray], K: PinholeIntrinsics,
                 mode: str = "auto", short_margin: int = DEFAULT_SHORT_MARGIN,
                 depth_cutoff: float = DEFAULT_DEPTH_CUTOFF, edge_margin: float = 0.0,
                 min_spread_ratio: float = 0.02):
        if mode != "auto" and mode not in FORCED_MODES:
            raise ValueError(f"unknown positioning mode {mode!r}")
        self.bundle = bundle
        self.gps_enu = gps_enu
        self.K = K
        self.mode = mode
        self.short_margin = short_margin
        self.depth_cutoff = depth_cutoff
        self.edge_margin = edge_margin

        def anchor(t):
            return None if t is None else GpsAnchoredTrajectory(t, gps_enu, min_spread_ratio)

        self.geo = anchor(_geometric_for_relative(bundle))
        self.geo_lc = anchor(bundle.geometric_trajectory_lc) if bundle.geometric_trajectory is not None else None
        self.learned = anchor(bundle.learned_trajectory)
        self._scales = None

    def plan(self, track: SignTrack) -> PositioningPlan:
        if self.mode == "auto":
            return select_positioning(self.bundle, track)
        return PositioningPlan(FORCED_MODES[self.mode])

    def scales(self):
        if self._scales is None:
            traj = self.bundle.learned_trajectory
            frames = [f for f in traj.frame_ids if f in self.gps_enu]
            sub = traj.subset(frames)
            rel = list(sub.relative_translations().values())
            self._scales = frame_scales(frames, rel, self.gps_enu) if len(frames) >= 2 else {}
        return self._scales

    def _run_a(self, track: SignTrack, method: Method) -> SignPositionResult:
        if self.geo is None:
            return SignPositionResult.skipped(track, "no geometric trajectory", method)
        mode = "short" if method is Method.A_SHORT else "full"
        rel = triangulate_track(track, self.geo, self.K, mode, self.short_margin)
        if not rel.ok or self.geo_lc is None or not self.geo_lc.trajectory.covers(track.frame_ids):
            return rel
        try:
            absolute = triangulate_track(track, self.geo_lc, self.K, mode, self.short_margin)
        except SignmapError as exc:
            log.info("track %d: loop-closure variant failed (%s); keeping no-LC absolute", track.track_id, exc)
            return rel
        if absolute.ok:
            rel.p_abs = absolute.p_abs
            rel.info["absolute_from"] = "loop-closure"
        return rel

    def _run_b(self, track: SignTrack) -> SignPositionResult:
        if self.learned is None or self.bundle.depth_maps is None:
            return SignPositionResult.skipped(track, "no depth provider", Method.B)
        poses, _ = self.learned.full()
        return depth_position_track(track, self.bundle.depth_maps, self.scales(), poses, self.K,
                                    self.depth_cutoff)

    def run_method(self, track: SignTrack, method: Method) -> SignPositionResult:
        try:
            if method is Method.B:
                return self._run_b(track)
            return self._run_a(track, method)
        except NoValidHypotheses as exc:
            return SignPositionResult(track.track_id, track.class_id, method,
                                      Status.TRIANGULATION_FAILED, reason=str(exc))
        except SignmapError as exc:
            return SignPositionResult(track.track_id, track.class_id, method,
                                      Status.TRIANGULATION_FAILED, reason=f"{type(exc).__name__}: {exc}")

    def position(self, track: SignTrack) -> SignPositionResult:
        try:
            track = filter_edge_observations(track, self.edge_margin, self.K.width, self.K.height)
        except EmptyTrack:
            return SignPositionResult.skipped(track, "all observations at image edge")
        plan = self.plan(track)
        if not plan.methods:
            return SignPositionResult.skipped(track, plan.reason)
        attempts = []
        result = None
        for method in plan.methods:
            result = self.run_method(track, method)
            attempts.append({"method": method.value, "status": result.status.value, "reason": result.reason})
            if result.ok:
                break
        result.info["attempts"] = attempts
        return result

    def run(self, tracks: Sequence[SignTrack]) -> list[SignPositionResult]:
        return [self.position(t) for t in tracks]


def attach_geodetic(results: Sequence[SignPositionResult], origin: GeodeticCoord) -> list[SignPositionResult]:
    out = []
    for r in results:
        if r.p_abs is not None:
            r = r.with_geodetic(enu_to_geodetic(r.p_abs, origin))
        out.append(r)
    return out


# ---------------------------------------------------------------- evaluation


@dataclass
class GroundTruthSign:
    sign_id: int
    class_id: int
    enu: np.ndarray
    rel: dict[int, np.ndarray] = field(default_factory=dict)


@dataclass
class GroundTruth:
    origin: GeodeticCoord
    signs: list[GroundTruthSign]


@dataclass
class SignError:
    track_id: int
    sign_id: int
    abs_error: float
    rel_error: float | None
    rel_frame_errors: list[float]


@dataclass
class ErrorReport:
    signs: list[SignError]
    positioned: int  # m
    misses: list[int]
    false_positives: list[int]

    @property
    def mean_rel(self) -> float:
        v = [s.rel_error for s in self.signs if s.rel_error is not None]
        return float(np.mean(v)) if v else float("nan")

    @property
    def mean_abs(self) -> float:
        return float(np.mean([s.abs_error for s in self.signs])) if self.signs else float("nan")

    @property
    def pooled_rel(self) -> float:
        v = [e for s in self.signs for e in s.rel_frame_errors]
        return float(np.mean(v)) if v else float("nan")

    @property
    def normalized(self) -> float:
        """Mean relative error divided by the number of positioned signs."""
        if self.positioned == 0 or not np.isfinite(self.mean_rel):
            return float("inf")
        return self.mean_rel / self.positioned

    def to_dict(self) -> dict:
        return {
            "mean_relative_error_m": self.mean_rel,
            "pooled_relative_error_m": self.pooled_rel,
            "mean_absolute_error_m": self.mean_abs,
            "positioned": self.positioned,
            "normalized_relative_error": self.normalized,
            "misses": self.misses,
            "false_positives": self.false_positives,
            "signs": [
                {"track_id": s.track_id, "gt_sign_id": s.sign_id, "absolute_error_m": s.abs_error,
                 "relative_error_m": s.rel_error}
                for s in self.signs
            ],
        }


def _enu_in(r: SignPositionResult, origin: GeodeticCoord | None, gt_origin: GeodeticCoord) -> np.ndarray:
    if r.p_geodetic is not None:
        return geodetic_to_enu(r.p_geodetic, gt_origin).as_array()
    if origin is not None and origin != gt_origin:
        return geodetic_to_enu(enu_to_geodetic(r.p_abs, origin), gt_origin).as_array()
    return np.asarray(r.p_abs, dtype=float)


def evaluate(results: Sequence[SignPositionResult], ground_truth: GroundTruth,
             gate: float = DEFAULT_GATE, origin: GeodeticCoord | None = None) -> ErrorReport:
    """Match positioned signs to ground truth and measure their errors.

    Matching is a minimum-total-distance assignment on absolute positions;
    pairs further apart than ``gate`` are not matched. Positions are compared
    in the ground truth's ENU frame, so the estimate's origin does not matter.
    """
    ok = [r for r in results if r.ok]
    gts = ground_truth.signs
    est = np.array([_enu_in(r, origin, ground_truth.origin) for r in ok]).reshape(-1, 3)
    ref = np.array([g.enu for g in gts], dtype=float).reshape(-1, 3)
    pairs = []
    if len(est) and len(ref):
        dist = np.linalg.norm(est[:, None, :] - ref[None, :, :], axis=2)
        cost = np.where(dist <= gate, dist, gate * 1e6 + dist)
        rows, cols = linear_sum_assignment(cost)
        pairs = [(i, j) for i, j in zip(rows, cols) if dist[i, j] <= gate]
    errors = []
    for i, j in sorted(pairs, key=lambda ij: ok[ij[0]].track_id):
        r, g = ok[i], gts[j]
        frame_errs = [float(np.linalg.norm(np.asarray(r.rel_positions[f]) - g.rel[f]))
                      for f in sorted(r.rel_positions) if f in g.rel]
        errors.append(SignError(r.track_id, g.sign_id, float(np.linalg.norm(est[i] - ref[j])),
                                float(np.mean(frame_errs)) if frame_errs else None, frame_errs))
    matched_est = {i for i, _ in pairs}
    matched_gt = {j for _, j in pairs}
    return ErrorReport(
        signs=errors,
        positioned=len(ok),
        misses=sorted(g.sign_id for j, g in enumerate(gts) if j not in matched_gt),
        false_positives=sorted(r.track_id for i, r in enumerate(ok) if i not in matched_est),
    )
