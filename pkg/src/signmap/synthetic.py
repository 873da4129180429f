"""Synthetic driving scenes with exactly known geometry.

A scene is a planar vehicle path in a local ENU frame whose origin is the
first camera center, roadside signs, and everything the pipeline ingests:
detections, GPS fixes, provider trajectories with a hidden scale, provider
depth maps, and intrinsics. Geometry is drawn from ``seed``; observation, GPS
and depth noise from ``noise_seed`` so the same scene can be re-observed.

Depth maps are sparse: sign boxes are rendered as fronto-parallel billboards
of constant depth, the ground plane fills the rows below the horizon, and the
rest is invalid (0).
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .camera import IntrinsicsEstimate, IntrinsicsEstimateSeries, PinholeIntrinsics, project
from .errors import InfeasibleSpec
from .fusion import GroundTruth, GroundTruthSign, ProviderBundle
from .geodesy import GeodeticCoord, enu_array_to_geodetic, geodetic_array_to_enu
from .positioning_b import DepthMap
from .signs import SignObservation, SignTrack, group_tracks
from .trajectory import Pose, Trajectory
from .turns import extract_turn_ranges

DEFAULT_INTRINSICS = PinholeIntrinsics(fx=320.0, fy=320.0, cx=320.0, cy=160.0, width=640, height=320)


@dataclass(frozen=True)
class Segment:
    frames: int
    turn_deg: float


@dataclass(frozen=True)
class SceneSpec:
    shape: str = "composite"  # straight | arc | composite
    n_frames: int = 100
    speed: float = 1.0  # m per frame
    arc_turn_deg: float = 90.0
    segments: tuple[Segment, ...] = ()
    intrinsics: PinholeIntrinsics = DEFAULT_INTRINSICS
    n_signs: int = 10
    lateral_range: tuple[float, float] = (2.0, 8.0)
    height_range: tuple[float, float] = (1.0, 4.0)
    sign_size: float = 0.8
    camera_height: float = 1.65
    min_bbox_px: float = 8.0
    min_views: int = 3
    n_classes: int = 5
    pixel_sigma: float = 0.0
    gps_sigma: float = 0.0
    depth_sigma: float = 0.0
    pose_sigma: float = 0.0  # per-step provider translation drift, fraction of step
    dropout: float = 0.0
    calib_noise_pct: float = 0.0
    provider_scale: float | None = None
    learned_scale: float | None = None
    origin: tuple[float, float, float] = (48.0, 11.0, 500.0)
    seed: int = 0
    noise_seed: int | None = None

    def __post_init__(self):
        if self.n_frames < 2:
            raise ValueError("n_frames must be at least 2")
        if min(self.pixel_sigma, self.gps_sigma, self.depth_sigma, self.pose_sigma) < 0:
            raise ValueError("noise levels must be non-negative")
        if self.shape not in ("straight", "arc", "composite"):
            raise ValueError(f"unknown trajectory shape {self.shape!r}")
        if self.min_views < 2:
            raise ValueError("signs must be visible in at least two frames")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["intrinsics"] = self.intrinsics.to_dict()
        d["segments"] = [asdict(s) for s in self.segments]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        if "intrinsics" in d:
            d["intrinsics"] = PinholeIntrinsics.from_dict(d["intrinsics"])
        if "segments" in d:
            d["segments"] = tuple(Segment(**s) for s in d["segments"])
        for key in ("lateral_range", "height_range", "origin"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def _segments(spec: SceneSpec, rng) -> list[Segment]:
    n = spec.n_frames - 1
    if spec.segments:
        return list(spec.segments)
    if spec.shape == "straight":
        return [Segment(n, 0.0)]
    if spec.shape == "arc":
        return [Segment(n, spec.arc_turn_deg)]
    # straight / turn alternation with random turn angles and lengths
    n_turns = int(rng.integers(2, 4))
    turn_len = max(4, n // (3 * n_turns))
    straight_total = n - n_turns * turn_len
    if straight_total <= n_turns:
        raise InfeasibleSpec(f"{spec.n_frames} frames are too few for a composite path")
    cuts = np.sort(rng.choice(np.arange(1, straight_total), size=n_turns, replace=False))
    straights = np.diff(np.concatenate([[0], cuts, [straight_total]]))
    segs = []
    for i, s in enumerate(straights):
        if s > 0:
            segs.append(Segment(int(s), 0.0))
        if i < n_turns:
            sign = rng.choice([-1.0, 1.0])
            segs.append(Segment(turn_len, float(sign * rng.uniform(30.0, 90.0))))
    return segs


def _camera_rotation(heading: float) -> np.ndarray:
    """World-from-camera rotation: x right, y down, z along the heading."""
    c, s = math.cos(heading), math.sin(heading)
    return np.array([[s, 0.0, c], [-c, 0.0, s], [0.0, -1.0, 0.0]])


def make_path(spec: SceneSpec, rng) -> tuple[np.ndarray, np.ndarray]:
    """Camera centers (n, 3) and headings (n,) for the spec's path shape."""
    n = spec.n_frames
    dpsi = np.zeros(n - 1)
    k = 0
    for seg in _segments(spec, rng):
        m = min(seg.frames, n - 1 - k)
        if m <= 0:
            break
        dpsi[k:k + m] = math.radians(seg.turn_deg) / seg.frames
        k += m
    psi0 = rng.uniform(-math.pi, math.pi)
    psi = psi0 + np.concatenate([[0.0], np.cumsum(dpsi)])
    mid = (psi[:-1] + psi[1:]) / 2.0
    steps = spec.speed * np.stack([np.cos(mid), np.sin(mid), np.zeros(n - 1)], axis=1)
    centers = np.vstack([np.zeros(3), np.cumsum(steps, axis=0)])
    return centers, psi


@dataclass
class _View:
    frame: int
    u: float
    v: float
    w: float
    h: float
    z: float


class SyntheticDepthMaps(Mapping[int, DepthMap]):
    """Depth maps rendered on access; a small LRU keeps recent frames."""

    def __init__(self, intrinsics, frame_ids, billboards, ground_depth, noise, unit_scale, cache=8):
        self.intrinsics = intrinsics
        self.frame_ids = list(frame_ids)
        self._billboards = billboards  # frame -> [(sign, x0, y0, x1, y1, z)]
        self._ground = ground_depth
        self._noise = noise  # (sign, frame) -> multiplicative factor
        self._unit = unit_scale
        self._cache: OrderedDict[int, DepthMap] = OrderedDict()
        self._cache_size = cache

    def __getitem__(self, frame_id: int) -> DepthMap:
        if frame_id not in self._billboards:
            raise KeyError(frame_id)
        if frame_id in self._cache:
            self._cache.move_to_end(frame_id)
            return self._cache[frame_id]
        depth = self._ground.copy()
        K = self.intrinsics
        sign_z = np.full(depth.shape, np.inf)
        for sign, x0, y0, x1, y1, z in self._billboards[frame_id]:
            c0, c1 = max(0, math.ceil(x0)), min(K.width - 1, math.floor(x1))
            r0, r1 = max(0, math.ceil(y0)), min(K.height - 1, math.floor(y1))
            if c0 > c1 or r0 > r1:
                continue
            region = sign_z[r0:r1 + 1, c0:c1 + 1]
            nearer = z < region
            region[nearer] = z
            zz = z * self._noise.get((sign, frame_id), 1.0) / self._unit
            depth[r0:r1 + 1, c0:c1 + 1][nearer] = zz
        dm = DepthMap(frame_id, depth)
        self._cache[frame_id] = dm
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return dm

    def __iter__(self):
        return iter(self.frame_ids)

    def __len__(self):
        return len(self.frame_ids)


@dataclass
class SceneData:
    spec: SceneSpec
    intrinsics: PinholeIntrinsics
    origin: GeodeticCoord
    gt_trajectory: Trajectory
    sign_positions: np.ndarray  # (m, 3) ENU
    sign_classes: list[int]
    clean_observations: list[SignObservation]
    observations: list[SignObservation]
    gps: list[GeodeticCoord]
    provider_trajectory: Trajectory
    provider_scale: float
    learned_trajectory: Trajectory
    learned_scale: float
    depth_maps: SyntheticDepthMaps
    intrinsics_series: IntrinsicsEstimateSeries
    turn_frames: list[int] = field(default_factory=list)

    @property
    def frame_ids(self) -> list[int]:
        return list(self.gt_trajectory.frame_ids)

    def tracks(self) -> list[SignTrack]:
        return group_tracks(self.observations)

    def gps_enu(self, origin: GeodeticCoord | None = None) -> dict[int, np.ndarray]:
        """GPS fixes in ENU, by default about the first fix (the pipeline's origin)."""
        origin = self.gps[0] if origin is None else origin
        lat = [g.lat for g in self.gps]
        lon = [g.lon for g in self.gps]
        alt = [g.alt for g in self.gps]
        enu = geodetic_array_to_enu(lat, lon, alt, origin)
        return {f: enu[i] for i, f in enumerate(self.frame_ids)}

    def ground_truth(self) -> GroundTruth:
        signs = []
        by_sign: dict[int, list[int]] = {}
        for o in self.observations:
            by_sign.setdefault(o.track_id, []).append(o.frame_id)
        for i, p in enumerate(self.sign_positions):
            rel = {f: self.gt_trajectory[f].to_camera(p) for f in sorted(by_sign.get(i, []))}
            signs.append(GroundTruthSign(i, self.sign_classes[i], np.array(p), rel))
        return GroundTruth(self.origin, signs)


def _views(p, centers, R_wc, K: PinholeIntrinsics, spec: SceneSpec):
    """Noiseless box of one sign in every frame where it is fully in view."""
    pc = np.einsum("nji,nj->ni", R_wc, p - centers)  # R^T (p - c)
    out = []
    for f in np.flatnonzero(pc[:, 2] > 0.5):
        x, y, z = pc[f]
        u = K.fx * x / z + K.cx
        v = K.fy * y / z + K.cy
        w = K.fx * spec.sign_size / z
        h = K.fy * spec.sign_size / z
        if w < spec.min_bbox_px:
            continue
        if u - w / 2 < 0 or v - h / 2 < 0 or u + w / 2 > K.width or v + h / 2 > K.height:
            continue
        out.append(_View(int(f), u, v, w, h, z))
    return out


def _paint_boxes(p, centers, R_wc, K: PinholeIntrinsics, spec: SceneSpec):
    """Every frame where any part of the billboard lands in the image."""
    pc = np.einsum("nji,nj->ni", R_wc, p - centers)
    out = {}
    for f in np.flatnonzero(pc[:, 2] > 0.1):
        x, y, z = pc[f]
        u = K.fx * x / z + K.cx
        v = K.fy * y / z + K.cy
        w = K.fx * spec.sign_size / z
        h = K.fy * spec.sign_size / z
        x0, x1, y0, y1 = u - w / 2, u + w / 2, v - h / 2, v + h / 2
        if x1 < 0 or y1 < 0 or x0 > K.width - 1 or y0 > K.height - 1:
            continue
        out[int(f)] = (x0, y0, x1, y1, z)
    return out


def _visible(views, paints, me):
    """Views of sign ``me`` whose bilinear footprint no nearer billboard covers."""
    keep = []
    for vw in views:
        c0, r0 = math.floor(vw.u), math.floor(vw.v)
        hidden = False
        for other, boxes in paints.items():
            if other == me or vw.frame not in boxes:
                continue
            x0, y0, x1, y1, z = boxes[vw.frame]
            if z >= vw.z:
                continue
            if math.ceil(x0) <= c0 + 1 and math.floor(x1) >= c0 and math.ceil(y0) <= r0 + 1 and math.floor(y1) >= r0:
                hidden = True
                break
        if not hidden:
            keep.append(vw)
    return keep


def generate_scene(spec: SceneSpec) -> SceneData:
    """Draw a scene; deterministic in ``spec``."""
    K = spec.intrinsics
    rng = np.random.default_rng(spec.seed)
    centers, psi = make_path(spec, rng)
    n = spec.n_frames
    R_wc = np.array([_camera_rotation(a) for a in psi])
    frames = list(range(n))
    gt = Trajectory(frames, [Pose.from_Rt(R, c) for R, c in zip(R_wc, centers)])

    positions: list[np.ndarray] = []
    views: dict[int, list[_View]] = {}
    paints: dict[int, dict] = {}
    k_min = min(n - 1, max(1, n // 10))
    for s in range(spec.n_signs):
        for _attempt in range(500):
            k = int(rng.integers(k_min, n))
            side = rng.choice([-1.0, 1.0])
            lateral = rng.uniform(*spec.lateral_range)
            height = rng.uniform(*spec.height_range)
            left = np.array([-math.sin(psi[k]), math.cos(psi[k]), 0.0])
            p = centers[k] + side * lateral * left + np.array([0.0, 0.0, height - spec.camera_height])
            cand_views = _views(p, centers, R_wc, K, spec)
            if len(cand_views) < spec.min_views:
                continue
            trial_paints = dict(paints)
            trial_paints[s] = _paint_boxes(p, centers, R_wc, K, spec)
            trial_views = dict(views)
            trial_views[s] = cand_views
            visible = {i: _visible(v, trial_paints, i) for i, v in trial_views.items()}
            if all(len(v) >= spec.min_views for v in visible.values()):
                positions.append(p)
                views, paints = trial_views, trial_paints
                break
        else:
            raise InfeasibleSpec(f"could not place sign {s} in view of {spec.min_views} frames")
    visible = {i: _visible(v, paints, i) for i, v in views.items()}
    classes = [int(c) for c in rng.integers(0, spec.n_classes, size=spec.n_signs)]

    provider_scale = spec.provider_scale or float(np.exp(rng.uniform(np.log(0.05), np.log(20.0))))
    learned_scale = spec.learned_scale or float(np.exp(rng.uniform(np.log(0.05), np.log(20.0))))

    # noise stream
    nrng = np.random.default_rng(spec.seed if spec.noise_seed is None else [spec.seed, spec.noise_seed])
    clean, noisy = [], []
    depth_noise = {}
    for s in range(spec.n_signs):
        for vw in visible[s]:
            bbox = (vw.u - vw.w / 2, vw.v - vw.h / 2, vw.w, vw.h)
            clean.append(SignObservation(s, vw.frame, classes[s], bbox))
            du, dv = nrng.normal(0.0, spec.pixel_sigma, size=2) if spec.pixel_sigma > 0 else (0.0, 0.0)
            drop = spec.dropout > 0 and nrng.random() < spec.dropout
            if spec.depth_sigma > 0:
                depth_noise[(s, vw.frame)] = max(0.05, 1.0 + nrng.normal(0.0, spec.depth_sigma))
            nb = (bbox[0] + du, bbox[1] + dv, vw.w, vw.h)
            obs = SignObservation(s, vw.frame, classes[s], nb)
            if not drop and obs.inside(K.width, K.height):
                noisy.append(obs)
    clean.sort(key=lambda o: (o.frame_id, o.track_id))
    noisy.sort(key=lambda o: (o.frame_id, o.track_id))

    enu_noise = np.zeros((n, 3))
    if spec.gps_sigma > 0:
        enu_noise = nrng.normal(0.0, spec.gps_sigma, size=(n, 3)) * np.array([1.0, 1.0, 1.5])
    origin = GeodeticCoord(*spec.origin)
    lat, lon, alt = enu_array_to_geodetic(centers + enu_noise, origin)
    gps = [GeodeticCoord(float(a), float(b), float(c)) for a, b, c in zip(lat, lon, alt)]

    provider = _provider_trajectory(gt, provider_scale, spec.pose_sigma, nrng)
    learned = _provider_trajectory(gt, learned_scale, spec.pose_sigma, nrng)

    v = np.arange(K.height, dtype=float)[:, None] - K.cy
    with np.errstate(divide="ignore"):
        ground_row = np.where(v >= 1.0, spec.camera_height * K.fy / v, 0.0)
    ground = np.repeat(ground_row, K.width, axis=1) / learned_scale
    billboards: dict[int, list] = {f: [] for f in frames}
    for s, boxes in paints.items():
        for f, (x0, y0, x1, y1, z) in boxes.items():
            billboards[f].append((s, x0, y0, x1, y1, z))
    depth_maps = SyntheticDepthMaps(K, frames, billboards, ground, depth_noise, learned_scale)

    series = _intrinsics_series(K, n, spec.calib_noise_pct, nrng)

    return SceneData(
        spec=spec, intrinsics=K, origin=origin, gt_trajectory=gt,
        sign_positions=np.array(positions), sign_classes=classes,
        clean_observations=clean, observations=noisy, gps=gps,
        provider_trajectory=provider, provider_scale=provider_scale,
        learned_trajectory=learned, learned_scale=learned_scale,
        depth_maps=depth_maps, intrinsics_series=series,
    )


def _provider_trajectory(gt: Trajectory, scale: float, drift: float, rng) -> Trajectory:
    """GT re-expressed in the first camera's frame and shrunk by ``scale``.

    ``drift`` adds a random walk to the camera centers, in units of the step
    length, to mimic odometry drift.
    """
    T0_inv = gt[gt.frame_ids[0]].inverse()
    poses = [T0_inv.compose(p) for p in gt.poses]
    if drift > 0:
        steps = np.diff(np.array([p.translation for p in poses]), axis=0)
        step_len = np.linalg.norm(steps, axis=1, keepdims=True)
        walk = np.cumsum(rng.normal(0.0, drift, size=steps.shape) * step_len, axis=0)
        walk = np.vstack([np.zeros(3), walk])
        poses = [Pose(p.quat, p.translation + w) for p, w in zip(poses, walk)]
    return Trajectory(gt.frame_ids, [Pose(p.quat, p.translation / scale) for p in poses])


def _intrinsics_series(K: PinholeIntrinsics, n: int, noise_pct: float, rng) -> IntrinsicsEstimateSeries:
    est = []
    for j in range(n - 1):
        if noise_pct > 0:
            e = 1.0 + rng.normal(0.0, noise_pct / 100.0, size=4)
        else:
            e = np.ones(4)
        est.append(IntrinsicsEstimate(j, K.fx * e[0], K.fy * e[1], K.cx * e[2], K.cy * e[3]))
    return IntrinsicsEstimateSeries(tuple(est), K.width, K.height)


def reobserve(scene: SceneData, noise_seed: int) -> SceneData:
    """Same geometry, fresh noise draw."""
    return generate_scene(replace(scene.spec, noise_seed=noise_seed))


def export_scene(scene: SceneData, directory) -> Path:
    """Write every pipeline input plus ground truth and a ready-to-run config."""
    from . import pipeline_io as io

    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    io.write_detections(out / "detections.jsonl", scene.observations)
    io.write_gps(out / "gps.csv", dict(zip(scene.frame_ids, scene.gps)))
    io.write_poses(out / "poses_geometric.txt", scene.provider_trajectory)
    io.write_poses(out / "poses_learned.txt", scene.learned_trajectory)
    io.write_intrinsics(out / "intrinsics.json", scene.intrinsics)
    io.write_intrinsics_series(out / "intrinsics_pairs.csv", scene.intrinsics_series)
    depth_dir = out / "depths"
    depth_dir.mkdir(exist_ok=True)
    for f in scene.depth_maps:
        io.write_pfm(depth_dir / io.depth_filename(f), scene.depth_maps[f].values)
    io.write_ground_truth(out / "ground_truth.json", scene.ground_truth())
    io.write_json(out / "scene.json", scene.spec.to_dict())
    config = {
        "detections": "detections.jsonl",
        "gps": "gps.csv",
        "poses_geometric": "poses_geometric.txt",
        "poses_learned": "poses_learned.txt",
        "depths_dir": "depths",
        "intrinsics": "intrinsics.json",
        "intrinsics_pairs": "intrinsics_pairs.csv",
        "ground_truth": "ground_truth.json",
        "output_dir": "output",
    }
    io.write_json(out / "config.json", config)
    return out


def project_ground_truth(scene: SceneData, observations=None) -> np.ndarray:
    """Pixel residuals of the given detections against GT projection."""
    obs = scene.clean_observations if observations is None else observations
    res = []
    for o in obs:
        pose = scene.gt_trajectory[o.frame_id]
        uv = project(scene.intrinsics, pose.to_camera(scene.sign_positions[o.track_id]))
        res.append(o.center - uv)
    return np.array(res)


def scene_bundle(scene: SceneData, geometric: bool = True, learned: bool = True, depth: bool = True,
                 calibration: bool = True, learned_calibration: bool = True) -> ProviderBundle:
    """Provider bundle the pipeline would assemble from the exported scene."""
    enu = scene.gps_enu()
    turns = extract_turn_ranges(np.array([enu[f] for f in scene.frame_ids]), frame_ids=scene.frame_ids)
    return ProviderBundle(
        calibration=scene.intrinsics if calibration else None,
        learned_calibration=scene.intrinsics_series if learned_calibration else None,
        geometric_trajectory=scene.provider_trajectory if geometric else None,
        learned_trajectory=scene.learned_trajectory if learned else None,
        depth_maps=scene.depth_maps if depth else None,
        turn_ranges=turns,
    )
