"""Configuration, input loading and the end-to-end positioning run."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import pipeline_io as io
from .errors import FrameMismatch, ParseError
from .fusion import ErrorReport, FusionRunner, ProviderBundle, attach_geodetic, evaluate, select_calibration
from .geodesy import GeodeticCoord, geodetic_array_to_enu
from .signs import SignPositionResult, SignTrack, Status, group_tracks
from .turns import DEFAULT_EPSILON, DEFAULT_HALF_WINDOW, extract_turn_ranges

log = logging.getLogger(__name__)

MODES = ("auto", "force-A-full", "force-A-short", "force-B")
PATH_KEYS = ("detections", "gps", "poses_geometric", "poses_geometric_lc", "poses_learned",
             "depths_dir", "intrinsics", "intrinsics_pairs", "ground_truth", "output_dir")

EXIT_OK, EXIT_FAILURE, EXIT_PARTIAL = 0, 1, 2


@dataclass
class PipelineConfig:
    detections: str | None = None
    gps: str | None = None
    poses_geometric: str | None = None
    poses_geometric_lc: str | None = None
    poses_learned: str | None = None
    depths_dir: str | None = None
    intrinsics: str | None = None
    intrinsics_pairs: str | None = None
    image_size: tuple[int, int] | None = None
    turn_epsilon: float = DEFAULT_EPSILON
    turn_half_window: int = DEFAULT_HALF_WINDOW
    mode: str = "auto"
    edge_margin: float = 2.0
    short_margin: int = 10
    depth_cutoff: float = 20.0
    min_spread_ratio: float = 0.02
    ground_truth: str | None = None
    output_dir: str = "output"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.image_size is not None:
            self.image_size = (int(self.image_size[0]), int(self.image_size[1]))

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if base_dir is not None:
            for key in PATH_KEYS:
                if d.get(key) is not None:
                    d[key] = str(Path(base_dir) / d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if d["image_size"] is not None:
            d["image_size"] = list(d["image_size"])
        return d


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """JSON config (paths relative to the file) with ``overrides`` applied on top."""
    d = {}
    base = None
    if path is not None:
        d = io.read_json(path)
        base = Path(path).parent
    cfg = PipelineConfig.from_dict(d, base)
    if overrides:
        cfg = dataclasses.replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    return cfg


@dataclass
class Inputs:
    bundle: ProviderBundle
    tracks: list[SignTrack]
    gps: dict[int, GeodeticCoord]
    origin: GeodeticCoord
    gps_enu: dict[int, np.ndarray]
    image_size: tuple[int, int] | None
    warnings: list[str] = field(default_factory=list)


def gps_to_enu(gps: dict[int, GeodeticCoord], origin: GeodeticCoord) -> dict[int, np.ndarray]:
    frames = list(gps)
    enu = geodetic_array_to_enu([gps[f].lat for f in frames], [gps[f].lon for f in frames],
                                [gps[f].alt for f in frames], origin)
    return {f: enu[i] for i, f in enumerate(frames)}


def load_inputs(config: PipelineConfig) -> Inputs:
    if config.detections is None or config.gps is None:
        raise ValueError("config must name a detections file and a GPS file")
    warnings: list[str] = []

    calibration = io.read_intrinsics(config.intrinsics) if config.intrinsics else None
    depth_maps = io.PfmDirectory(config.depths_dir) if config.depths_dir else None
    image_size = config.image_size
    if image_size is None and calibration is not None:
        image_size = (calibration.width, calibration.height)
    if image_size is None and depth_maps is not None:
        image_size = depth_maps.image_size()
    if depth_maps is not None:
        depth_maps.expected_size = image_size

    gps = io.read_gps(config.gps)
    origin = next(iter(gps.values()))
    gps_enu = gps_to_enu(gps, origin)

    observations = io.read_detections(config.detections, image_size)
    missing = {o.frame_id for o in observations if o.frame_id not in gps}
    if missing:
        raise FrameMismatch("detections reference frames without a GPS fix", missing)
    tracks = group_tracks(observations)

    learned_calibration = None
    if config.intrinsics_pairs:
        if image_size is None:
            raise ValueError("per-pair intrinsics need image_size (or an intrinsics.json)")
        learned_calibration = io.read_intrinsics_series(config.intrinsics_pairs, *image_size)

    def poses(path, name):
        if not path:
            return None
        traj = io.read_poses(path)
        uncovered = [o.frame_id for o in observations if o.frame_id not in traj]
        if uncovered:
            warnings.append(f"{name}: {len(set(uncovered))} detection frames without a pose")
        return traj

    if depth_maps is not None:
        uncovered = {o.frame_id for o in observations} - set(depth_maps)
        if uncovered:
            warnings.append(f"depths: {len(uncovered)} detection frames without a depth map")

    frames = list(gps)
    turn_ranges = []
    if len(frames) >= 3:
        turn_ranges = extract_turn_ranges(np.array([gps_enu[f] for f in frames]), config.turn_epsilon,
                                          config.turn_half_window, frame_ids=frames)
    bundle = ProviderBundle(
        calibration=calibration,
        learned_calibration=learned_calibration,
        geometric_trajectory=poses(config.poses_geometric, "poses_geometric"),
        geometric_trajectory_lc=poses(config.poses_geometric_lc, "poses_geometric_lc"),
        learned_trajectory=poses(config.poses_learned, "poses_learned"),
        depth_maps=depth_maps,
        turn_ranges=turn_ranges,
    )
    for w in warnings:
        log.warning(w)
    return Inputs(bundle, tracks, gps, origin, gps_enu, image_size, warnings)


@dataclass
class PipelineRun:
    results: list[SignPositionResult]
    calibration_provenance: str
    report: ErrorReport | None
    exit_code: int
    summary: dict


def exit_code_for(results) -> int:
    n_ok = sum(r.ok for r in results)
    if results and n_ok == 0:
        return EXIT_FAILURE
    if n_ok < len(results):
        return EXIT_PARTIAL
    return EXIT_OK


def run_pipeline(config: PipelineConfig, write: bool = True) -> PipelineRun:
    inputs = load_inputs(config)
    K, provenance = select_calibration(inputs.bundle)
    runner = FusionRunner(inputs.bundle, inputs.gps_enu, K, mode=config.mode,
                          short_margin=config.short_margin, depth_cutoff=config.depth_cutoff,
                          edge_margin=config.edge_margin, min_spread_ratio=config.min_spread_ratio)
    results = attach_geodetic(runner.run(inputs.tracks), inputs.origin)

    report = None
    if config.ground_truth:
        report = evaluate(results, io.read_ground_truth(config.ground_truth))

    counts = {s.value: sum(r.status is s for r in results) for s in Status}
    summary = {
        "signs": len(results),
        "status_counts": counts,
        "methods": {r.track_id: (r.method.value if r.method else None) for r in results},
        "calibration": provenance,
        "exit_code": exit_code_for(results),
    }
    if report is not None:
        summary["errors"] = {k: v for k, v in report.to_dict().items() if k != "signs"}
    run = PipelineRun(results, provenance, report, exit_code_for(results), summary)
    if write:
        write_outputs(config, inputs, run, K)
    return run


def write_outputs(config: PipelineConfig, inputs: Inputs, run: PipelineRun, K) -> Path:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_signs_geojson(out / "signs.geojson", run.results)
    io.write_relative(out / "relative.json", run.results)
    if run.report is not None:
        io.write_json(out / "report.json", run.report.to_dict())
    io.write_json(out / "manifest.json", {
        "version": __version__,
        "config": config.to_dict(),
        "origin": dataclasses.asdict(inputs.origin),
        "calibration": {"provenance": run.calibration_provenance, "intrinsics": K.to_dict()},
        "providers": inputs.bundle.provenance(),
        "warnings": inputs.warnings,
        "signs": [
            {"track_id": r.track_id, "method": r.method.value if r.method else None,
             "status": r.status.value, "reason": r.reason,
             "attempts": r.info.get("attempts", [])}
            for r in run.results
        ],
    })
    io.write_json(out / "summary.json", run.summary)
    return out


def write_failure_summary(output_dir, error: Exception) -> None:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "summary.json", {
        "signs": 0, "exit_code": EXIT_FAILURE,
        "error": {"type": type(error).__name__, "message": str(error)},
    })


__all__ = ["PipelineConfig", "load_config", "load_inputs", "run_pipeline", "Inputs", "PipelineRun",
           "ParseError", "EXIT_OK", "EXIT_FAILURE", "EXIT_PARTIAL"]
