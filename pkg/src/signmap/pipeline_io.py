"""Readers and writers for every on-disk format the pipeline consumes or emits.

Text formats write floats with 17 significant digits (degrees with 15 fixed
decimals) so that read -> write reproduces a file byte for byte.
"""

from __future__ import annotations

import csv
import json
import math
from collections import OrderedDict
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .camera import IntrinsicsEstimate, IntrinsicsEstimateSeries, PinholeIntrinsics
from .errors import ParseError
from .fusion import GroundTruth, GroundTruthSign
from .geodesy import GeodeticCoord
from .positioning_b import DepthMap
from .signs import Method, SignObservation, SignPositionResult, Status
from .trajectory import Pose, Trajectory

QUAT_PARSE_TOL = 1e-3
QUAT_EXACT_TOL = 1e-9


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def fmt_deg(x: float) -> str:
    return format(float(x), ".15f")


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, exc.msg) from exc


# ------------------------------------------------------------------ detections


def write_detections(path, observations: Iterable[SignObservation]) -> None:
    lines = []
    for o in observations:
        bbox = ", ".join(fmt(v) for v in o.bbox)
        lines.append(f'{{"track_id": {o.track_id}, "frame_id": {o.frame_id}, '
                     f'"class_id": {o.class_id}, "bbox": [{bbox}]}}')
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_detections(path, image_size: tuple[int, int] | None = None) -> list[SignObservation]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                bbox = tuple(float(v) for v in d["bbox"])
                if len(bbox) != 4:
                    raise ValueError("bbox needs four numbers")
                o = SignObservation(int(d["track_id"]), int(d["frame_id"]), int(d["class_id"]), bbox)
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(path, lineno, f"bad detection: {exc}") from exc
            if bbox[2] <= 0 or bbox[3] <= 0:
                raise ParseError(path, lineno, "bbox width and height must be positive")
            if image_size is not None and not o.inside(*image_size):
                raise ParseError(path, lineno, f"bbox {bbox} outside {image_size[0]}x{image_size[1]} image")
            out.append(o)
    return out


# ------------------------------------------------------------------------ gps

GPS_HEADER = ["frame_id", "lat_deg", "lon_deg", "alt_m"]


def write_gps(path, fixes: Mapping[int, GeodeticCoord]) -> None:
    rows = [",".join(GPS_HEADER)]
    for f in sorted(fixes):
        g = fixes[f]
        rows.append(f"{f},{fmt_deg(g.lat)},{fmt_deg(g.lon)},{fmt(g.alt)}")
    Path(path).write_text("\n".join(rows) + "\n")


def read_gps(path) -> dict[int, GeodeticCoord]:
    out: dict[int, GeodeticCoord] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != GPS_HEADER:
            raise ParseError(path, 1, f"expected header {','.join(GPS_HEADER)}")
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            try:
                f = int(row[0])
                g = GeodeticCoord(float(row[1]), float(row[2]), float(row[3]))
            except (ValueError, IndexError) as exc:
                raise ParseError(path, lineno, f"bad GPS row: {exc}") from exc
            if f in out:
                raise ParseError(path, lineno, f"duplicate frame {f}")
            out[f] = g
    if not out:
        raise ParseError(path, None, "no GPS fixes")
    return dict(sorted(out.items()))


# ---------------------------------------------------------------------- poses


def write_poses(path, traj: Trajectory) -> None:
    lines = []
    for f, p in zip(traj.frame_ids, traj.poses):
        vals = " ".join(fmt(v) for v in (*p.translation, *p.quat))
        lines.append(f"{f} {vals}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_poses(path) -> Trajectory:
    frames, poses = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) != 8:
                raise ParseError(path, lineno, f"expected 8 fields, got {len(parts)}")
            try:
                f = int(parts[0])
                vals = np.array([float(v) for v in parts[1:]])
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from exc
            q = vals[3:]
            norm = float(np.linalg.norm(q))
            if abs(norm - 1.0) > QUAT_PARSE_TOL:
                raise ParseError(path, lineno, f"quaternion norm {norm:.6f} not within {QUAT_PARSE_TOL} of 1")
            if abs(norm - 1.0) > QUAT_EXACT_TOL:
                q = q / norm
            if frames and f <= frames[-1]:
                raise ParseError(path, lineno, f"frame ids must increase ({f} after {frames[-1]})")
            frames.append(f)
            poses.append(Pose(q, vals[:3]))
    if not frames:
        raise ParseError(path, None, "no poses")
    return Trajectory(frames, poses)


# ----------------------------------------------------------------------- PFM


def depth_filename(frame_id: int) -> str:
    return f"{frame_id:06d}.pfm"


def write_pfm(path, values: np.ndarray) -> None:
    """Grayscale little-endian PFM; rows stored bottom to top."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ValueError("PFM depth map must be 2-D")
    h, w = arr.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    data = np.flipud(arr).astype("<f4").tobytes()
    Path(path).write_bytes(header + data)


def pfm_size(path) -> tuple[int, int]:
    """(width, height) from a PFM header without reading the payload."""
    with open(path, "rb") as fh:
        fh.readline()
        dims = fh.readline().split()
    try:
        w, h = (int(v) for v in dims)
    except ValueError as exc:
        raise ParseError(path, 2, f"bad PFM header: {exc}") from exc
    return w, h


def read_pfm(path, expected_size: tuple[int, int] | None = None) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4:
        raise ParseError(path, None, "truncated PFM header")
    magic, dims, scale_s, data = parts
    if magic.strip() == b"PF":
        raise ParseError(path, 1, "color PFM not supported for depth")
    if magic.strip() != b"Pf":
        raise ParseError(path, 1, f"not a PFM file (magic {magic[:4]!r})")
    try:
        w, h = (int(v) for v in dims.split())
        scale = float(scale_s)
    except ValueError as exc:
        raise ParseError(path, 2, f"bad PFM header: {exc}") from exc
    if scale == 0 or not math.isfinite(scale):
        raise ParseError(path, 3, "PFM scale must be non-zero")
    if expected_size is not None and (w, h) != tuple(expected_size):
        raise ParseError(path, 2, f"PFM is {w}x{h}, expected {expected_size[0]}x{expected_size[1]}")
    dtype = "<f4" if scale < 0 else ">f4"
    if len(data) != 4 * w * h:
        raise ParseError(path, None, f"PFM payload is {len(data)} bytes, expected {4 * w * h}")
    arr = np.frombuffer(data, dtype=dtype).reshape(h, w)
    return np.flipud(arr).astype(np.float32)


class PfmDirectory(Mapping[int, DepthMap]):
    """Depth maps in ``directory`` keyed by frame id, read on demand."""

    def __init__(self, directory, expected_size: tuple[int, int] | None = None, cache: int = 8):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise ParseError(directory, None, "depth directory does not exist")
        self.expected_size = expected_size
        self._frames = sorted(int(p.stem) for p in self.directory.glob("*.pfm") if p.stem.isdigit())
        self._cache: OrderedDict[int, DepthMap] = OrderedDict()
        self._cache_size = cache

    def __contains__(self, frame_id) -> bool:
        return (self.directory / depth_filename(int(frame_id))).exists()

    def __getitem__(self, frame_id: int) -> DepthMap:
        if frame_id in self._cache:
            self._cache.move_to_end(frame_id)
            return self._cache[frame_id]
        path = self.directory / depth_filename(frame_id)
        if not path.exists():
            raise KeyError(frame_id)
        dm = DepthMap(frame_id, read_pfm(path, self.expected_size))
        self._cache[frame_id] = dm
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return dm

    def __iter__(self):
        return iter(self._frames)

    def __len__(self):
        return len(self._frames)

    def image_size(self) -> tuple[int, int] | None:
        if not self._frames:
            return None
        return pfm_size(self.directory / depth_filename(self._frames[0]))


# ---------------------------------------------------------------- intrinsics


def write_intrinsics(path, K: PinholeIntrinsics) -> None:
    write_json(path, K.to_dict())


def read_intrinsics(path) -> PinholeIntrinsics:
    d = read_json(path)
    try:
        return PinholeIntrinsics.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(path, None, f"bad intrinsics: {exc}") from exc


PAIRS_HEADER = ["pair_index", "fx", "fy", "cx", "cy"]


def write_intrinsics_series(path, series: IntrinsicsEstimateSeries) -> None:
    rows = [",".join(PAIRS_HEADER)]
    for e in series.estimates:
        rows.append(",".join([str(e.pair_index), fmt(e.fx), fmt(e.fy), fmt(e.cx), fmt(e.cy)]))
    Path(path).write_text("\n".join(rows) + "\n")


def read_intrinsics_series(path, width: int, height: int) -> IntrinsicsEstimateSeries:
    est = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != PAIRS_HEADER:
            raise ParseError(path, 1, f"expected header {','.join(PAIRS_HEADER)}")
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            try:
                est.append(IntrinsicsEstimate(int(row[0]), *(float(v) for v in row[1:5])))
            except (ValueError, IndexError, TypeError) as exc:
                raise ParseError(path, lineno, f"bad estimate row: {exc}") from exc
    try:
        return IntrinsicsEstimateSeries(tuple(est), width, height)
    except ValueError as exc:
        raise ParseError(path, None, str(exc)) from exc


# -------------------------------------------------------------- ground truth


def write_ground_truth(path, gt: GroundTruth) -> None:
    write_json(path, {
        "origin": {"lat": gt.origin.lat, "lon": gt.origin.lon, "alt": gt.origin.alt},
        "signs": [
            {
                "sign_id": s.sign_id,
                "class_id": s.class_id,
                "enu": [float(v) for v in s.enu],
                "relative": {str(f): [float(v) for v in p] for f, p in sorted(s.rel.items())},
            }
            for s in gt.signs
        ],
    })


def read_ground_truth(path) -> GroundTruth:
    d = read_json(path)
    try:
        o = d["origin"]
        signs = [
            GroundTruthSign(int(s["sign_id"]), int(s["class_id"]), np.array(s["enu"], dtype=float),
                            {int(f): np.array(p, dtype=float) for f, p in s.get("relative", {}).items()})
            for s in d["signs"]
        ]
        return GroundTruth(GeodeticCoord(o["lat"], o["lon"], o["alt"]), signs)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(path, None, f"bad ground truth: {exc}") from exc


# ------------------------------------------------------------------- outputs


def write_signs_geojson(path, results: Sequence[SignPositionResult]) -> None:
    features = []
    for r in results:
        geom = None
        if r.p_geodetic is not None:
            g = r.p_geodetic
            geom = {"type": "Point", "coordinates": [g.lon, g.lat, g.alt]}
        props = {
            "track_id": r.track_id,
            "class_id": r.class_id,
            "method": r.method.value if r.method else None,
            "status": r.status.value,
        }
        if r.reason:
            props["reason"] = r.reason
        if r.p_abs is not None:
            props["enu"] = [float(v) for v in r.p_abs]
        features.append({"type": "Feature", "geometry": geom, "properties": props})
    write_json(path, {"type": "FeatureCollection", "features": features})


def write_relative(path, results: Sequence[SignPositionResult]) -> None:
    write_json(path, {
        str(r.track_id): {str(f): [float(v) for v in p] for f, p in sorted(r.rel_positions.items())}
        for r in results if r.rel_positions
    })


def read_signs_geojson(path, relative_path=None) -> list[SignPositionResult]:
    """Re-read a pipeline's sign output (for the ``eval`` verb)."""
    d = read_json(path)
    rel = read_json(relative_path) if relative_path is not None and Path(relative_path).exists() else {}
    out = []
    for feat in d.get("features", []):
        p = feat["properties"]
        geom = feat.get("geometry")
        r = SignPositionResult(
            int(p["track_id"]), int(p["class_id"]),
            Method(p["method"]) if p.get("method") else None, Status(p["status"]),
            p_abs=np.array(p["enu"]) if "enu" in p else None,
            rel_positions={int(f): np.array(v) for f, v in rel.get(str(p["track_id"]), {}).items()},
            reason=p.get("reason", ""),
        )
        if geom is not None:
            lon, lat, alt = geom["coordinates"]
            r.p_geodetic = GeodeticCoord(lat, lon, alt)
        out.append(r)
    return out


def write_turn_ranges(path, ranges: Sequence[tuple[int, int]]) -> None:
    rows = ["start_frame,end_frame"] + [f"{a},{b}" for a, b in ranges]
    Path(path).write_text("\n".join(rows) + "\n")


def read_turn_ranges(path) -> list[tuple[int, int]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ["start_frame", "end_frame"]:
            raise ParseError(path, 1, "expected header start_frame,end_frame")
        return [(int(a), int(b)) for a, b in (row for row in reader if row)]
