import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import RegularGridInterpolator
from scipy.spatial.transform import Rotation

from signmap.camera import PinholeIntrinsics, project, unproject
from signmap.errors import InvalidDepthSample, NoValidHypotheses, StationaryFrame
from signmap.positioning_b import (
    DepthMap, Discarded, FrameScale, ScaleProvenance, depth_position_track, frame_scales,
    pairwise_scale, sign_hypothesis, transfer_pixel,
)
from signmap.signs import SignObservation, SignTrack
from signmap.trajectory import GpsAnchoredTrajectory, Pose, Trajectory

K = PinholeIntrinsics(320.0, 320.0, 320.0, 160.0, 640, 320)


def test_bilinear_matches_scipy(rng):
    vals = rng.uniform(1, 50, size=(12, 17))
    dm = DepthMap(0, vals)
    ref = RegularGridInterpolator((np.arange(12), np.arange(17)), vals)
    for _ in range(200):
        x, y = rng.uniform(0, 16), rng.uniform(0, 11)
        assert dm.sample(x, y) == pytest.approx(float(ref([y, x])[0]), rel=1e-12)
    assert dm.sample(16, 11) == vals[11, 16]
    assert dm.sample(3, 4) == vals[4, 3]


def test_invalid_depth_samples():
    vals = np.full((10, 10), 5.0)
    vals[4, 4] = 0.0
    vals[7, 7] = np.nan
    dm = DepthMap(0, vals)
    for x, y in ((4.5, 4.5), (3.2, 3.9), (7.0, 6.5), (-0.1, 2), (2, 9.5)):
        with pytest.raises(InvalidDepthSample):
            dm.sample(x, y)
    assert dm.sample(1.5, 1.5) == 5.0


def test_pairwise_scale():
    assert pairwise_scale([0, 0, 0.5], [3, 4, 0]) == pytest.approx(10.0)
    with pytest.raises(StationaryFrame):
        pairwise_scale([0, 0, 1e-7], [1, 0, 0])


def test_frame_scales_provenance():
    frames = [0, 1, 2, 3, 4]
    gps = {f: np.array([2.0 * f, 0, 0]) for f in frames}
    gps[4] = gps[3] + [1.0, 0, 0]
    rel = [[0, 0, 1.0], [0, 0, 0.5], [0, 0, 0.0], [0, 0, 0.25]]
    s = frame_scales(frames, rel, gps)
    assert s[0] == FrameScale(0, 2.0, ScaleProvenance.FORWARD)
    assert s[1] == FrameScale(1, 3.0, ScaleProvenance.AVERAGED)
    assert s[2] == FrameScale(2, 4.0, ScaleProvenance.BACKWARD)
    assert s[3] == FrameScale(3, 4.0, ScaleProvenance.FORWARD)
    assert s[4] == FrameScale(4, 4.0, ScaleProvenance.BACKWARD)
    s = frame_scales([0, 1], [[0, 0, 0]], gps)
    assert not s[0].valid and np.isnan(s[0].scale)


def test_sign_hypothesis_cutoff():
    obs = SignObservation(0, 0, 1, (315.0, 155.0, 10.0, 10.0))
    dm = DepthMap(0, np.full((320, 640), 2.5))
    assert isinstance(sign_hypothesis(obs, dm, FrameScale(0, 10.0, ScaleProvenance.AVERAGED), K), Discarded)
    h = sign_hypothesis(obs, dm, FrameScale(0, 8.0, ScaleProvenance.AVERAGED), K)
    np.testing.assert_allclose(h, [0, 0, 20.0])
    bad = sign_hypothesis(obs, dm, FrameScale(0, float("nan"), ScaleProvenance.UNSCALABLE), K)
    assert bad == Discarded(0, "unscalable")


def _track_with_depths(point, poses, unit):
    obs, maps = [], {}
    for f in poses:
        pc = poses[f].to_camera(point)
        uv = project(K, pc)
        obs.append(SignObservation(0, f, 2, (uv[0] - 4, uv[1] - 4, 8, 8)))
        maps[f] = DepthMap(f, np.full((320, 640), pc[2] / unit))
    return SignTrack(0, 2, tuple(obs)), maps


def test_depth_position_track_centroid_and_discard():
    poses = Trajectory(range(4), [Pose.from_Rt(np.eye(3), [0, 0, 2.0 * i]) for i in range(4)])
    p = np.array([2.0, -1.0, 21.0])
    track, maps = _track_with_depths(p, poses, unit=0.5)
    scales = {f: FrameScale(f, 0.5, ScaleProvenance.AVERAGED) for f in poses}
    res = depth_position_track(track, maps, scales, poses, K)
    # frame 0 sees the sign at 21 m > 20 m and is dropped
    assert res.info["discarded"] == {0: "too-far"}
    assert sorted(res.rel_positions) == [1, 2, 3]
    np.testing.assert_allclose(res.p_abs, p, atol=1e-12)
    with pytest.raises(NoValidHypotheses):
        depth_position_track(track, maps, scales, poses, K, cutoff=10.0)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_pixel_transfer_is_consistent_with_geometry(seed):
    rng = np.random.default_rng(seed)
    Ta = Pose.from_Rt(Rotation.from_euler("y", rng.uniform(-20, 20), degrees=True).as_matrix(),
                      rng.normal(size=3))
    Tb = Ta.compose(Pose.from_Rt(Rotation.from_euler("y", rng.uniform(-5, 5), degrees=True).as_matrix(),
                                 [rng.uniform(-0.3, 0.3), 0, rng.uniform(0.5, 2)]))
    pixel = rng.uniform([100, 50], [540, 270])
    depth = rng.uniform(5, 30)
    world = Ta.to_world(unproject(K, pixel, depth))
    rel = Tb.inverse().compose(Ta)  # camera a -> camera b
    uv, d = transfer_pixel(K, rel.R, rel.translation, pixel, depth)
    pb = Tb.to_camera(world)
    assert d == pytest.approx(pb[2], rel=1e-10)
    np.testing.assert_allclose(uv, project(K, pb), atol=1e-8)


@pytest.mark.parametrize("lam", [1e-3, 1e3])
def test_joint_scale_invariance(noisy_scene, lam):
    s = noisy_scene
    traj = s.learned_trajectory
    scaled = Trajectory(traj.frame_ids, [Pose(p.quat, p.translation * lam) for p in traj.poses])
    gps = s.gps_enu()

    def run(t, depth_scale):
        rel = list(t.relative_translations().values())
        scales = frame_scales(list(t.frame_ids), rel, gps)
        poses, _ = GpsAnchoredTrajectory(t, gps).full()
        out = {}
        for track in s.tracks():
            maps = {f: DepthMap(f, s.depth_maps[f].values * depth_scale) for f in track.frame_ids}
            try:
                out[track.track_id] = depth_position_track(track, maps, scales, poses, s.intrinsics)
            except NoValidHypotheses:
                out[track.track_id] = None
        return out

    a, b = run(traj, 1.0), run(scaled, lam)
    assert a.keys() == b.keys()
    for k in a:
        assert (a[k] is None) == (b[k] is None)
        if a[k] is not None:
            np.testing.assert_allclose(b[k].p_abs, a[k].p_abs, atol=1e-9, rtol=0)
