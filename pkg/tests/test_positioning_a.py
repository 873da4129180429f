import warnings

import numpy as np
import pytest
from scipy.optimize import least_squares, minimize
from scipy.spatial.transform import Rotation

from signmap.camera import PinholeIntrinsics, project
from signmap.errors import BehindCameraInit, DegenerateRays, EmptyTrack, NonConvergenceWarning
from signmap.positioning_a import (
    bundle_adjust_sign, filter_edge_observations, midpoint_triangulate, relative_positions,
    reprojection_residuals, triangulate_track,
)
from signmap.signs import Method, SignObservation, SignTrack, Status
from signmap.trajectory import GpsAnchoredTrajectory, Pose, Trajectory

K = PinholeIntrinsics(320.0, 320.0, 320.0, 160.0, 640, 320)


def forward_poses(n, step=1.0):
    """Cameras driving along world +z, looking along +z."""
    return Trajectory(range(n), [Pose.from_Rt(np.eye(3), [0.0, 0.0, step * i]) for i in range(n)])


def observe(point, poses, K=K, noise=0.0, rng=None, size=10.0):
    obs = []
    for f in poses:
        uv = project(K, poses[f].to_camera(point))
        if noise:
            uv = uv + rng.normal(0, noise, 2)
        obs.append(SignObservation(0, f, 1, (uv[0] - size / 2, uv[1] - size / 2, size, size)))
    return SignTrack(0, 1, tuple(obs))


def test_midpoint_two_skew_rays():
    # rays along x at z=0 and along y at z=2: closest points (0,0,0) and (0,0,2)
    p = midpoint_triangulate([[-5, 0, 0], [0, 3, 2]], [[1, 0, 0], [0, 1, 0]])
    np.testing.assert_allclose(p, [0, 0, 1], atol=1e-12)


def test_midpoint_matches_numerical_minimizer(rng):
    for _ in range(20):
        O = rng.normal(size=(5, 3)) * 5
        D = rng.normal(size=(5, 3))
        D /= np.linalg.norm(D, axis=1, keepdims=True)

        def cost(p):
            v = p - O
            return (v * v).sum() - ((v * D).sum(1) ** 2).sum()

        grid = [np.array([x, y, z]) for x in (-5, 0, 5) for y in (-5, 0, 5) for z in (-5, 0, 5)]
        start = min(grid, key=cost)
        ref = minimize(cost, start, method="BFGS", options={"gtol": 1e-12}).x
        np.testing.assert_allclose(midpoint_triangulate(O, D), ref, atol=1e-5)


def test_midpoint_exact_for_intersecting_rays(rng):
    p = rng.normal(size=3) * 10
    O = rng.normal(size=(4, 3)) * 3
    np.testing.assert_allclose(midpoint_triangulate(O, p - O), p, atol=1e-10)


def test_midpoint_parallel_rays_rejected():
    with pytest.raises(DegenerateRays):
        midpoint_triangulate([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 0, 1]] * 3)
    with pytest.raises(DegenerateRays):
        midpoint_triangulate([[0, 0, 0]], [[0, 0, 1]])


def test_residual_jacobian_matches_finite_differences(rng):
    for _ in range(20):
        n = int(rng.integers(2, 8))
        R_cw = Rotation.random(n, random_state=rng).as_matrix()
        p = rng.normal(size=3)
        t_cw = np.array([[0, 0, 10.0]] * n) - np.einsum("nij,j->ni", R_cw, p)
        pix = rng.uniform(0, 300, size=(n, 2))
        _, J = reprojection_residuals(p, R_cw, t_cw, K, pix)
        h = 1e-6
        num = np.column_stack([
            (reprojection_residuals(p + h * e, R_cw, t_cw, K, pix)[0]
             - reprojection_residuals(p - h * e, R_cw, t_cw, K, pix)[0]) / (2 * h)
            for e in np.eye(3)
        ])
        np.testing.assert_allclose(J, num, rtol=1e-6, atol=1e-6)


def test_bundle_adjust_recovers_noiseless_point():
    poses = forward_poses(8)
    p = np.array([3.0, -1.0, 15.0])
    track = observe(p, poses)
    res = bundle_adjust_sign(p + [0.5, 0.3, -1.0], track, poses, K)
    assert res.converged
    np.testing.assert_allclose(res.point, p, atol=1e-8)
    assert res.final_cost < 1e-12 < res.initial_cost


def test_bundle_adjust_matches_scipy_least_squares(rng):
    poses = forward_poses(10)
    for _ in range(30):
        p = np.array([rng.uniform(2, 6), rng.uniform(-3, 0), rng.uniform(14, 22)])
        track = observe(p, poses, noise=1.0, rng=rng)
        R_cw = np.array([poses[f].R_cw for f in poses])
        t_cw = np.array([poses[f].t_cw for f in poses])
        pix = track.centers()

        def fun(q):
            return reprojection_residuals(q, R_cw, t_cw, K, pix)[0]

        ref = least_squares(fun, p, xtol=1e-15, ftol=1e-15, gtol=1e-15).x
        res = bundle_adjust_sign(p + 0.2, track, poses, K)
        np.testing.assert_allclose(res.point, ref, atol=1e-6)


def test_bundle_adjust_iteration_cap_warns():
    poses = forward_poses(8)
    p = np.array([3.0, -1.0, 15.0])
    track = observe(p, poses)
    with pytest.warns(NonConvergenceWarning):
        res = bundle_adjust_sign(p + [2, 1, -3], track, poses, K, max_iter=1)
    assert not res.converged and res.iterations == 1


def test_bundle_adjust_behind_every_camera():
    poses = forward_poses(4)
    track = observe(np.array([1.0, 0.0, 20.0]), poses)
    with pytest.raises(BehindCameraInit):
        bundle_adjust_sign([0.0, 0.0, -5.0], track, poses, K)


def test_relative_positions_negative_depth():
    poses = forward_poses(3)
    rel, status = relative_positions(np.array([0.0, 0.0, 1.5]), poses, [0, 1, 2])
    assert status is Status.TRIANGULATION_FAILED
    assert rel[2][2] == pytest.approx(-0.5)
    rel, status = relative_positions(np.array([0.0, 0.0, 5.0]), poses, [0, 1, 2])
    assert status is Status.OK


def test_triangulate_track_with_anchored_trajectory():
    # gently curving drive; provider frame is rotated and shrunk relative to GPS
    centers = np.array([[0.002 * i * i, 0.0, float(i)] for i in range(30)])
    gt = Trajectory(range(30), [Pose.from_Rt(np.eye(3), c) for c in centers])
    Rp = Rotation.from_euler("xyz", [10, -30, 5], degrees=True).as_matrix()
    provider = Trajectory(gt.frame_ids, [Pose.from_Rt(Rp @ p.R, 0.05 * Rp @ p.translation) for p in gt.poses])
    gps = {f: gt[f].translation for f in gt}
    p = np.array([3.0, -1.0, 25.0])
    track = observe(p, Trajectory(range(20), [gt[f] for f in range(20)]))
    anchored = GpsAnchoredTrajectory(provider, gps)
    for mode, method in (("full", Method.A_FULL), ("short", Method.A_SHORT)):
        res = triangulate_track(track, anchored, K, mode)
        assert res.ok and res.method is method
        np.testing.assert_allclose(res.p_abs, p, atol=1e-8)
        assert set(res.rel_positions) == set(range(20))
        np.testing.assert_allclose(res.rel_positions[4], gt[4].to_camera(p), atol=1e-8)


def test_triangulate_track_skips():
    poses = forward_poses(5)
    single = SignTrack(0, 1, (SignObservation(0, 0, 1, (300, 150, 10, 10)),))
    res = triangulate_track(single, poses, K)
    assert res.status is Status.SKIPPED and res.reason == "insufficient parallax"
    track = observe(np.array([1.0, 0, 20.0]), forward_poses(8))
    res = triangulate_track(track, poses, K)
    assert res.status is Status.SKIPPED
    with pytest.raises(ValueError):
        triangulate_track(track, poses, K, "short")


def test_filter_edge_observations():
    obs = (SignObservation(3, 0, 1, (0.5, 100, 10, 10)), SignObservation(3, 1, 1, (100, 100, 10, 10)))
    t = filter_edge_observations(SignTrack(3, 1, obs), 2.0, 640, 320)
    assert t.frame_ids == [1]
    with pytest.raises(EmptyTrack):
        filter_edge_observations(SignTrack(3, 1, obs[:1]), 2.0, 640, 320)


def test_monte_carlo_error_scales_with_pixel_noise():
    rng = np.random.default_rng(5)
    poses = forward_poses(12)
    errs = {}
    for sigma in (0.5, 2.0):
        e = []
        for _ in range(200):
            p = np.array([rng.uniform(3, 6), rng.uniform(-2.5, -1), rng.uniform(15, 20)])
            track = observe(p, poses, noise=sigma, rng=rng)
            with warnings.catch_warnings():
                warnings.simplefilter("error", NonConvergenceWarning)
                res = triangulate_track(track, poses, K)
            e.append(np.linalg.norm(res.p_abs - p))
        errs[sigma] = np.median(e)
    # first-order error is linear in pixel noise
    assert errs[2.0] / errs[0.5] == pytest.approx(4.0, rel=0.3)
