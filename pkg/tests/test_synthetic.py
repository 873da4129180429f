import numpy as np
import pytest

from signmap.camera import PinholeIntrinsics
from signmap.errors import InfeasibleSpec
from signmap.synthetic import SceneSpec, Segment, generate_scene, make_path, project_ground_truth, reobserve


def test_deterministic():
    a = generate_scene(SceneSpec(seed=11, pixel_sigma=1.0))
    b = generate_scene(SceneSpec(seed=11, pixel_sigma=1.0))
    np.testing.assert_array_equal(a.sign_positions, b.sign_positions)
    assert a.observations == b.observations
    assert a.provider_trajectory == b.provider_trajectory


def test_reobserve_keeps_geometry():
    a = generate_scene(SceneSpec(seed=11, pixel_sigma=1.0))
    b = reobserve(a, noise_seed=1)
    np.testing.assert_array_equal(a.sign_positions, b.sign_positions)
    assert a.clean_observations == b.clean_observations
    assert a.observations != b.observations


def test_clean_observations_are_exact_projections(composite_scene):
    assert np.abs(project_ground_truth(composite_scene)).max() < 1e-9


def test_sign_placement(composite_scene):
    s = composite_scene
    spec = s.spec
    centers = s.gt_trajectory.centers()
    assert len(s.sign_positions) == spec.n_signs
    for p in s.sign_positions:
        height = p[2] + spec.camera_height
        assert spec.height_range[0] <= height <= spec.height_range[1]
        lateral = np.min(np.linalg.norm(centers[:, :2] - p[:2], axis=1))
        assert lateral <= spec.lateral_range[1] + 1e-9
    counts = {}
    for o in s.observations:
        counts[o.track_id] = counts.get(o.track_id, 0) + 1
    assert min(counts.values()) >= spec.min_views


def test_camera_frame_convention(straight_scene):
    s = straight_scene
    np.testing.assert_allclose(s.gt_trajectory.centers()[0], 0.0, atol=1e-12)
    pose = s.gt_trajectory[0]
    # z along travel, y down
    heading = s.gt_trajectory.centers()[1] - s.gt_trajectory.centers()[0]
    np.testing.assert_allclose(pose.R[:, 2], heading / np.linalg.norm(heading), atol=1e-12)
    np.testing.assert_allclose(pose.R[:, 1], [0, 0, -1], atol=1e-12)


def test_path_lengths_and_turns():
    rng = np.random.default_rng(0)
    centers, psi = make_path(SceneSpec(shape="arc", n_frames=50, arc_turn_deg=90), rng)
    assert len(centers) == 50
    np.testing.assert_allclose(np.linalg.norm(np.diff(centers, axis=0), axis=1), 1.0, rtol=1e-3)
    assert np.degrees(abs(psi[-1] - psi[0])) == pytest.approx(90.0, abs=1e-9)
    spec = SceneSpec(segments=(Segment(20, 0.0), Segment(29, -45.0)), n_frames=50)
    _, psi = make_path(spec, rng)
    assert np.degrees(psi[-1] - psi[0]) == pytest.approx(-45.0, abs=1e-9)


def test_hidden_scales(composite_scene):
    s = composite_scene
    for scale in (s.provider_scale, s.learned_scale):
        assert 0.05 <= scale <= 20.0
    gt_step = np.linalg.norm(np.diff(s.gt_trajectory.centers()[:2], axis=0))
    prov_step = np.linalg.norm(np.diff(s.provider_trajectory.centers()[:2], axis=0))
    assert gt_step / prov_step == pytest.approx(s.provider_scale, rel=1e-12)
    np.testing.assert_allclose(s.provider_trajectory[0].matrix(), np.eye(4), atol=1e-12)


def test_depth_map_values(composite_scene):
    s = composite_scene
    o = s.clean_observations[len(s.clean_observations) // 2]
    z = s.gt_trajectory[o.frame_id].to_camera(s.sign_positions[o.track_id])[2]
    d = s.depth_maps[o.frame_id].sample(*o.center)
    assert d * s.learned_scale == pytest.approx(z, rel=1e-12)
    # ground plane in the bottom row
    K = s.intrinsics
    bottom = s.depth_maps[o.frame_id].values[K.height - 1, 0] * s.learned_scale
    assert bottom == pytest.approx(s.spec.camera_height * K.fy / (K.height - 1 - K.cy), rel=1e-12)
    # sky is invalid
    assert s.depth_maps[o.frame_id].values[0, 0] == 0.0


def test_spec_dict_round_trip():
    spec = SceneSpec(shape="arc", segments=(Segment(10, 5.0),), intrinsics=PinholeIntrinsics(1, 1, 0.5, 0.5, 2, 2))
    assert SceneSpec.from_dict(spec.to_dict()) == spec


def test_infeasible_spec():
    with pytest.raises(InfeasibleSpec):
        generate_scene(SceneSpec(shape="straight", n_frames=5, n_signs=3, min_views=10))
    with pytest.raises(InfeasibleSpec):
        generate_scene(SceneSpec(shape="composite", n_frames=5))


def test_spec_validation():
    with pytest.raises(ValueError):
        SceneSpec(shape="loop")
    with pytest.raises(ValueError):
        SceneSpec(pixel_sigma=-1)
