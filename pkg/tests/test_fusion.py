import itertools

import numpy as np
import pytest

from signmap import fusion
from signmap.camera import IntrinsicsEstimate, IntrinsicsEstimateSeries, PinholeIntrinsics
from signmap.errors import DegenerateRays, NoCalibrationAvailable
from signmap.fusion import (
    FusionRunner, GroundTruth, GroundTruthSign, ProviderBundle, attach_geodetic, evaluate,
    select_calibration, select_positioning,
)
from signmap.geodesy import GeodeticCoord, enu_to_geodetic, geodetic_to_enu
from signmap.signs import Method, SignPositionResult, Status
from signmap.synthetic import scene_bundle
from signmap.trajectory import Pose, Trajectory

K_GEO = PinholeIntrinsics(700.0, 700.0, 600.0, 180.0, 1242, 375)


def _series(turn_fx=800.0, n=10, turn_at=(6, 9)):
    est = tuple(IntrinsicsEstimate(i, turn_fx if turn_at[0] <= i <= turn_at[1] else 700.0, 700.0, 600.0, 180.0)
                for i in range(n))
    return IntrinsicsEstimateSeries(est, 1242, 375)


@pytest.mark.parametrize("calibration, learned, turns, expected", [
    (K_GEO, _series(), [(6, 9)], "geometric"),
    (None, _series(), [(6, 9)], "learned-turns-median"),
    (None, _series(), [(20, 30)], "learned-median"),
    (K_GEO, _series(), [], "learned-median"),
    (None, _series(), [], "learned-median"),
    (K_GEO, None, [], "geometric-no-turns"),
])
def test_calibration_priority(calibration, learned, turns, expected):
    bundle = ProviderBundle(calibration=calibration, learned_calibration=learned, turn_ranges=turns)
    K, prov = select_calibration(bundle)
    assert prov == expected
    if expected == "learned-turns-median":
        assert K.fx == 800.0
    if expected == "learned-median":
        assert K.fx == 700.0


def test_no_calibration():
    with pytest.raises(NoCalibrationAvailable):
        select_calibration(ProviderBundle(turn_ranges=[(0, 5)]))


def test_positioning_plan(arc_scene):
    track = arc_scene.tracks()[0]
    full = scene_bundle(arc_scene)
    assert select_positioning(full, track).methods == (Method.A_SHORT, Method.B)
    no_geo = scene_bundle(arc_scene, geometric=False)
    assert select_positioning(no_geo, track).methods == (Method.B,)
    depth_only = scene_bundle(arc_scene, geometric=False, learned=False)
    plan = select_positioning(depth_only, track)
    assert plan.methods == () and plan.reason == "NoCoverage"
    partial = Trajectory(track.frame_ids[:-1], [arc_scene.provider_trajectory[f] for f in track.frame_ids[:-1]])
    b = scene_bundle(arc_scene, learned=False, depth=False)
    b.geometric_trajectory = partial
    assert select_positioning(b, track).methods == ()


PROVIDERS = ("geometric", "learned", "depth")


def _ok_count(scene, present):
    bundle = scene_bundle(scene, **{p: p in present for p in PROVIDERS})
    runner = FusionRunner(bundle, scene.gps_enu(), scene.intrinsics, edge_margin=2.0)
    return sum(r.ok for r in runner.run(scene.tracks()))


def test_coverage_is_monotone_in_providers(composite_scene):
    counts = {}
    for r in range(4):
        for subset in itertools.combinations(PROVIDERS, r):
            counts[frozenset(subset)] = _ok_count(composite_scene, set(subset))
    for s, n in counts.items():
        for extra in PROVIDERS:
            assert counts[s | {extra}] >= n
    assert counts[frozenset()] == 0
    assert counts[frozenset(PROVIDERS)] == len(composite_scene.tracks())


def test_fallback_to_depth_after_triangulation_failure(arc_scene, monkeypatch):
    def boom(*args, **kwargs):
        raise DegenerateRays("forced")

    monkeypatch.setattr(fusion, "triangulate_track", boom)
    runner = FusionRunner(scene_bundle(arc_scene), arc_scene.gps_enu(), arc_scene.intrinsics)
    res = runner.position(arc_scene.tracks()[0])
    assert res.ok and res.method is Method.B
    assert [a["method"] for a in res.info["attempts"]] == ["A-short", "B"]
    assert res.info["attempts"][0]["status"] == Status.TRIANGULATION_FAILED.value

    runner = FusionRunner(scene_bundle(arc_scene, depth=False), arc_scene.gps_enu(), arc_scene.intrinsics)
    res = runner.position(arc_scene.tracks()[0])
    assert res.status is Status.TRIANGULATION_FAILED and "DegenerateRays" in res.reason


def test_loop_closure_variant_supplies_absolute_position(arc_scene):
    b = scene_bundle(arc_scene, learned=False, depth=False)
    geo = b.geometric_trajectory
    rng = np.random.default_rng(0)
    step = np.linalg.norm(geo.centers()[1] - geo.centers()[0])
    lc = Trajectory(geo.frame_ids, [Pose(p.quat, p.translation + rng.normal(0, 0.05 * step, 3))
                                    for p in geo.poses])
    b.geometric_trajectory_lc = lc
    track = arc_scene.tracks()[0]
    res = FusionRunner(b, arc_scene.gps_enu(), arc_scene.intrinsics).position(track)
    assert res.ok and res.info["absolute_from"] == "loop-closure"

    plain = FusionRunner(scene_bundle(arc_scene, learned=False, depth=False), arc_scene.gps_enu(),
                         arc_scene.intrinsics).position(track)
    b_lc = scene_bundle(arc_scene, learned=False, depth=False)
    b_lc.geometric_trajectory = lc
    lc_only = FusionRunner(b_lc, arc_scene.gps_enu(), arc_scene.intrinsics).position(track)
    np.testing.assert_allclose(res.p_abs, lc_only.p_abs, atol=1e-12)
    for f in res.rel_positions:
        np.testing.assert_allclose(res.rel_positions[f], plain.rel_positions[f], atol=1e-12)
    assert np.linalg.norm(res.p_abs - plain.p_abs) > 1e-6


def test_forced_modes(arc_scene):
    track = arc_scene.tracks()[0]
    for mode, method in (("force-A-full", Method.A_FULL), ("force-A-short", Method.A_SHORT),
                         ("force-B", Method.B)):
        runner = FusionRunner(scene_bundle(arc_scene), arc_scene.gps_enu(), arc_scene.intrinsics, mode=mode)
        assert runner.position(track).method is method
    with pytest.raises(ValueError):
        FusionRunner(scene_bundle(arc_scene), arc_scene.gps_enu(), arc_scene.intrinsics, mode="A")


def _ok(track_id, p, rel):
    return SignPositionResult(track_id, 1, Method.A_SHORT, Status.OK, p_abs=np.asarray(p, float),
                              rel_positions={f: np.asarray(v, float) for f, v in rel.items()})


ORIGIN = GeodeticCoord(48.0, 11.0, 500.0)


def test_normalized_error_example():
    gt = GroundTruth(ORIGIN, [
        GroundTruthSign(0, 1, np.array([10.0, 0, 0]), {0: np.array([0, 0, 10.0]), 1: np.array([0, 0, 9.0])}),
        GroundTruthSign(1, 1, np.array([0, 10.0, 0]), {0: np.array([1, 0, 10.0])}),
        GroundTruthSign(2, 1, np.array([0, 0, 10.0]), {0: np.array([2, 0, 10.0])}),
    ])
    results = [
        _ok(7, [10.3, 0, 0], {0: [0, 0, 10.2], 1: [0, 0, 9.4]}),  # rel errors 0.2, 0.4 -> 0.3
        _ok(8, [0, 10.0, 0.6], {0: [1, 0, 10.6]}),                 # 0.6
        _ok(9, [0, 0, 10.0], {0: [2, 0, 10.0]}),                   # 0.0
        SignPositionResult(10, 1, None, Status.SKIPPED),
    ]
    rep = evaluate(results, gt)
    assert rep.positioned == 3
    assert rep.mean_rel == pytest.approx(0.3)
    assert rep.normalized == pytest.approx(0.1)
    assert rep.pooled_rel == pytest.approx(np.mean([0.2, 0.4, 0.6, 0.0]))
    assert rep.mean_abs == pytest.approx((0.3 + 0.6 + 0.0) / 3)
    assert evaluate([results[-1]], gt).normalized == float("inf")


def test_matching_is_global_and_gated():
    gt = GroundTruth(ORIGIN, [GroundTruthSign(0, 1, np.array([0.0, 0, 0])),
                              GroundTruthSign(1, 1, np.array([2.0, 0, 0])),
                              GroundTruthSign(2, 1, np.array([50.0, 0, 0]))])
    # greedy nearest-first would pair track 1 with sign 0 and leave track 0 on sign 1 at 2.9 m
    results = [_ok(0, [-0.9, 0, 0], {}), _ok(1, [1.0, 0, 0], {}), _ok(2, [56.0, 0, 0], {})]
    rep = evaluate(results, gt)
    pairs = {e.track_id: e.sign_id for e in rep.signs}
    assert pairs == {0: 0, 1: 1}
    assert rep.false_positives == [2] and rep.misses == [2]


def test_evaluate_across_origins():
    gt = GroundTruth(ORIGIN, [GroundTruthSign(0, 1, np.array([5.0, 5.0, 0.0]))])
    other = GeodeticCoord(48.001, 11.001, 505.0)
    p_other = geodetic_to_enu(enu_to_geodetic([5.0, 5.0, 0.0], ORIGIN), other).as_array()
    res = attach_geodetic([_ok(0, p_other, {})], other)
    rep = evaluate(res, gt)
    assert rep.signs[0].abs_error < 1e-6
    rep = evaluate([_ok(0, p_other, {})], gt, origin=other)
    assert rep.signs[0].abs_error < 1e-6
