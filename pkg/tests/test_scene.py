import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from echogrid.scene import (
    Aabb,
    CameraIntrinsics,
    CameraPose,
    DetectionProfile,
    LOCALIZATION_PROFILE,
    Marker,
    NAVIGATION_PROFILE,
    Scene,
    SceneConfigError,
    SphereCollider,
    Vec3,
    detect_markers,
    project_point,
    scene_from_config,
    scene_to_config,
)

from oracles import brute_force_project, marker_visible

ORIGIN_POSE = CameraPose(Vec3(0, 0, 0), 0.0, 0.0)
INTR = CameraIntrinsics(60.0, 45.0)


def facing_marker(mid, x, y, z, size=0.1, label=""):
    """Marker whose face points back at the origin."""
    normal = Vec3(-x, -y, -z).normalized()
    return Marker(mid, Vec3(x, y, z), normal, size, label)


class TestProjectPoint:
    def test_optical_axis_hits_principal_point(self):
        assert project_point(ORIGIN_POSE, INTR, Vec3(0, 0, 1.0)) == (0.5, 0.5)

    def test_point_behind_camera_is_culled(self):
        assert project_point(ORIGIN_POSE, INTR, Vec3(0, 0, -1.0)) is None

    def test_point_near_fov_edge(self):
        # u = 0.5 + 0.5 * tan(theta) / tan(h_fov / 2); theta just under 30 deg
        eps = 1e-4
        x = math.tan(math.radians(30.0)) - eps
        u, v = project_point(ORIGIN_POSE, INTR, Vec3(x, 0, 1.0))
        expected_u = 0.5 + 0.5 * x / math.tan(math.radians(30.0))
        assert u == pytest.approx(expected_u, abs=1e-12)
        assert 0.999 < u < 1.0
        assert v == 0.5
        # cross-check against the brute-force ray search
        bu, bv = brute_force_project((0, 0, 0), 0, 0, 60, 45, (x, 0, 1.0))
        assert u == pytest.approx(bu, abs=1e-3)
        assert v == pytest.approx(bv, abs=1e-3)

    def test_point_outside_fov_returns_none(self):
        x = math.tan(math.radians(30.0)) + 1e-3
        assert project_point(ORIGIN_POSE, INTR, Vec3(x, 0, 1.0)) is None

    def test_u_grows_rightward_v_grows_downward(self):
        u_r, _ = project_point(ORIGIN_POSE, INTR, Vec3(0.2, 0, 1.0))
        u_l, _ = project_point(ORIGIN_POSE, INTR, Vec3(-0.2, 0, 1.0))
        assert u_r > 0.5 > u_l
        _, v_up = project_point(ORIGIN_POSE, INTR, Vec3(0, 0.2, 1.0))
        _, v_dn = project_point(ORIGIN_POSE, INTR, Vec3(0, -0.2, 1.0))
        assert v_up < 0.5 < v_dn

    @settings(max_examples=100)
    @given(
        x=st.floats(-0.5, 0.5),
        y=st.floats(-0.35, 0.35),
        k=st.floats(0.05, 40.0),
        yaw=st.floats(-170, 170),
        pitch=st.floats(-80, 80),
    )
    def test_scale_invariance_along_ray(self, x, y, k, yaw, pitch):
        pose = CameraPose(Vec3(1.0, -2.0, 0.5), yaw, pitch)
        fwd, right, down = pose.basis()
        p = pose.position + fwd + right.scale(x) + down.scale(y)
        scaled = pose.position + (p - pose.position).scale(k)
        uv = project_point(pose, INTR, p)
        uv_scaled = project_point(pose, INTR, scaled)
        assert uv is not None and uv_scaled is not None
        assert uv[0] == pytest.approx(uv_scaled[0], abs=1e-9)
        assert uv[1] == pytest.approx(uv_scaled[1], abs=1e-9)

    def test_matches_brute_force_on_grid(self):
        pose = CameraPose(Vec3(0.3, 1.1, -0.4), 25.0, -15.0)
        fwd, right, down = pose.basis()
        for dx in (-0.4, 0.0, 0.35):
            for dy in (-0.3, 0.1):
                p = pose.position + fwd.scale(2.0) + right.scale(dx) + down.scale(dy)
                uv = project_point(pose, INTR, p)
                oracle = brute_force_project(
                    pose.position.as_list(), pose.yaw, pose.pitch, 60, 45,
                    p.as_list())
                assert uv is not None and oracle is not None
                assert uv[0] == pytest.approx(oracle[0], abs=1e-3)
                assert uv[1] == pytest.approx(oracle[1], abs=1e-3)


class TestDetectMarkers:
    def scene_with(self, *markers):
        bounds = Aabb(Vec3(-20, -20, -20), Vec3(20, 20, 20))
        return Scene(tuple(markers), bounds)

    def test_too_close_marker_undetected(self):
        scene = self.scene_with(facing_marker(1, 0, 0, 0.03))
        assert detect_markers(scene, ORIGIN_POSE, INTR, LOCALIZATION_PROFILE) == []

    def test_on_axis_marker_detected(self):
        scene = self.scene_with(facing_marker(1, 0, 0, 0.5))
        dets = detect_markers(scene, ORIGIN_POSE, INTR, LOCALIZATION_PROFILE)
        assert len(dets) == 1
        assert dets[0].marker_id == 1
        assert dets[0].image_point == (0.5, 0.5)
        assert dets[0].distance == pytest.approx(0.5)

    def test_range_gating_boundaries(self):
        for dist, expected in [(0.039, 0), (0.041, 1), (1.999, 1), (2.001, 0)]:
            scene = self.scene_with(facing_marker(1, 0, 0, dist))
            dets = detect_markers(scene, ORIGIN_POSE, INTR, LOCALIZATION_PROFILE)
            assert len(dets) == expected, f"distance {dist}"

    def test_navigation_range_boundaries(self):
        for dist, expected in [(0.139, 0), (0.141, 1), (8.999, 1), (9.001, 0)]:
            scene = self.scene_with(facing_marker(1, 0, 0, dist))
            dets = detect_markers(scene, ORIGIN_POSE, INTR, NAVIGATION_PROFILE)
            assert len(dets) == expected, f"distance {dist}"

    def test_grazing_view_angle_rejected(self):
        # normal perpendicular to the line of sight: view angle 90 degrees
        side_on = Marker(1, Vec3(0, 0, 1.0), Vec3(1, 0, 0), 0.1)
        scene = self.scene_with(side_on)
        assert detect_markers(scene, ORIGIN_POSE, INTR, LOCALIZATION_PROFILE) == []

    def test_back_face_rejected(self):
        away = Marker(1, Vec3(0, 0, 1.0), Vec3(0, 0, 1), 0.1)
        scene = self.scene_with(away)
        assert detect_markers(scene, ORIGIN_POSE, INTR, LOCALIZATION_PROFILE) == []

    def test_corridor_subset_matches_independent_check(self):
        markers = [
            facing_marker(i, x, 0.5, z, size=0.173)
            for i, (x, z) in enumerate(
                [(-1.5, 2.0), (1.0, 3.5), (0.0, 5.0), (-2.0, 6.5),
                 (2.0, 8.0), (0.5, 9.5), (-1.0, 11.0), (1.5, 12.5)]
            )
        ]
        scene = self.scene_with(*markers)
        pose = CameraPose(Vec3(0, 1.4, 0.0), 0.0, -5.0)
        dets = detect_markers(scene, pose, INTR, NAVIGATION_PROFILE)
        got = {d.marker_id for d in dets}
        expected = {
            m.id for m in markers
            if marker_visible(pose.position.as_list(), pose.yaw, pose.pitch,
                              60, 45, m.center.as_list(), m.normal.as_list(),
                              0.14, 9.0, 70.0)
        }
        assert got == expected
        assert expected  # the pose actually sees something

    def test_output_sorted_and_within_range(self):
        markers = [facing_marker(i, 0.1 * i, 0, 1.0 + 0.2 * i) for i in (5, 2, 9)]
        scene = self.scene_with(*markers)
        dets = detect_markers(scene, ORIGIN_POSE, INTR, LOCALIZATION_PROFILE)
        ids = [d.marker_id for d in dets]
        assert ids == sorted(ids)
        for d in dets:
            assert LOCALIZATION_PROFILE.min_range <= d.distance <= LOCALIZATION_PROFILE.max_range

    def test_determinism(self):
        markers = [facing_marker(i, 0.05 * i, -0.02 * i, 0.8) for i in range(5)]
        scene = self.scene_with(*markers)
        a = detect_markers(scene, ORIGIN_POSE, INTR, LOCALIZATION_PROFILE)
        b = detect_markers(scene, ORIGIN_POSE, INTR, LOCALIZATION_PROFILE)
        assert a == b

    def test_yaw_rotation_shifts_u_oppositely(self):
        scene = self.scene_with(facing_marker(1, 0, 0, 1.0))
        last_u = None
        for yaw in (0.0, 5.0, 10.0, 15.0, 20.0, 25.0):
            dets = detect_markers(scene, CameraPose(Vec3(0, 0, 0), yaw, 0.0),
                                  INTR, LOCALIZATION_PROFILE)
            if not dets:
                break
            u = dets[0].image_point[0]
            if last_u is not None:
                assert u < last_u  # turning right pushes the marker left
            last_u = u
        assert last_u is not None

    def test_occlusion_flag(self):
        marker = facing_marker(1, 0, 0, 2.0, size=0.173)
        blocker = SphereCollider(Vec3(0, 0, 1.0), 0.3)
        bounds = Aabb(Vec3(-20, -20, -20), Vec3(20, 20, 20))
        scene = Scene((marker,), bounds, (blocker,))
        assert detect_markers(scene, ORIGIN_POSE, INTR, NAVIGATION_PROFILE) != []
        assert detect_markers(scene, ORIGIN_POSE, INTR, NAVIGATION_PROFILE,
                              occlusion=True) == []


class TestPoseAndTypes:
    def test_yaw_normalized(self):
        assert CameraPose(Vec3(0, 0, 0), 270.0, 0.0).yaw == -90.0
        assert CameraPose(Vec3(0, 0, 0), -180.0, 0.0).yaw == 180.0
        assert CameraPose(Vec3(0, 0, 0), 180.0, 0.0).yaw == 180.0

    def test_pitch_bounds(self):
        with pytest.raises(ValueError):
            CameraPose(Vec3(0, 0, 0), 0.0, 90.5)

    def test_non_finite_vec_rejected(self):
        with pytest.raises(ValueError):
            Vec3(float("nan"), 0, 0)

    def test_marker_normal_must_be_unit(self):
        with pytest.raises(ValueError):
            Marker(1, Vec3(0, 0, 0), Vec3(0, 0, 2), 0.1)

    def test_profile_ranges(self):
        with pytest.raises(ValueError):
            DetectionProfile(2.0, 1.0, 0.1)
        assert LOCALIZATION_PROFILE.min_range == 0.04
        assert LOCALIZATION_PROFILE.max_range == 2.0
        assert NAVIGATION_PROFILE.min_range == 0.14
        assert NAVIGATION_PROFILE.max_range == 9.0
        assert LOCALIZATION_PROFILE.marker_size == 0.043
        assert NAVIGATION_PROFILE.marker_size == 0.173


class TestSceneConfig:
    def minimal_doc(self):
        return {
            "schema": "echogrid-scene/1",
            "bounds": {"min": [-1, -1, -1], "max": [1, 1, 1]},
            "markers": [
                {"id": 1, "center": [0, 0, 0.5], "normal": [0, 0, -1],
                 "size_m": 0.1, "label": "thing"}
            ],
            "colliders": [],
        }

    def test_minimal_document(self):
        scene = scene_from_config(json.dumps(self.minimal_doc()))
        assert len(scene.markers) == 1
        assert scene.markers[0].object_label == "thing"

    def test_duplicate_ids_rejected(self):
        doc = self.minimal_doc()
        doc["markers"].append(dict(doc["markers"][0]))
        with pytest.raises(SceneConfigError, match="duplicate marker id 1"):
            scene_from_config(json.dumps(doc))

    def test_marker_outside_bounds_rejected(self):
        doc = self.minimal_doc()
        doc["markers"][0]["center"] = [5, 0, 0]
        with pytest.raises(SceneConfigError, match="outside bounds"):
            scene_from_config(json.dumps(doc))

    def test_bad_json_reports_line(self):
        with pytest.raises(SceneConfigError, match="line"):
            scene_from_config("{\n  broken\n}")

    def test_wrong_schema_rejected(self):
        doc = self.minimal_doc()
        doc["schema"] = "something/9"
        with pytest.raises(SceneConfigError, match="schema"):
            scene_from_config(json.dumps(doc))

    def test_missing_field_names_path(self):
        doc = self.minimal_doc()
        del doc["markers"][0]["size_m"]
        with pytest.raises(SceneConfigError, match=r"markers\[0\]"):
            scene_from_config(json.dumps(doc))

    def test_round_trip(self):
        scene = scene_from_config(json.dumps(self.minimal_doc()))
        again = scene_from_config(scene_to_config(scene))
        assert again == scene

    def test_bundled_corridor_template(self):
        from importlib import resources

        text = resources.files("echogrid.data").joinpath(
            "corridor_scene.json").read_text()
        scene = scene_from_config(text)
        assert len(scene.markers) == 8
        assert all(m.size == 0.173 for m in scene.markers)
        size = scene.bounds.max - scene.bounds.min
        assert size.z == pytest.approx(15.0)
        assert size.x == pytest.approx(6.0)
