import json

import numpy as np
import pytest

from semmap import synth
from semmap._validation import RejectedInputError
from semmap.geometry import CameraIntrinsics, Pose
from semmap.io import load_sequence


def _wall_scene():
    return synth.SceneSpec(
        extents=(4.0, 4.0, 4.0),
        faces={"x-": 1, "x+": 1, "y-": 1, "y+": 1, "z-": 1, "z+": 2},
        classes={0: "void", 1: "wall", 2: "ceiling"},
    )


class TestRenderFrame:
    def test_facing_wall(self):
        # camera 2 m below the ceiling, looking straight up: axis depth is 2 m everywhere
        intr = CameraIntrinsics.from_fov(16, 12, 40.0)
        pose = Pose(np.eye(3), (2.0, 2.0, 2.0))
        depth, labels = synth.render_frame(_wall_scene(), pose, intr)
        np.testing.assert_allclose(depth, 2.0, atol=1e-12)
        assert np.all(labels == 2)

    def test_ray_length_is_distance_over_cosine(self):
        intr = CameraIntrinsics.from_fov(16, 12, 40.0)
        depth, _ = synth.render_frame(_wall_scene(), Pose(np.eye(3), (2.0, 2.0, 2.0)), intr)
        rays = intr.camera_rays()
        cos = 1.0 / np.linalg.norm(rays, axis=1)
        np.testing.assert_allclose(np.linalg.norm(rays * depth.ravel()[:, None], axis=1), 2.0 / cos, atol=1e-12)

    def test_depth_matches_analytic_intersection(self):
        scene = synth.room_scene()
        intr = CameraIntrinsics.from_fov(32, 24, 70.0)
        pose = scene.trajectory[0]
        depth, labels = synth.render_frame(scene, pose, intr)
        rays = intr.camera_rays()
        pts = pose.apply(rays * depth.ravel()[:, None])
        # every floor hit lies on the floor plane, every ceiling hit on the ceiling
        local = pts - np.asarray(scene.origin)
        floor = labels.ravel() == 2
        assert floor.any()
        np.testing.assert_allclose(local[floor, 2], 0.0, atol=1e-9)
        ceiling = labels.ravel() == 3
        np.testing.assert_allclose(local[ceiling, 2], 2.5, atol=1e-9)

    def test_camera_outside_room_rejected(self):
        with pytest.raises(RejectedInputError):
            synth.render_frame(_wall_scene(), Pose(np.eye(3), (5.0, 1.0, 1.0)), synth.DEFAULT_INTRINSICS)

    def test_open_face_gives_void(self):
        scene = synth.pathology_scene()
        intr = CameraIntrinsics.from_fov(16, 12, 40.0)
        depth, labels = synth.render_frame(scene, Pose.look_at((2.0, 3.5, 1.2), (2.0, 6.0, 1.2)), intr)
        assert np.all(depth == 0) and np.all(labels == 0)


class TestNoise:
    def test_full_noise_changes_every_label(self):
        scene = synth.room_scene(n_poses=2)
        intr = CameraIntrinsics.from_fov(32, 24, 70.0)
        _, clean = synth.render_frame(scene, scene.trajectory[0], intr)
        _, noisy = synth.render_frame(scene.with_noise(1.0, seed=4), scene.trajectory[0], intr)
        hit = clean != 0
        assert np.all(noisy[hit] != clean[hit])
        assert np.all(noisy[~hit] == 0)

    def test_noise_is_seeded(self):
        scene = synth.room_scene(noise=0.3, seed=7, n_poses=2)
        intr = CameraIntrinsics.from_fov(32, 24, 70.0)
        a = synth.render_frame(scene, scene.trajectory[1], intr, 1)
        b = synth.render_frame(scene, scene.trajectory[1], intr, 1)
        np.testing.assert_array_equal(a[1], b[1])

    def test_noise_preserves_depth(self):
        scene = synth.room_scene(n_poses=2)
        intr = CameraIntrinsics.from_fov(32, 24, 70.0)
        d0, _ = synth.render_frame(scene, scene.trajectory[0], intr)
        d1, _ = synth.render_frame(scene.with_noise(0.5), scene.trajectory[0], intr)
        np.testing.assert_array_equal(d0, d1)

    def test_rate_bounds(self):
        with pytest.raises(RejectedInputError):
            synth.room_scene(noise=1.5)


class TestSceneSpec:
    def test_primitive_outside_room(self):
        with pytest.raises(RejectedInputError):
            synth.SceneSpec((1.0, 1.0, 1.0), {}, [synth.Box((0, 0, 0), (2, 1, 1), 1)])

    def test_dict_round_trip(self):
        scene = synth.room_scene(noise=0.2, seed=3)
        back = synth.SceneSpec.from_dict(json.loads(json.dumps(scene.to_dict())))
        assert back.to_dict() == scene.to_dict()
        assert back.origin == synth.ROOM_ORIGIN

    def test_room_fixture_shape(self):
        scene = synth.room_scene()
        assert len(scene.trajectory) == 8 and len(scene.classes) == 7
        assert scene.extents == (4.0, 4.0, 2.5)


class TestEmitSequence:
    def test_loadable(self, tmp_path):
        intr = CameraIntrinsics.from_fov(24, 18, 70.0)
        m = synth.emit_sequence(synth.room_scene(), intr, tmp_path / "s")
        assert len(load_sequence(tmp_path / "s")) == len(m) == 8
        assert m.n_classes == 7

    def test_empty_trajectory(self, tmp_path):
        scene = synth.room_scene()
        scene.trajectory = []
        with pytest.raises(RejectedInputError):
            synth.emit_sequence(scene, synth.DEFAULT_INTRINSICS, tmp_path / "s")

    def test_byte_identical(self, tmp_path):
        intr = CameraIntrinsics.from_fov(24, 18, 70.0)
        scene = synth.room_scene(noise=0.3, seed=1, n_poses=2)
        synth.emit_sequence(scene, intr, tmp_path / "a")
        synth.emit_sequence(scene, intr, tmp_path / "b")
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert files
        for f in files:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


class TestFixtures:
    def test_probe_keys_cover_shelf(self):
        keys = synth.pathology_probe_keys(0.05)
        assert set(np.unique(keys[:, 1])) == {59, 60}
        assert keys[:, 0].min() == 20 and keys[:, 0].max() == 59

    def test_plane_points_on_plane(self):
        pts, n = synth.plane_points(n=100, noise_sigma=0.0)
        np.testing.assert_allclose(pts @ n, 0.537, atol=1e-12)
