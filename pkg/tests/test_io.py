import json

import numpy as np
import pytest
from PIL import Image

from gnfield.io import (MAGIC, CheckpointError, Dataset, DatasetError, encode_image, focal_from_fov,
                        linear_to_srgb, load_checkpoint, load_dataset, read_checkpoint_header,
                        read_image, save_checkpoint, scene_to_bytes, srgb_to_linear,
                        write_dataset, write_image)
from gnfield.rays import Camera
from gnfield.scene import init_level
from gnfield.synthetic import orbit_cameras


def test_focal_from_manifest_angle():
    assert focal_from_fov(0.6911112, 800) == pytest.approx(1111.11, abs=0.01)


def test_srgb_round_trip():
    x = np.linspace(0, 1, 101)
    np.testing.assert_allclose(linear_to_srgb(srgb_to_linear(x)), x, atol=1e-12)
    assert srgb_to_linear(0.5) == pytest.approx(0.21404, abs=1e-5)


class TestImages:
    def test_alpha_composited_over_background(self, tmp_path):
        rgba = np.zeros((2, 2, 4), np.uint8)
        rgba[0, 0] = [255, 0, 0, 255]
        rgba[0, 1] = [255, 0, 0, 0]
        Image.fromarray(rgba, "RGBA").save(tmp_path / "a.png")
        img = read_image(tmp_path / "a.png", background=(0, 0, 1), srgb=False)
        np.testing.assert_allclose(img[0, 0], [1, 0, 0])
        np.testing.assert_allclose(img[0, 1], [0, 0, 1])

    def test_write_read_linear(self, tmp_path):
        img = np.random.default_rng(0).integers(0, 256, (5, 7, 3)) / 255.0
        write_image(tmp_path / "x.png", img, srgb=False)
        np.testing.assert_allclose(read_image(tmp_path / "x.png", srgb=False), img, atol=1e-12)

    def test_srgb_encoding_stored(self, tmp_path):
        write_image(tmp_path / "g.png", np.full((1, 1, 3), srgb_to_linear(128 / 255)), srgb=True)
        assert np.asarray(Image.open(tmp_path / "g.png"))[0, 0, 0] == 128
        assert encode_image(np.array([2.0, -1.0]), srgb=False).tolist() == [255, 0]


class TestDataset:
    def test_identity_pose_camera(self, tmp_path):
        Image.fromarray(np.zeros((4, 6, 3), np.uint8)).save(tmp_path / "r_0.png")
        (tmp_path / "transforms_train.json").write_text(json.dumps(
            {"camera_angle_x": 0.6911112, "frames": [
                {"file_path": "./r_0", "transform_matrix": np.eye(4).tolist()}]}))
        ds = load_dataset(tmp_path)
        cam = ds.cameras[0]
        np.testing.assert_allclose(cam.origin, 0.0)
        assert (cam.width, cam.height) == (6, 4)
        np.testing.assert_allclose(cam.directions(3.0, 2.0), [0, 0, -1], atol=1e-12)

    def test_round_trip(self, tmp_path):
        cams = orbit_cameras(5, 3.0, 12, 9)
        rng = np.random.default_rng(1)
        imgs = [rng.integers(0, 256, (9, 12, 3)) / 255.0 for _ in cams]
        write_dataset(tmp_path, Dataset(cams, imgs, split="val"), srgb=False)
        ds = load_dataset(tmp_path, "val", srgb=False)
        assert len(ds) == 5 and ds.split == "val"
        for a, b, ia, ib in zip(cams, ds.cameras, imgs, ds.images):
            np.testing.assert_array_equal(a.pose, b.pose)
            assert a.focal == pytest.approx(b.focal, rel=1e-12)
            np.testing.assert_allclose(ia, ib, atol=1e-12)

    def test_downscale(self, tmp_path):
        cams = orbit_cameras(1, 3.0, 8, 8)
        write_dataset(tmp_path, Dataset(cams, [np.full((8, 8, 3), 0.4)]), srgb=False)
        ds = load_dataset(tmp_path, srgb=False, downscale=2)
        assert ds.images[0].shape == (4, 4, 3)
        assert ds.cameras[0].focal == pytest.approx(cams[0].focal / 2)

    def test_missing_directory_named(self, tmp_path):
        missing = tmp_path / "nope"
        with pytest.raises(DatasetError, match="nope"):
            load_dataset(missing)

    def test_missing_image_named(self, tmp_path):
        (tmp_path / "transforms.json").write_text(json.dumps(
            {"camera_angle_x": 0.5, "frames": [{"file_path": "./gone",
                                                "transform_matrix": np.eye(4).tolist()}]}))
        with pytest.raises(DatasetError, match="gone"):
            load_dataset(tmp_path)

    def test_bad_pose(self, tmp_path):
        Image.fromarray(np.zeros((2, 2, 3), np.uint8)).save(tmp_path / "a.png")
        (tmp_path / "transforms.json").write_text(json.dumps(
            {"camera_angle_x": 0.5, "frames": [{"file_path": "a.png",
                                                "transform_matrix": (2 * np.eye(4)).tolist()}]}))
        with pytest.raises(DatasetError, match="orthonormal"):
            load_dataset(tmp_path)

    def test_mismatched_lengths(self):
        with pytest.raises(DatasetError):
            Dataset([Camera(np.eye(4), 1.0, 2, 2)], [])


class TestCheckpoint:
    @pytest.fixture
    def scene(self):
        return init_level((5, 4, 3), 4, 2, rng_seed=3)

    def test_round_trip_bit_identical(self, scene, tmp_path):
        path = tmp_path / "s.perf"
        save_checkpoint(scene, path)
        back = load_checkpoint(path)
        assert back.params.tobytes() == scene.params.tobytes()
        assert back.grid == scene.grid and back.layers == scene.layers
        assert path.read_bytes()[:4] == MAGIC

    def test_truncated(self, scene, tmp_path):
        path = tmp_path / "s.perf"
        data = scene_to_bytes(scene)
        path.write_bytes(data[:-10])
        with pytest.raises(CheckpointError, match=f"expected {len(data)} bytes, found {len(data) - 10}"):
            load_checkpoint(path)

    def test_bad_magic(self, scene, tmp_path):
        path = tmp_path / "s.perf"
        path.write_bytes(b"NOPE" + scene_to_bytes(scene)[4:])
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_bad_version(self, scene, tmp_path):
        data = bytearray(scene_to_bytes(scene))
        data[4] = 9
        path = tmp_path / "s.perf"
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointError, match="version 9"):
            read_checkpoint_header(path)

    def test_header_only(self, scene, tmp_path):
        hdr_bytes = scene_to_bytes(scene)[: -4 * scene.n_params]
        path = tmp_path / "h.perf"
        path.write_bytes(hdr_bytes)  # payload absent
        hdr = read_checkpoint_header(path)
        assert hdr.dims == (5, 4, 3)
        assert [s for s, _ in hdr.layers] == [4, 4]
        assert hdr.n_params == scene.n_params
        assert hdr.header_bytes == len(hdr_bytes)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError, match="not found"):
            load_checkpoint(tmp_path / "x.perf")
