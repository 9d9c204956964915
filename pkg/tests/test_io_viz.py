import math
import os

import numpy as np
import pytest

from gcf import imageio
from gcf.benchmark import (SCHEMA_VERSION, camera_from_dict, config_from_dict,
                           derived_seed, fit_distance, make_gt_pose, random_rotation)
from gcf.errors import ConfigError
from gcf.field import CorrespondenceField
from gcf.raster import rasterize
from gcf.viz import field_visualization, flow_to_rgb, mask_outline

from conftest import fronto_pose


@pytest.fixture
def cube_buffers(cube, cam):
    return rasterize(cube, fronto_pose(2.5), cam)


class TestImageIO:
    def test_dump_writes_expected_files(self, cube_buffers, tmp_path):
        written = imageio.dump_buffers(cube_buffers, tmp_path)
        names = {os.path.basename(p) for p in written}
        assert {"normal.ppm", "objcoord.ppm", "depth.pgm", "index_map.pgm",
                "mask.pgm", "normal.png", "objcoord.png"} <= names
        for p in written:
            assert os.path.getsize(p) > 0

    def test_ppm_roundtrip_pixels(self, tmp_path):
        rgb = np.arange(2 * 3 * 3, dtype=np.uint8).reshape(2, 3, 3)
        path = tmp_path / "t.ppm"
        imageio.write_ppm(path, rgb)
        raw = path.read_bytes()
        header, rest = raw.split(b"255\n", 1)
        assert header == b"P6\n3 2\n"
        assert np.array_equal(np.frombuffer(rest, dtype=np.uint8).reshape(2, 3, 3), rgb)

    def test_pgm_values(self, tmp_path):
        gray = np.array([[0, 5], [10, 65535]])
        path = tmp_path / "t.pgm"
        imageio.write_pgm(path, gray, 65535)
        toks = path.read_text().split()
        assert toks[:4] == ["P2", "2", "2", "65535"]
        assert [int(t) for t in toks[4:]] == [0, 5, 10, 65535]

    def test_depth_gray_background_zero(self, cube_buffers):
        gray, maxval = imageio.depth_to_gray(cube_buffers)
        assert maxval == 65535
        assert np.all(gray[~cube_buffers.mask] == 0)
        assert gray[cube_buffers.mask].min() >= 1

    def test_atomic_write_leaves_no_temp(self, tmp_path):
        imageio.atomic_write_text(tmp_path / "x.txt", "hello")
        assert (tmp_path / "x.txt").read_text() == "hello"
        assert [p.name for p in tmp_path.iterdir()] == ["x.txt"]


class TestViz:
    def test_flow_colors_encode_direction(self):
        du = np.array([[1.0, -1.0]])
        dv = np.zeros((1, 2))
        valid = np.ones((1, 2), dtype=bool)
        rgb = flow_to_rgb(CorrespondenceField(du, dv, valid))
        assert rgb.shape == (1, 2, 3)
        assert not np.array_equal(rgb[0, 0], rgb[0, 1])  # opposite hues

    def test_invalid_pixels_black(self):
        du = np.ones((2, 2))
        valid = np.zeros((2, 2), dtype=bool)
        valid[0, 0] = True
        rgb = flow_to_rgb(CorrespondenceField(du, du, valid))
        assert np.all(rgb[~valid] == 0)

    def test_mask_outline_ring(self):
        w = np.zeros((7, 7))
        w[2:5, 2:5] = 1.0
        outline = mask_outline(w)
        assert outline[2, 2] and outline[2, 4] and outline[4, 3]
        assert not outline[3, 3]

    def test_field_visualization_shape(self, cube, cam, cube_buffers):
        from gcf.field import attention_mask, render_gt_gcf
        field = render_gt_gcf(cube, cube_buffers.pose, fronto_pose(2.6), cam, cube_buffers)
        img = field_visualization(field, attention_mask(cube_buffers))
        assert img.shape == (cam.height, cam.width, 3)
        assert img.dtype == np.uint8


class TestBenchmarkHelpers:
    def test_derived_seed_stable_and_distinct(self):
        assert derived_seed(0, 1, 2) == derived_seed(0, 1, 2)
        assert derived_seed(0, 1, 2) != derived_seed(0, 2, 1)

    def test_random_rotation_orthonormal(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            r = random_rotation(rng)
            np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-12)
            assert np.linalg.det(r) > 0.999

    def test_gt_pose_in_view(self, cube, cam):
        rng = np.random.default_rng(4)
        for _ in range(10):
            pose = make_gt_pose(cube, cam, rng)
            buf = rasterize(cube, pose, cam)
            frac = buf.mask.mean()
            assert 0.02 < frac < 0.5

    def test_fit_distance_scales_with_mesh(self, cube, table, cam):
        assert fit_distance(cube, cam) > 0
        # table has a slightly larger bounding sphere than the unit cube
        assert abs(fit_distance(table, cam) - fit_distance(cube, cam)) < 2.0

    def test_config_parse_defaults(self, tmp_path):
        cfg = config_from_dict({
            "schema_version": SCHEMA_VERSION,
            "mesh_paths": ["m.obj"],
            "output_dir": "out",
        })
        assert cfg.trials == 50
        assert cfg.refinement.iterations == 1000
        assert math.isclose(cfg.perturbation.sigma_rot, math.radians(5.0))

    def test_config_unknown_nested_key(self):
        with pytest.raises(ConfigError, match="oops"):
            config_from_dict({
                "schema_version": 1,
                "mesh_paths": ["m.obj"],
                "output_dir": "out",
                "refinement": {"oops": 1},
            })

    def test_config_missing_required(self):
        with pytest.raises(ConfigError, match="output_dir"):
            config_from_dict({"schema_version": 1, "mesh_paths": ["m.obj"]})

    def test_camera_dict_validation(self):
        with pytest.raises(ConfigError):
            camera_from_dict({"focal": 100.0, "width": 10, "height": 10})
        cam = camera_from_dict({"focal": 100.0, "principal_point": [5, 5],
                                "width": 10, "height": 10})
        assert cam.focal == 100.0
