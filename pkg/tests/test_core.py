"""Domain type validation."""

import numpy as np
import pytest

from occlukit.core import (
    DatasetRecord,
    FloatRaster,
    FormatError,
    GeneratorError,
    Image,
    Mask,
    OccluKitError,
    OccupancyGrid,
    PointCloud,
    TriangleMesh,
    ValidationError,
)


def test_exception_hierarchy():
    assert issubclass(ValidationError, OccluKitError)
    assert issubclass(FormatError, ValidationError)
    assert issubclass(GeneratorError, OccluKitError)


class TestImage:
    def test_accepts_gray_and_rgb(self):
        gray = Image(np.zeros((4, 5), dtype=np.uint8))
        rgb = Image(np.zeros((4, 5, 3), dtype=np.uint8))
        assert (gray.height, gray.width, gray.channels) == (4, 5, 1)
        assert (rgb.height, rgb.width, rgb.channels) == (4, 5, 3)

    def test_rejects_wrong_dtype(self):
        with pytest.raises(ValidationError):
            Image(np.zeros((4, 5), dtype=np.float32))

    def test_rejects_wrong_shape(self):
        with pytest.raises(ValidationError):
            Image(np.zeros((4, 5, 2), dtype=np.uint8))
        with pytest.raises(ValidationError):
            Image(np.zeros(4, dtype=np.uint8))

    def test_copy_is_independent(self):
        img = Image(np.zeros((2, 2), dtype=np.uint8))
        dup = img.copy()
        dup.data[0, 0] = 9
        assert img.data[0, 0] == 0


class TestFloatRaster:
    def test_casts_to_float32(self):
        r = FloatRaster(np.ones((2, 3)))
        assert r.data.dtype == np.float32
        assert (r.height, r.width) == (2, 3)

    def test_rejects_non_2d(self):
        with pytest.raises(ValidationError):
            FloatRaster(np.ones((2, 3, 1)))


class TestMask:
    def test_count_and_full(self):
        bits = np.zeros((3, 4), dtype=bool)
        bits[1, 2] = True
        m = Mask(bits)
        assert m.count() == 1
        assert Mask.full(2, 2).count() == 4

    def test_coerces_to_bool(self):
        m = Mask(np.array([[0, 2], [255, 0]], dtype=np.uint8))
        assert m.bits.dtype == np.bool_
        assert m.count() == 2

    def test_rejects_non_2d(self):
        with pytest.raises(ValidationError):
            Mask(np.zeros((3, 4, 1), dtype=bool))


class TestPointCloud:
    def test_shape_checked(self):
        PointCloud(np.zeros((5, 3)))
        with pytest.raises(ValidationError):
            PointCloud(np.zeros((5, 2)))

    def test_casts_to_float64(self):
        pc = PointCloud(np.zeros((2, 3), dtype=np.float32))
        assert pc.points.dtype == np.float64


class TestTriangleMesh:
    def test_empty_mesh(self):
        m = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int32))
        assert m.vertices.shape == (0, 3)
        assert m.triangles.shape == (0, 3)

    def test_rejects_out_of_range_index(self):
        verts = np.zeros((3, 3))
        with pytest.raises(ValidationError):
            TriangleMesh(verts, np.array([[0, 1, 3]], dtype=np.int32))
        with pytest.raises(ValidationError):
            TriangleMesh(verts, np.array([[0, 1, -1]], dtype=np.int32))


class TestOccupancyGrid:
    def test_requires_cubic(self):
        with pytest.raises(ValidationError):
            OccupancyGrid(np.zeros((2, 2, 3), dtype=np.float32),
                          (-1, -1, -1), (1, 1, 1))

    def test_requires_min_below_max(self):
        with pytest.raises(ValidationError):
            OccupancyGrid(np.zeros((2, 2, 2), dtype=np.float32),
                          (1, -1, -1), (1, 1, 1))

    def test_axis_centers_endpoints(self):
        g = OccupancyGrid(np.zeros((5, 5, 5), dtype=np.float32),
                          (-1, -2, 0), (1, 2, 4))
        for axis, (lo, hi) in enumerate(zip((-1, -2, 0), (1, 2, 4))):
            centers = g.axis_centers(axis)
            assert centers[0] == lo
            assert centers[-1] == hi
            assert len(centers) == 5
        steps = np.diff(g.axis_centers(1))
        assert np.allclose(steps, steps[0])


class TestDatasetRecord:
    def make(self, **over):
        base = dict(record_id="r1", object_id="o1", category="chair",
                    focal_mm=50.0, camera={"fx": 100.0},
                    depth_path="d.pfm", mask_path="m.pgm", image_path="i.png",
                    attempts=1, prompts={"object": "a chair", "scene": "a chair in the x"})
        base.update(over)
        return DatasetRecord(**base)

    def test_round_trip(self):
        rec = self.make()
        assert DatasetRecord.from_json_dict(rec.to_json_dict()) == rec

    def test_empty_category_rejected(self):
        with pytest.raises(ValidationError):
            self.make(category="")

    def test_zero_attempts_rejected(self):
        with pytest.raises(ValidationError):
            self.make(attempts=0)
