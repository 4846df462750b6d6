"""Shared container types and exceptions.

Conventions used throughout the package:

* Rasters (images, depth maps, masks) are numpy arrays in row-major
  ``(height, width[, channels])`` layout.  Pixel ``(i, j)`` means column i,
  row j, so array access is ``data[j, i]``.  Pixel centers sit at integer
  coordinates.
* Point sets are ``(n, 3)`` float64 arrays with columns x, y, z.
* The camera looks down +z; +x is right, +y is down, matching the raster axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class OccluKitError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(OccluKitError):
    """Input data or parameters violate a documented precondition."""


class FormatError(ValidationError):
    """A file or byte stream does not conform to its format."""


class GeneratorError(OccluKitError):
    """A generator backend failed to produce an image."""


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValidationError(f"expected (n, 3) points, got shape {pts.shape}")
    return np.ascontiguousarray(pts)


@dataclass
class Image:
    """8-bit image, grayscale ``(h, w)`` or color ``(h, w, 3)``."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.dtype != np.uint8:
            raise ValidationError(f"image data must be uint8, got {arr.dtype}")
        if arr.ndim == 3 and arr.shape[2] == 1:
            arr = arr[:, :, 0]
        if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
            raise ValidationError(f"image shape must be (h, w) or (h, w, 3), got {arr.shape}")
        self.data = np.ascontiguousarray(arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else self.data.shape[2]

    def copy(self) -> "Image":
        return Image(self.data.copy())


@dataclass
class FloatRaster:
    """Single-channel float32 raster such as a depth map or probability map."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 2:
            raise ValidationError(f"raster must be 2-D, got shape {arr.shape}")
        self.data = np.ascontiguousarray(arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass
class Mask:
    """Boolean raster; True marks foreground."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.ndim != 2:
            raise ValidationError(f"mask must be 2-D, got shape {arr.shape}")
        self.bits = np.ascontiguousarray(arr.astype(bool))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def count(self) -> int:
        return int(self.bits.sum())

    def copy(self) -> "Mask":
        return Mask(self.bits.copy())

    @classmethod
    def full(cls, height: int, width: int, value: bool = True) -> "Mask":
        return cls(np.full((height, width), value, dtype=bool))


@dataclass
class PointCloud:
    """Unordered set of 3-D points, ``(n, 3)`` float64."""

    points: np.ndarray

    def __post_init__(self):
        self.points = _as_points(self.points)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class TriangleMesh:
    """Indexed triangle mesh: float64 vertices, int32 vertex triples."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        self.vertices = _as_points(self.vertices)
        tris = np.asarray(self.triangles, dtype=np.int32)
        if tris.size == 0:
            tris = tris.reshape(0, 3)
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise ValidationError(f"triangles must be (t, 3), got shape {tris.shape}")
        if tris.size and (tris.min() < 0 or tris.max() >= len(self.vertices)):
            raise ValidationError("triangle index out of range")
        self.triangles = np.ascontiguousarray(tris)

    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    def num_triangles(self) -> int:
        return self.triangles.shape[0]


@dataclass
class OccupancyGrid:
    """Cubic scalar field sampled at voxel centers.

    ``values[ix, iy, iz]`` is the sample at center ``bounds_min + index *
    (bounds_max - bounds_min) / (n - 1)`` per axis; the outermost centers lie
    exactly on the bounds.
    """

    values: np.ndarray
    bounds_min: tuple
    bounds_max: tuple

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float32)
        if vals.ndim != 3 or len(set(vals.shape)) != 1:
            raise ValidationError(f"grid values must be cubic (n, n, n), got {vals.shape}")
        self.values = np.ascontiguousarray(vals)
        lo = tuple(float(v) for v in self.bounds_min)
        hi = tuple(float(v) for v in self.bounds_max)
        if len(lo) != 3 or len(hi) != 3:
            raise ValidationError("bounds must be 3-vectors")
        if not all(h > l for l, h in zip(lo, hi)):
            raise ValidationError(f"bounds_max must exceed bounds_min, got {lo} .. {hi}")
        self.bounds_min = lo
        self.bounds_max = hi

    @property
    def resolution(self) -> int:
        return self.values.shape[0]

    def axis_centers(self, axis: int) -> np.ndarray:
        """Sample-center coordinates along one axis (length n, float64)."""
        n = self.resolution
        lo, hi = self.bounds_min[axis], self.bounds_max[axis]
        if n == 1:
            return np.array([lo], dtype=np.float64)
        return lo + np.arange(n, dtype=np.float64) * ((hi - lo) / (n - 1))


@dataclass
class DatasetRecord:
    """One synthesized training sample as persisted in a dataset manifest.

    ``camera`` is kept as a plain dict (intrinsics plus pose metadata) so the
    manifest round-trips byte-exactly regardless of which keys a rig emits.
    ``attempts`` records how many generator calls the accepted image took.
    """

    record_id: str
    object_id: str
    category: str
    focal_mm: float
    camera: dict
    depth_path: str
    mask_path: str
    image_path: str
    attempts: int
    prompts: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.category:
            raise ValidationError(f"record {self.record_id!r} has an empty category")
        if self.attempts < 1:
            raise ValidationError(f"record {self.record_id!r} has attempts < 1")

    def to_json_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "object_id": self.object_id,
            "category": self.category,
            "focal_mm": self.focal_mm,
            "camera": self.camera,
            "depth_path": self.depth_path,
            "mask_path": self.mask_path,
            "image_path": self.image_path,
            "attempts": self.attempts,
            "prompts": self.prompts,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "DatasetRecord":
        try:
            return cls(
                record_id=d["record_id"],
                object_id=d["object_id"],
                category=d["category"],
                focal_mm=float(d["focal_mm"]),
                camera=d["camera"],
                depth_path=d["depth_path"],
                mask_path=d["mask_path"],
                image_path=d["image_path"],
                attempts=int(d["attempts"]),
                prompts=dict(d.get("prompts", {})),
            )
        except KeyError as exc:
            raise FormatError(f"dataset record missing key {exc}") from None
