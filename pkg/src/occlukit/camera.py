"""Pinhole camera model: intrinsics, unprojection, projection, normalization.

Pixel (i, j) means column i, row j with the center of the top-left pixel at
(0, 0).  The camera looks down +z, +x right, +y down.  Unprojection maps a
depth sample d at pixel (i, j) to

    ((i - cx) * d / fx, (j - cy) * d / fy, d)

exactly in that order of operations, in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FloatRaster, Mask, PointCloud, ValidationError

DEFAULT_ETA = 0.5


@dataclass
class UnprojectConfig:
    """Soft-mask cutoff for unprojection; a pixel is valid when its mask
    value is >= eta."""

    eta: float = DEFAULT_ETA

    def __post_init__(self):
        if not 0 < self.eta < 1:
            raise ValidationError(f"eta must lie in (0, 1), got {self.eta}")


@dataclass
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("image dimensions must be positive")

    def to_json_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_json_dict(cls, d: dict) -> "CameraIntrinsics":
        try:
            return cls(fx=float(d["fx"]), fy=float(d["fy"]), cx=float(d["cx"]),
                       cy=float(d["cy"]), width=int(d["width"]), height=int(d["height"]))
        except KeyError as exc:
            raise ValidationError(f"intrinsics missing key {exc}") from None


@dataclass
class IntrinsicsParams:
    """Normalized intrinsics: a focal multiplier and principal-point shifts
    expressed as fractions of the image dimensions."""

    focal_scale: float
    pp_shift_x: float = 0.0
    pp_shift_y: float = 0.0

    def __post_init__(self):
        if self.focal_scale <= 0:
            raise ValidationError(f"focal_scale must be positive, got {self.focal_scale}")
        if abs(self.pp_shift_x) > 0.5 or abs(self.pp_shift_y) > 0.5:
            raise ValidationError(
                f"principal-point shifts must lie in [-0.5, 0.5], got "
                f"({self.pp_shift_x}, {self.pp_shift_y})")


def build_intrinsics(params: IntrinsicsParams, width: int, height: int,
                     base_focal: float | None = None) -> CameraIntrinsics:
    """Construct pixel-unit intrinsics; base_focal defaults to the image width."""
    if base_focal is None:
        base_focal = float(width)
    f = params.focal_scale * base_focal
    return CameraIntrinsics(
        fx=f, fy=f,
        cx=width / 2 + params.pp_shift_x * width,
        cy=height / 2 + params.pp_shift_y * height,
        width=width, height=height)


@dataclass
class PointMap:
    """Per-pixel 3-D points, (h, w, 3) float64, with a validity mask.
    Invalid pixels hold (0, 0, 0)."""

    points: np.ndarray
    valid: Mask

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 3 or pts.shape[2] != 3:
            raise ValidationError(f"point map must be (h, w, 3), got {pts.shape}")
        if pts.shape[:2] != (self.valid.height, self.valid.width):
            raise ValidationError("point map and validity mask disagree on shape")
        self.points = np.ascontiguousarray(pts)

    @property
    def height(self) -> int:
        return self.points.shape[0]

    @property
    def width(self) -> int:
        return self.points.shape[1]


def _mask_bits(mask, shape, eta: float) -> np.ndarray:
    if mask is None:
        return np.ones(shape, dtype=bool)
    if isinstance(mask, Mask):
        bits = mask.bits
    elif isinstance(mask, FloatRaster):
        bits = mask.data >= eta
    else:
        bits = np.asarray(mask)
        if bits.dtype != bool:
            bits = np.asarray(bits, dtype=np.float64) >= eta
    if bits.shape != shape:
        raise ValidationError(f"mask shape {bits.shape} does not match raster {shape}")
    return bits


def unproject(depth: FloatRaster, intrinsics: CameraIntrinsics, mask=None,
              eta=DEFAULT_ETA) -> PointMap:
    """Lift a depth map to a camera-frame point map.

    A pixel is valid when its mask value is >= eta (boolean masks pass
    through; a missing mask marks every pixel valid).  Depth must be
    strictly positive at every valid pixel.
    """
    if isinstance(eta, UnprojectConfig):
        eta = eta.eta
    if (depth.height, depth.width) != (intrinsics.height, intrinsics.width):
        raise ValidationError(
            f"depth {depth.width}x{depth.height} does not match intrinsics "
            f"{intrinsics.width}x{intrinsics.height}")
    bits = _mask_bits(mask, depth.data.shape, eta)
    z = depth.data.astype(np.float64)
    bad = np.argwhere(bits & (z <= 0))
    if len(bad):
        j, i = bad[0]
        raise ValidationError(
            f"non-positive depth {z[j, i]} under valid mask at pixel ({i}, {j})")
    ii = np.arange(depth.width, dtype=np.float64)[None, :]
    jj = np.arange(depth.height, dtype=np.float64)[:, None]
    pts = np.zeros((depth.height, depth.width, 3), dtype=np.float64)
    pts[..., 0] = (ii - intrinsics.cx) * z / intrinsics.fx
    pts[..., 1] = (jj - intrinsics.cy) * z / intrinsics.fy
    pts[..., 2] = z
    pts[~bits] = 0.0
    return PointMap(pts, Mask(bits))


def project(points, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Project camera-frame points to pixel coordinates, (n, 2) float64 (u, v).
    Points must have strictly positive depth."""
    pts = points.points if isinstance(points, PointCloud) else np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValidationError(f"expected (n, 3) points, got shape {pts.shape}")
    z = pts[:, 2]
    bad = np.flatnonzero(z <= 0)
    if bad.size:
        raise ValidationError(f"point {int(bad[0])} has non-positive depth {z[bad[0]]}")
    uv = np.empty((pts.shape[0], 2), dtype=np.float64)
    uv[:, 0] = intrinsics.fx * pts[:, 0] / z + intrinsics.cx
    uv[:, 1] = intrinsics.fy * pts[:, 1] / z + intrinsics.cy
    return uv


def pointmap_to_cloud(pm: PointMap) -> PointCloud:
    """Valid points in row-major pixel order."""
    return PointCloud(pm.points[pm.valid.bits])


@dataclass
class NormalizationTransform:
    """Invertible shift-and-scale: normalized = (p - centroid) / scale."""

    centroid: np.ndarray
    scale: float

    def __post_init__(self):
        c = np.asarray(self.centroid, dtype=np.float64).reshape(3)
        if self.scale <= 0 or not np.isfinite(self.scale):
            raise ValidationError(f"scale must be positive and finite, got {self.scale}")
        self.centroid = c
        self.scale = float(self.scale)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.centroid) / self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) * self.scale + self.centroid

    def to_json_dict(self) -> dict:
        return {"centroid": [float(v) for v in self.centroid], "scale": self.scale}


_CONVENTIONS = ("ball", "rms", "bbox")


def normalize_points(obj, convention: str = "ball"):
    """Center a point set on its centroid and scale it to unit size.

    Conventions: "ball" makes the farthest point sit at distance 1, "rms"
    makes the root-mean-square distance 1, "bbox" makes the largest bounding
    box half-extent 1.  Returns (normalized, NormalizationTransform); point
    maps keep their invalid pixels at (0, 0, 0).
    """
    if convention not in _CONVENTIONS:
        raise ValidationError(f"unknown convention {convention!r}, expected one of {_CONVENTIONS}")
    if isinstance(obj, PointMap):
        pts = obj.points[obj.valid.bits]
    elif isinstance(obj, PointCloud):
        pts = obj.points
    else:
        pts = np.asarray(obj, dtype=np.float64)
    if pts.size == 0:
        raise ValidationError("cannot normalize an empty point set")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    dist = np.linalg.norm(centered, axis=1)
    if convention == "ball":
        scale = float(dist.max())
    elif convention == "rms":
        scale = float(np.sqrt(np.mean(dist ** 2)))
    else:
        scale = float(0.5 * (pts.max(axis=0) - pts.min(axis=0)).max())
    if scale == 0:
        raise ValidationError("degenerate point set: all points coincide")
    tf = NormalizationTransform(centroid, scale)
    if isinstance(obj, PointMap):
        out = np.zeros_like(obj.points)
        out[obj.valid.bits] = centered / scale
        return PointMap(out, obj.valid.copy()), tf
    if isinstance(obj, PointCloud):
        return PointCloud(centered / scale), tf
    return centered / scale, tf


def read_intrinsics(path) -> CameraIntrinsics:
    from .io import read_json
    return CameraIntrinsics.from_json_dict(read_json(path))


def write_intrinsics(path, intrinsics: CameraIntrinsics) -> None:
    from .io import write_json
    write_json(path, intrinsics.to_json_dict())
