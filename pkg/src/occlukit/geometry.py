"""Scalar fields, isosurface extraction, and mesh utilities.

Grids store samples at voxel centers; the outermost centers lie exactly on
the grid bounds (see OccupancyGrid).  Marching cubes walks the (n-1)^3 cells
between centers, emits one welded vertex per sign-crossing cell edge, and
triangulates each cell through the classic 256-case tables.  Triangles come
out with outward orientation (counterclockwise seen from outside) around
regions where the field exceeds the isolevel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._mc_tables import EDGE_TABLE, TRI_TABLE
from .core import OccupancyGrid, PointCloud, TriangleMesh, ValidationError
from .io import read_occupancy_grid, write_occupancy_grid  # noqa: F401  (re-export)

DEFAULT_ISOLEVEL = 0.5
DEFAULT_SAMPLE_COUNT = 10000

# cube corner k sits at cell + CORNER_OFFSETS[k]
CORNER_OFFSETS = (
    (0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
    (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1),
)

# cell edge -> (axis, lower-corner offset) of the grid edge it lies on
EDGE_LOOKUP = (
    (0, (0, 0, 0)),  # corners 0-1
    (1, (1, 0, 0)),  # corners 1-2
    (0, (0, 1, 0)),  # corners 3-2
    (1, (0, 0, 0)),  # corners 0-3
    (0, (0, 0, 1)),  # corners 4-5
    (1, (1, 0, 1)),  # corners 5-6
    (0, (0, 1, 1)),  # corners 7-6
    (1, (0, 0, 1)),  # corners 4-7
    (2, (0, 0, 0)),  # corners 0-4
    (2, (1, 0, 0)),  # corners 1-5
    (2, (1, 1, 0)),  # corners 2-6
    (2, (0, 1, 0)),  # corners 3-7
)


# ---------------------------------------------------------------------------
# analytic fields


@dataclass
class AnalyticField:
    """Closed-form occupancy field over R^3, valued in [0, 1].

    kind "sphere" and "box" are indicators of the solid (1 inside); a
    positive smooth_width replaces the hard step with a logistic falloff of
    the signed distance, which keeps the 0.5 level set on the exact surface.
    kind "union" takes the pointwise maximum of its children.
    """

    kind: str
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.0
    half_extents: tuple = (0.0, 0.0, 0.0)
    children: tuple = ()
    smooth_width: float = 0.0

    @classmethod
    def sphere(cls, center=(0.0, 0.0, 0.0), radius=0.5, smooth_width=0.0):
        if radius <= 0:
            raise ValidationError(f"sphere radius must be positive, got {radius}")
        return cls(kind="sphere", center=tuple(center), radius=float(radius),
                   smooth_width=float(smooth_width))

    @classmethod
    def box(cls, center=(0.0, 0.0, 0.0), half_extents=(0.5, 0.5, 0.5), smooth_width=0.0):
        if min(half_extents) <= 0:
            raise ValidationError(f"box half-extents must be positive, got {half_extents}")
        return cls(kind="box", center=tuple(center), half_extents=tuple(half_extents),
                   smooth_width=float(smooth_width))

    @classmethod
    def union(cls, *children):
        if not children:
            raise ValidationError("union needs at least one child field")
        return cls(kind="union", children=tuple(children))

    def evaluate(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValidationError(f"expected (n, 3) points, got shape {pts.shape}")
        if self.kind == "union":
            return np.max([c.evaluate(pts) for c in self.children], axis=0)
        if self.kind == "sphere":
            sd = np.linalg.norm(pts - np.asarray(self.center), axis=1) - self.radius
        elif self.kind == "box":
            sd = (np.abs(pts - np.asarray(self.center)) - np.asarray(self.half_extents)).max(axis=1)
        else:
            raise ValidationError(f"unknown field kind {self.kind!r}")
        if self.smooth_width > 0:
            return 1.0 / (1.0 + np.exp(sd / self.smooth_width))
        return (sd <= 0).astype(np.float64)


def eval_grid(field, resolution: int,
              bounds=((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))) -> OccupancyGrid:
    """Sample a field (AnalyticField or callable over (n, 3) points) at the
    voxel centers of a cubic grid."""
    if resolution < 2:
        raise ValidationError(f"grid resolution must be at least 2, got {resolution}")
    lo, hi = bounds
    grid = OccupancyGrid(np.zeros((resolution,) * 3, dtype=np.float32), lo, hi)
    xs, ys, zs = (grid.axis_centers(a) for a in range(3))
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    fn = field.evaluate if isinstance(field, AnalyticField) else field
    vals = np.asarray(fn(pts), dtype=np.float64).reshape((resolution,) * 3)
    grid.values = vals.astype(np.float32)
    return grid


# ---------------------------------------------------------------------------
# marching cubes


def marching_cubes(grid: OccupancyGrid, isolevel: float = DEFAULT_ISOLEVEL) -> TriangleMesh:
    """Extract the isosurface of a sampled field as a welded triangle mesh.

    A corner counts as inside the surface when its value is >= isolevel, so
    interpolation parameters agree between the two cells sharing an edge and
    the mesh is watertight wherever the surface stays off the grid boundary.
    Triangles with a repeated vertex index are dropped.
    """
    n = grid.resolution
    if n < 2:
        raise ValidationError(f"marching cubes needs resolution >= 2, got {n}")
    v = grid.values.astype(np.float64)
    # bit k set when corner k is strictly below the isolevel; the 256-case
    # tables then orient triangles outward around the >= isolevel region
    below = v < isolevel

    case = np.zeros((n - 1,) * 3, dtype=np.uint16)
    m = n - 1
    for k, (ox, oy, oz) in enumerate(CORNER_OFFSETS):
        case |= below[ox:ox + m, oy:oy + m, oz:oz + m].astype(np.uint16) << k
    active = (case != 0) & (case != 255)
    if not active.any():
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int32))

    axes_centers = [grid.axis_centers(a) for a in range(3)]

    # one shared vertex per grid edge whose endpoints straddle the isolevel
    edge_ids = []
    vertex_chunks = []
    next_id = 0
    for axis in range(3):
        sl_lo = [slice(None)] * 3
        sl_hi = [slice(None)] * 3
        sl_lo[axis] = slice(0, n - 1)
        sl_hi[axis] = slice(1, n)
        lo_vals = v[tuple(sl_lo)]
        hi_vals = v[tuple(sl_hi)]
        crossing = below[tuple(sl_lo)] != below[tuple(sl_hi)]
        ids = np.full(crossing.shape, -1, dtype=np.int64)
        count = int(crossing.sum())
        ids[crossing] = np.arange(next_id, next_id + count)
        next_id += count
        edge_ids.append(ids)

        coords = np.argwhere(crossing)
        va = lo_vals[crossing]
        vb = hi_vals[crossing]
        t = (isolevel - va) / (vb - va)
        pos = np.empty((count, 3), dtype=np.float64)
        for a in range(3):
            c = axes_centers[a][coords[:, a]]
            if a == axis:
                step = axes_centers[a][coords[:, a] + 1] - c
                pos[:, a] = c + t * step
            else:
                pos[:, a] = c
        vertex_chunks.append(pos)

    vertices = np.concatenate(vertex_chunks, axis=0)

    # gather triangles case by case so the inner work stays vectorized
    tri_chunks = []
    for c in np.unique(case[active]):
        row = TRI_TABLE[int(c)]
        if not row:
            continue
        cells = np.argwhere(case == c)
        for k in range(0, len(row), 3):
            tri = np.empty((len(cells), 3), dtype=np.int64)
            for j, e in enumerate(row[k:k + 3]):
                axis, (ox, oy, oz) = EDGE_LOOKUP[e]
                tri[:, j] = edge_ids[axis][cells[:, 0] + ox, cells[:, 1] + oy, cells[:, 2] + oz]
            tri_chunks.append(tri)
    triangles = np.concatenate(tri_chunks, axis=0)
    keep = ((triangles[:, 0] != triangles[:, 1])
            & (triangles[:, 1] != triangles[:, 2])
            & (triangles[:, 0] != triangles[:, 2]))
    triangles = triangles[keep]
    return TriangleMesh(vertices, triangles.astype(np.int32))


# ---------------------------------------------------------------------------
# mesh utilities


def triangle_areas(mesh: TriangleMesh) -> np.ndarray:
    a = mesh.vertices[mesh.triangles[:, 0]]
    b = mesh.vertices[mesh.triangles[:, 1]]
    c = mesh.vertices[mesh.triangles[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def surface_area(mesh: TriangleMesh) -> float:
    return float(triangle_areas(mesh).sum())


def signed_volume(mesh: TriangleMesh) -> float:
    """Divergence-theorem volume; positive when triangles wind outward."""
    a = mesh.vertices[mesh.triangles[:, 0]]
    b = mesh.vertices[mesh.triangles[:, 1]]
    c = mesh.vertices[mesh.triangles[:, 2]]
    return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


def edge_incidence(mesh: TriangleMesh) -> dict:
    """Count of incident triangles per undirected edge (a, b), a < b."""
    tris = mesh.triangles
    edges = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]], axis=0)
    edges = np.sort(edges, axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    return {(int(a), int(b)): int(c) for (a, b), c in zip(uniq, counts)}


def is_watertight(mesh: TriangleMesh) -> bool:
    """True when every edge borders exactly two triangles (and the mesh is
    nonempty)."""
    if mesh.num_triangles() == 0:
        return False
    tris = mesh.triangles
    edges = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]], axis=0)
    edges = np.sort(edges, axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return bool((counts == 2).all())


def euler_characteristic(mesh: TriangleMesh) -> int:
    """V - E + F with E counted over distinct undirected edges."""
    tris = mesh.triangles
    edges = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]], axis=0)
    edges = np.sort(edges, axis=1)
    num_edges = len(np.unique(edges, axis=0))
    return mesh.num_vertices() - num_edges + mesh.num_triangles()


# ---------------------------------------------------------------------------
# surface sampling


def sample_surface(mesh: TriangleMesh, count: int = DEFAULT_SAMPLE_COUNT,
                   seed: int = 0) -> PointCloud:
    """Draw exactly `count` points on the surface, triangle choice
    proportional to area, uniform within each triangle via the square-root
    barycentric map."""
    if count < 0:
        raise ValidationError(f"sample count must be non-negative, got {count}")
    areas = triangle_areas(mesh)
    total = float(areas.sum())
    if total <= 0:
        raise ValidationError("mesh has zero total surface area")
    if count == 0:
        return PointCloud(np.zeros((0, 3)))
    rng = np.random.default_rng(seed)
    cum = np.cumsum(areas)
    pick = np.searchsorted(cum, rng.random(count) * total, side="right")
    pick = np.minimum(pick, len(areas) - 1)
    u = rng.random(count)
    w = rng.random(count)
    a = mesh.vertices[mesh.triangles[pick, 0]]
    b = mesh.vertices[mesh.triangles[pick, 1]]
    c = mesh.vertices[mesh.triangles[pick, 2]]
    su = np.sqrt(u)[:, None]
    w = w[:, None]
    pts = (1.0 - su) * a + su * (1.0 - w) * b + su * w * c
    return PointCloud(pts)


def _table_self_check() -> None:
    # every case's triangle edges must match its crossing-edge bitmask
    for c in range(256):
        used = set(TRI_TABLE[c])
        mask = {e for e in range(12) if EDGE_TABLE[c] & (1 << e)}
        if used != mask:
            raise AssertionError(f"triangulation tables inconsistent at case {c}")


_table_self_check()
