"""Readers and writers for the file formats the toolkit exchanges.

Formats:

* PFM, grayscale ``Pf`` only, for float32 depth maps.  A negative scale
  marks little-endian data.  Scanlines are stored bottom-to-top on disk and
  flipped so that in-memory row 0 is the top row.
* PGM (``P5`` binary written, ``P2`` ascii also read) for 8-bit images and
  binary masks.
* PNG via Pillow for color images.
* PLY, ascii and binary_little_endian, float32 vertex coordinates; a file
  with a face element loads as a TriangleMesh, otherwise as a PointCloud.
* A fixed-header binary container for occupancy grids.
* JSON dataset manifests rendered through a canonical serializer so equal
  inputs always produce byte-identical files.
"""

from __future__ import annotations

import io as _stdio
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as _PILImage

from .core import (
    DatasetRecord,
    FloatRaster,
    FormatError,
    Image,
    Mask,
    OccupancyGrid,
    PointCloud,
    TriangleMesh,
    ValidationError,
)

GRID_MAGIC = b"OCCGRID1" + b"\x00" * 8

# ---------------------------------------------------------------------------
# canonical JSON


def _canon(value):
    """Render one JSON value; floats use %.9g so output is stable under
    serialize -> parse -> serialize."""
    if isinstance(value, bool) or isinstance(value, np.bool_):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            raise ValidationError(f"non-finite value {value!r} is not serializable")
        return format(value, ".9g")
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, np.ndarray):
        return _canon(value.tolist())
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_canon(v) for v in value) + "]"
    if isinstance(value, dict):
        parts = []
        for key in sorted(value):
            if not isinstance(key, str):
                raise ValidationError(f"JSON object keys must be strings, got {key!r}")
            parts.append(f"{json.dumps(key, ensure_ascii=False)}: {_canon(value[key])}")
        return "{" + ", ".join(parts) + "}"
    if value is None:
        return "null"
    raise ValidationError(f"cannot serialize {type(value).__name__} to JSON")


def canonical_json(value) -> str:
    """Deterministic JSON: sorted keys, floats at 9 significant digits."""
    return _canon(value)


def write_json(path, value) -> None:
    Path(path).write_text(canonical_json(value) + "\n", encoding="utf-8")


def read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None


# ---------------------------------------------------------------------------
# PFM


def pfm_to_bytes(raster: FloatRaster) -> bytes:
    data = np.asarray(raster.data, dtype=np.float32)
    bad = np.flatnonzero(~np.isfinite(data))
    if bad.size:
        raise ValidationError(f"non-finite depth sample at index {int(bad[0])}")
    header = f"Pf\n{data.shape[1]} {data.shape[0]}\n-1.0\n".encode("ascii")
    # scale -1.0: little-endian; rows written bottom-to-top
    return header + np.ascontiguousarray(data[::-1]).astype("<f4").tobytes()


def pfm_from_bytes(blob: bytes) -> FloatRaster:
    stream = _stdio.BytesIO(blob)

    def token() -> bytes:
        out = b""
        while True:
            ch = stream.read(1)
            if ch == b"":
                raise FormatError("truncated PFM header")
            if ch.isspace():
                if out:
                    return out
                continue
            out += ch

    kind = token()
    if kind == b"PF":
        raise FormatError("color PFM is not supported, expected grayscale 'Pf'")
    if kind != b"Pf":
        raise FormatError(f"not a PFM stream (magic {kind!r})")
    try:
        width = int(token())
        height = int(token())
        scale = float(token())
    except ValueError:
        raise FormatError("malformed PFM header") from None
    if width <= 0 or height <= 0:
        raise FormatError(f"bad PFM dimensions {width}x{height}")
    if scale == 0:
        raise FormatError("PFM scale must be nonzero")
    count = width * height
    raw = stream.read(4 * count)
    if len(raw) != 4 * count:
        raise FormatError("truncated PFM payload")
    endian = "<" if scale < 0 else ">"
    flat = np.frombuffer(raw, dtype=endian + "f4")
    bad = np.flatnonzero(~np.isfinite(flat))
    if bad.size:
        raise FormatError(f"non-finite depth sample at index {int(bad[0])}")
    # |scale| is a legacy brightness hint; only the sign is honored
    data = flat.reshape(height, width)[::-1]
    return FloatRaster(np.ascontiguousarray(data))


def write_pfm(path, raster: FloatRaster) -> None:
    Path(path).write_bytes(pfm_to_bytes(raster))


def read_pfm(path) -> FloatRaster:
    try:
        return pfm_from_bytes(Path(path).read_bytes())
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# PGM


def pgm_to_bytes(image: Image) -> bytes:
    if image.channels != 1:
        raise ValidationError("PGM stores grayscale only")
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    return header + image.data.tobytes()


def pgm_from_bytes(blob: bytes) -> Image:
    stream = _stdio.BytesIO(blob)

    def token() -> bytes:
        out = b""
        while True:
            ch = stream.read(1)
            if ch == b"":
                raise FormatError("truncated PGM header")
            if ch == b"#":
                while ch not in (b"", b"\n"):
                    ch = stream.read(1)
                continue
            if ch.isspace():
                if out:
                    return out
                continue
            out += ch

    kind = token()
    if kind not in (b"P5", b"P2"):
        raise FormatError(f"not a PGM stream (magic {kind[:8]!r})")
    try:
        width = int(token())
        height = int(token())
        maxval = int(token())
    except ValueError:
        raise FormatError("malformed PGM header") from None
    if width <= 0 or height <= 0:
        raise FormatError(f"bad PGM dimensions {width}x{height}")
    if not 0 < maxval <= 255:
        raise FormatError(f"unsupported PGM maxval {maxval}")
    count = width * height
    if kind == b"P5":
        raw = stream.read(count)
        if len(raw) != count:
            raise FormatError("truncated PGM payload")
        data = np.frombuffer(raw, dtype=np.uint8)
    else:
        try:
            values = [int(token()) for _ in range(count)]
        except FormatError:
            raise FormatError("truncated PGM payload") from None
        except ValueError:
            raise FormatError("malformed PGM sample") from None
        if max(values) > maxval or min(values) < 0:
            raise FormatError("PGM sample out of range")
        data = np.array(values, dtype=np.uint8)
    return Image(data.reshape(height, width).copy())


def write_pgm(path, image: Image) -> None:
    Path(path).write_bytes(pgm_to_bytes(image))


def read_pgm(path) -> Image:
    try:
        return pgm_from_bytes(Path(path).read_bytes())
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_mask(path, mask: Mask) -> None:
    """Persist a mask as PGM, foreground 255 / background 0."""
    write_pgm(path, Image(np.where(mask.bits, 255, 0).astype(np.uint8)))


def read_mask(path) -> Mask:
    """Load an 8-bit mask; values above 127 count as foreground."""
    return Mask(read_pgm(path).data > 127)


# ---------------------------------------------------------------------------
# PNG


def png_to_bytes(image: Image) -> bytes:
    buf = _stdio.BytesIO()
    _PILImage.fromarray(image.data).save(buf, format="PNG")
    return buf.getvalue()


def png_from_bytes(blob: bytes) -> Image:
    try:
        pil = _PILImage.open(_stdio.BytesIO(blob))
    except Exception as exc:
        raise FormatError(f"invalid PNG stream ({exc})") from None
    if pil.mode == "L":
        return Image(np.asarray(pil, dtype=np.uint8))
    return Image(np.asarray(pil.convert("RGB"), dtype=np.uint8))


def write_png(path, image: Image) -> None:
    Path(path).write_bytes(png_to_bytes(image))


def read_png(path) -> Image:
    try:
        return png_from_bytes(Path(path).read_bytes())
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# PLY

_PLY_SCALARS = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def _float32_repr(value: np.float32) -> str:
    # repr of the exact double promotes losslessly, so ascii round-trips
    return repr(float(value))


def write_ply(path, geometry, binary: bool = False) -> None:
    """Write a PointCloud or TriangleMesh; coordinates are stored float32."""
    if isinstance(geometry, TriangleMesh):
        faces = geometry.triangles
    elif isinstance(geometry, PointCloud):
        faces = None
    else:
        raise ValidationError(f"cannot write {type(geometry).__name__} as PLY")
    verts = np.asarray(geometry.points if faces is None else geometry.vertices,
                       dtype=np.float32)
    fmt = "binary_little_endian" if binary else "ascii"
    lines = [
        "ply",
        f"format {fmt} 1.0",
        f"element vertex {len(verts)}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if faces is not None:
        lines.append(f"element face {len(faces)}")
        lines.append("property list uchar int vertex_indices")
    lines.append("end_header")
    header = ("\n".join(lines) + "\n").encode("ascii")

    if binary:
        body = verts.astype("<f4").tobytes()
        if faces is not None:
            rec = np.zeros(len(faces), dtype=np.dtype([("n", "u1"), ("idx", "<i4", (3,))]))
            rec["n"] = 3
            rec["idx"] = faces
            body += rec.tobytes()
        Path(path).write_bytes(header + body)
        return

    rows = []
    for x, y, z in verts:
        rows.append(f"{_float32_repr(x)} {_float32_repr(y)} {_float32_repr(z)}\n")
    if faces is not None:
        for a, b, c in faces:
            rows.append(f"3 {a} {b} {c}\n")
    Path(path).write_bytes(header + "".join(rows).encode("ascii"))


def _parse_ply_header(stream):
    if stream.readline().strip() != b"ply":
        raise FormatError("not a PLY file")
    fmt = None
    elements = []  # (name, count, [(prop_name, kind)]) kind: scalar type or ("list", ct, it)
    while True:
        raw = stream.readline()
        if raw == b"":
            raise FormatError("truncated PLY header")
        words = raw.decode("ascii", "replace").split()
        if not words or words[0] == "comment":
            continue
        if words[0] == "format":
            if len(words) < 2:
                raise FormatError("malformed format line")
            fmt = words[1]
            if fmt == "binary_big_endian":
                raise FormatError("big-endian PLY is not supported")
            if fmt not in ("ascii", "binary_little_endian"):
                raise FormatError(f"unknown PLY format {fmt!r}")
        elif words[0] == "element":
            if len(words) != 3:
                raise FormatError("malformed element line")
            elements.append((words[1], int(words[2]), []))
        elif words[0] == "property":
            if not elements:
                raise FormatError("property before any element")
            if words[1] == "list":
                if len(words) != 5:
                    raise FormatError("malformed list property")
                elements[-1][2].append((words[4], ("list", words[2], words[3])))
            else:
                if len(words) != 3:
                    raise FormatError("malformed property line")
                elements[-1][2].append((words[2], words[1]))
        elif words[0] == "end_header":
            break
        else:
            raise FormatError(f"unexpected header line {words[0]!r}")
    if fmt is None:
        raise FormatError("PLY header missing format line")
    return fmt, elements


def _ply_scalar_dtype(name: str) -> str:
    try:
        return _PLY_SCALARS[name]
    except KeyError:
        raise FormatError(f"unknown PLY type {name!r}") from None


def ply_from_bytes(blob: bytes):
    stream = _stdio.BytesIO(blob)
    fmt, elements = _parse_ply_header(stream)
    for name, _, _ in elements:
        if name not in ("vertex", "face"):
            raise FormatError(f"unknown element {name!r}")

    vertices = None
    faces = None
    for name, count, props in elements:
        if name == "vertex":
            prop_names = [p for p, _ in props]
            for axis in ("x", "y", "z"):
                if axis not in prop_names:
                    raise FormatError(f"vertex element missing property {axis!r}")
            for prop, kind in props:
                if isinstance(kind, tuple):
                    raise FormatError(f"list property {prop!r} on vertex element")
            if fmt == "ascii":
                table = np.empty((count, len(props)), dtype=np.float64)
                for row in range(count):
                    line = stream.readline()
                    if line == b"":
                        raise FormatError("truncated vertex data")
                    parts = line.split()
                    if len(parts) != len(props):
                        raise FormatError(f"vertex row {row} has {len(parts)} values")
                    table[row] = [float(np.float32(float(t))) if _ply_scalar_dtype(k) == "f4"
                                  else float(t)
                                  for t, (_, k) in zip(parts, props)]
                vertices = table[:, [prop_names.index(a) for a in "xyz"]]
            else:
                dt = np.dtype([(p, "<" + _ply_scalar_dtype(k)) for p, k in props])
                raw = stream.read(dt.itemsize * count)
                if len(raw) != dt.itemsize * count:
                    raise FormatError("truncated vertex data")
                rec = np.frombuffer(raw, dtype=dt)
                vertices = np.stack([rec[a].astype(np.float64) for a in "xyz"], axis=1)
        else:  # face
            if len(props) != 1 or not isinstance(props[0][1], tuple):
                raise FormatError("face element must have a single list property")
            _, (_, count_t, index_t) = props[0]
            cdt = "<" + _ply_scalar_dtype(count_t)
            idt = "<" + _ply_scalar_dtype(index_t)
            faces = np.empty((count, 3), dtype=np.int64)
            if fmt == "ascii":
                for row in range(count):
                    line = stream.readline()
                    if line == b"":
                        raise FormatError("truncated face data")
                    parts = [int(t) for t in line.split()]
                    if not parts or parts[0] != 3:
                        raise FormatError(f"face {row} is not a triangle")
                    if len(parts) != 4:
                        raise FormatError(f"face row {row} has {len(parts) - 1} indices")
                    faces[row] = parts[1:]
            else:
                csize = np.dtype(cdt).itemsize
                isize = np.dtype(idt).itemsize
                for row in range(count):
                    head = stream.read(csize)
                    if len(head) != csize:
                        raise FormatError("truncated face data")
                    n = int(np.frombuffer(head, dtype=cdt)[0])
                    if n != 3:
                        raise FormatError(f"face {row} is not a triangle")
                    body = stream.read(isize * 3)
                    if len(body) != isize * 3:
                        raise FormatError("truncated face data")
                    faces[row] = np.frombuffer(body, dtype=idt)
    if vertices is None:
        raise FormatError("PLY file has no vertex element")
    if faces is None:
        return PointCloud(vertices)
    return TriangleMesh(vertices, faces)


def read_ply(path):
    """Load a PLY file as TriangleMesh (face element present) or PointCloud."""
    try:
        return ply_from_bytes(Path(path).read_bytes())
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# occupancy grid container


def grid_to_bytes(grid: OccupancyGrid) -> bytes:
    n = grid.resolution
    head = GRID_MAGIC + struct.pack("<I", n)
    head += struct.pack("<3f", *grid.bounds_min)
    head += struct.pack("<3f", *grid.bounds_max)
    # x varies fastest on disk, so dump the (ix, iy, iz) array Fortran-style
    return head + np.asfortranarray(grid.values.astype("<f4")).tobytes(order="F")


def grid_from_bytes(blob: bytes) -> OccupancyGrid:
    if len(blob) < len(GRID_MAGIC) + 4 + 24:
        raise FormatError("truncated grid header")
    if blob[: len(GRID_MAGIC)] != GRID_MAGIC:
        raise FormatError("bad grid magic")
    off = len(GRID_MAGIC)
    (n,) = struct.unpack_from("<I", blob, off)
    off += 4
    lo = struct.unpack_from("<3f", blob, off)
    off += 12
    hi = struct.unpack_from("<3f", blob, off)
    off += 12
    if n == 0:
        raise FormatError("grid resolution must be positive")
    expect = n * n * n * 4
    payload = blob[off:]
    if len(payload) < expect:
        raise FormatError("truncated grid payload")
    if len(payload) > expect:
        raise FormatError(f"{len(payload) - expect} trailing bytes after grid payload")
    flat = np.frombuffer(payload, dtype="<f4")
    values = flat.reshape((n, n, n), order="F")
    return OccupancyGrid(np.ascontiguousarray(values), lo, hi)


def write_occupancy_grid(path, grid: OccupancyGrid) -> None:
    Path(path).write_bytes(grid_to_bytes(grid))


def read_occupancy_grid(path) -> OccupancyGrid:
    try:
        return grid_from_bytes(Path(path).read_bytes())
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# dataset manifest


@dataclass
class SynthManifest:
    """Top-level description of one synthesized dataset: the driving seed, a
    hex digest of the pipeline configuration, and the accepted records."""

    seed: int
    pipeline_config_hash: str
    records: list = field(default_factory=list)

    def __post_init__(self):
        _check_unique_ids(self.records)

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "pipeline_config_hash": self.pipeline_config_hash,
            "records": [r.to_json_dict() for r in self.records],
        }


def _check_unique_ids(records) -> None:
    seen = set()
    for rec in records:
        if rec.record_id in seen:
            raise ValidationError(f"duplicate record ID {rec.record_id!r}")
        seen.add(rec.record_id)


def write_manifest(path, manifest: SynthManifest) -> None:
    """Write a manifest; record IDs must be unique and every referenced file
    (resolved against the manifest's directory) must exist."""
    _check_unique_ids(manifest.records)
    root = Path(path).parent
    for rec in manifest.records:
        for p in (rec.depth_path, rec.mask_path, rec.image_path):
            target = Path(p) if Path(p).is_absolute() else root / p
            if not target.exists():
                raise ValidationError(
                    f"record {rec.record_id!r} references missing file {p!r}")
    write_json(path, manifest.to_json_dict())


def read_manifest(path) -> SynthManifest:
    doc = read_json(path)
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: manifest must be a JSON object")
    try:
        records = [DatasetRecord.from_json_dict(r) for r in doc["records"]]
        return SynthManifest(seed=int(doc["seed"]),
                             pipeline_config_hash=str(doc["pipeline_config_hash"]),
                             records=records)
    except KeyError as exc:
        raise FormatError(f"{path}: manifest missing key {exc}") from None
