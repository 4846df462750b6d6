"""Copy-paste occlusion augmentation.

A plan drawn from a seeded generator places 0-2 scaled occluders from a
library of cut-out objects over a base sample.  Applying the plan yields the
composited image plus the visible-object and occluder masks, which partition
the original object mask together with the hidden region.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Image, Mask, ValidationError
from .maskops import composite, resize_nearest, shift_mask

FOCAL_TOLERANCE_MM = 10.0
SCALE_RANGE = (0.4, 0.6)
MAX_OCCLUDERS = 2


@dataclass
class OccluderEntry:
    """A cut-out object usable as an occluder: its pixels, its silhouette,
    and the focal length it was rendered with."""

    record_id: str
    image: Image
    mask: Mask
    focal_mm: float

    def __post_init__(self):
        if (self.image.height, self.image.width) != (self.mask.height, self.mask.width):
            raise ValidationError(f"entry {self.record_id!r}: image and mask shapes differ")


@dataclass
class OccluderLibrary:
    entries: list

    def __post_init__(self):
        ids = [e.record_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate record_id in occluder library")
        self._by_id = {e.record_id: e for e in self.entries}

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, record_id: str) -> OccluderEntry:
        try:
            return self._by_id[record_id]
        except KeyError:
            raise ValidationError(f"unknown occluder record {record_id!r}") from None


@dataclass
class OccluderPick:
    record_id: str
    scale: float
    offset: tuple  # (dx, dy): where the scaled cut-out's origin lands


@dataclass
class OccluderPlan:
    seed: int
    picks: list = field(default_factory=list)
    candidates_empty: bool = False

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "candidates_empty": self.candidates_empty,
            "picks": [
                {"record_id": p.record_id, "scale": p.scale,
                 "offset": [int(p.offset[0]), int(p.offset[1])]}
                for p in self.picks
            ],
        }


@dataclass
class AugmentedSample:
    image: Image
    visible_mask: Mask
    occluder_mask: Mask
    plan: OccluderPlan


def scaled_size(height: int, width: int, scale: float) -> tuple:
    """Integer occluder size after scaling; never collapses below 1 px."""
    return max(1, int(round(height * scale))), max(1, int(round(width * scale)))


def sample_plan(library: OccluderLibrary, target_focal_mm: float,
                frame_height: int, frame_width: int, seed: int,
                focal_tol_mm: float = FOCAL_TOLERANCE_MM,
                scale_range: tuple = SCALE_RANGE) -> OccluderPlan:
    """Draw a placement plan.

    The occluder count is uniform over {0, .., MAX_OCCLUDERS}.  Candidates
    are the library entries whose focal length is within focal_tol_mm of the
    target; an empty candidate set forces the count to 0 and flags the plan.
    Each pick draws, in order: a candidate, a scale uniform over scale_range,
    and an integer center uniform over the frame, so equal seeds give equal
    plans regardless of the caller.
    """
    if frame_height < 1 or frame_width < 1:
        raise ValidationError("frame dimensions must be positive")
    lo, hi = scale_range
    if not 0 < lo <= hi:
        raise ValidationError(f"bad scale range {scale_range}")
    rng = np.random.default_rng(seed)
    count = int(rng.integers(0, MAX_OCCLUDERS + 1))
    candidates = [e for e in library.entries
                  if abs(e.focal_mm - target_focal_mm) <= focal_tol_mm]
    if not candidates:
        return OccluderPlan(seed=seed, picks=[], candidates_empty=True)
    picks = []
    for _ in range(count):
        entry = candidates[int(rng.integers(0, len(candidates)))]
        scale = float(rng.uniform(lo, hi))
        sh, sw = scaled_size(entry.image.height, entry.image.width, scale)
        cx = int(rng.integers(0, frame_width))
        cy = int(rng.integers(0, frame_height))
        picks.append(OccluderPick(record_id=entry.record_id, scale=scale,
                                  offset=(cx - sw // 2, cy - sh // 2)))
    return OccluderPlan(seed=seed, picks=picks)


def apply_copy_paste(image: Image, object_mask: Mask, plan: OccluderPlan,
                     library: OccluderLibrary) -> AugmentedSample:
    """Composite the planned occluders over a sample.

    Guarantees on the output masks: visible = object & ~occluder, so
    visible and (object & occluder) partition the object mask, and the
    visible mask never intersects the occluder mask.
    """
    if (image.height, image.width) != (object_mask.height, object_mask.width):
        raise ValidationError("image and object mask disagree on shape")
    out = image.copy()
    occluder_bits = np.zeros((image.height, image.width), dtype=bool)
    for pick in plan.picks:
        entry = library.get(pick.record_id)
        if entry.image.channels != image.channels:
            raise ValidationError(
                f"occluder {pick.record_id!r} has {entry.image.channels} channels, "
                f"base image has {image.channels}")
        sh, sw = scaled_size(entry.image.height, entry.image.width, pick.scale)
        fg = resize_nearest(entry.image, sh, sw)
        fg_mask = resize_nearest(entry.mask, sh, sw)
        out, _ = composite(out, object_mask, fg, fg_mask, pick.offset)
        occluder_bits |= shift_mask(fg_mask, pick.offset, image.height, image.width).bits
    occluder_mask = Mask(occluder_bits)
    visible_mask = Mask(object_mask.bits & ~occluder_bits)
    return AugmentedSample(image=out, visible_mask=visible_mask,
                           occluder_mask=occluder_mask, plan=plan)


def load_occluder_library(path) -> OccluderLibrary:
    """Load a library manifest: JSON {"entries": [{"record_id", "image_path",
    "mask_path", "focal_mm"}, ..]} with paths relative to the manifest."""
    from .io import read_json, read_mask, read_png, read_pgm
    from .core import FormatError

    doc = read_json(path)
    root = Path(path).parent
    if not isinstance(doc, dict) or "entries" not in doc:
        raise FormatError(f"{path}: occluder library must contain an 'entries' list")
    entries = []
    for i, row in enumerate(doc["entries"]):
        try:
            img_path = root / row["image_path"]
            image = read_pgm(img_path) if str(img_path).endswith(".pgm") else read_png(img_path)
            entries.append(OccluderEntry(
                record_id=row["record_id"],
                image=image,
                mask=read_mask(root / row["mask_path"]),
                focal_mm=float(row["focal_mm"])))
        except KeyError as exc:
            raise FormatError(f"{path}: entry {i} missing key {exc}") from None
    return OccluderLibrary(entries)
