"""Binary-mask operations: thresholding, IoU, silhouette extraction,
compositing, and nearest-neighbor resizing."""

from __future__ import annotations

import numpy as np

from .core import FloatRaster, Image, Mask, ValidationError

BACKGROUND_LOW = 250
BACKGROUND_HIGH = 255


def binarize(raster: FloatRaster, eta: float = 0.5) -> Mask:
    """Foreground where the raster value is >= eta."""
    return Mask(raster.data >= eta)


def iou(a: Mask, b: Mask) -> float:
    """Intersection over union; two empty masks count as identical (1.0)."""
    if a.bits.shape != b.bits.shape:
        raise ValidationError(f"mask shapes differ: {a.bits.shape} vs {b.bits.shape}")
    union = int(np.logical_or(a.bits, b.bits).sum())
    if union == 0:
        return 1.0
    inter = int(np.logical_and(a.bits, b.bits).sum())
    return inter / union


def luma(image: Image) -> np.ndarray:
    """Integer Rec.601 luma, uint8.  Grayscale images pass through."""
    if image.channels == 1:
        return image.data
    rgb = image.data.astype(np.float64)
    y = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
    return np.rint(y).astype(np.uint8)


def extract_silhouette(image: Image, bg_low: int = BACKGROUND_LOW,
                       bg_high: int = BACKGROUND_HIGH) -> Mask:
    """Foreground = pixels whose luma falls outside the near-white band
    [bg_low, bg_high].  A luma of bg_low is background; bg_low - 1 is not."""
    if not 0 <= bg_low <= bg_high <= 255:
        raise ValidationError(f"background band [{bg_low}, {bg_high}] is not within [0, 255]")
    y = luma(image)
    return Mask((y < bg_low) | (y > bg_high))


def _window(base_h: int, base_w: int, fg_h: int, fg_w: int, dx: int, dy: int):
    """Clipped overlap of a fg raster placed with its (0, 0) at base pixel
    (dx, dy).  Returns base and fg slice pairs, or None if disjoint."""
    x0, y0 = max(0, dx), max(0, dy)
    x1, y1 = min(base_w, dx + fg_w), min(base_h, dy + fg_h)
    if x1 <= x0 or y1 <= y0:
        return None
    return (slice(y0, y1), slice(x0, x1)), (slice(y0 - dy, y1 - dy), slice(x0 - dx, x1 - dx))


def shift_mask(mask: Mask, offset: tuple, frame_height: int, frame_width: int) -> Mask:
    """Translate a mask by (dx, dy) into a frame, clipping at the borders."""
    dx, dy = int(offset[0]), int(offset[1])
    out = np.zeros((frame_height, frame_width), dtype=bool)
    win = _window(frame_height, frame_width, mask.height, mask.width, dx, dy)
    if win is not None:
        dst, src = win
        out[dst] = mask.bits[src]
    return Mask(out)


def composite(base: Image, base_mask: Mask, fg: Image, fg_mask: Mask,
              offset: tuple) -> tuple:
    """Paste fg pixels under fg_mask onto base with fg's origin at (dx, dy).

    Returns (composited image, occluded region), where the occluded region is
    the translated fg_mask intersected with base_mask.  Off-frame fg pixels
    are clipped.
    """
    if base.channels != fg.channels:
        raise ValidationError(
            f"channel mismatch: base has {base.channels}, foreground has {fg.channels}")
    if (base.height, base.width) != (base_mask.height, base_mask.width):
        raise ValidationError("base image and base mask disagree on shape")
    if (fg.height, fg.width) != (fg_mask.height, fg_mask.width):
        raise ValidationError("foreground image and mask disagree on shape")
    dx, dy = int(offset[0]), int(offset[1])
    out = base.copy()
    occluded = np.zeros((base.height, base.width), dtype=bool)
    win = _window(base.height, base.width, fg.height, fg.width, dx, dy)
    if win is not None:
        dst, src = win
        sel = fg_mask.bits[src]
        out.data[dst][sel] = fg.data[src][sel]
        occluded[dst] = sel & base_mask.bits[dst]
    return out, Mask(occluded)


def resize_nearest(obj, new_height: int, new_width: int):
    """Nearest-neighbor resize for Image or Mask; source pixel = floor of the
    destination center mapped back into the source raster."""
    if new_height < 1 or new_width < 1:
        raise ValidationError(f"target size {new_width}x{new_height} must be positive")
    if isinstance(obj, Mask):
        data, h, w = obj.bits, obj.height, obj.width
    elif isinstance(obj, Image):
        data, h, w = obj.data, obj.height, obj.width
    else:
        raise ValidationError(f"cannot resize {type(obj).__name__}")
    rows = np.minimum((np.arange(new_height) + 0.5) * (h / new_height), h - 1).astype(np.int64)
    cols = np.minimum((np.arange(new_width) + 0.5) * (w / new_width), w - 1).astype(np.int64)
    resized = data[rows][:, cols]
    if isinstance(obj, Mask):
        return Mask(resized.copy())
    return Image(np.ascontiguousarray(resized))
