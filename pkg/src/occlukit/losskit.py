"""Framework-free reference implementations of the training losses and the
per-channel feature modulation, for cross-checking any training stack.

The scale- and shift-invariant depth loss aligns the prediction to the
target with the global L1-optimal affine map (least absolute deviations,
solved exactly as a linear program) before taking the mean absolute error.
Median/MAD and least-squares alignments are available behind the
``alignment`` flag.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix

from .core import FloatRaster, Mask, OccluKitError, ValidationError
from .camera import PointMap

BCE_CLAMP = 1e-7
DEFAULT_QUERY_COUNT = 4096
ALIGNMENTS = ("lad", "robust", "lstsq")


@dataclass
class FeatureMap:
    """Dense feature grid, (height, width, channels) float64."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ValidationError(f"feature map must be (h, w, c), got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValidationError("feature map contains non-finite values")
        self.data = np.ascontiguousarray(arr)

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass
class FilmParams:
    """Per-channel scale offsets (gamma) and shifts (beta)."""

    gamma: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=np.float64).reshape(-1)
        b = np.asarray(self.beta, dtype=np.float64).reshape(-1)
        if g.shape != b.shape:
            raise ValidationError(f"gamma has {g.size} channels, beta has {b.size}")
        self.gamma = g
        self.beta = b


@dataclass
class LossWeights:
    lambda_c: float = 10.0
    lambda_d: float = 1.0
    lambda_d_aux: float = 0.1
    lambda_m_vis: float = 1.0
    lambda_m_occ: float = 1.0
    lambda_o: float = 1.0

    def __post_init__(self):
        for name in ("lambda_c", "lambda_d", "lambda_d_aux",
                     "lambda_m_vis", "lambda_m_occ", "lambda_o"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")


def film_modulate(x: FeatureMap, params: FilmParams) -> FeatureMap:
    """out[i, j, c] = (1 + gamma[c]) * x[i, j, c] + beta[c]"""
    if params.gamma.size != x.channels:
        raise ValidationError(
            f"params carry {params.gamma.size} channels, map has {x.channels}")
    out = (1.0 + params.gamma)[None, None, :] * x.data + params.beta[None, None, :]
    return FeatureMap(out)


def film_invert(y: FeatureMap, params: FilmParams) -> FeatureMap:
    """Inverse of film_modulate; requires every gamma != -1."""
    if params.gamma.size != y.channels:
        raise ValidationError(
            f"params carry {params.gamma.size} channels, map has {y.channels}")
    denom = 1.0 + params.gamma
    if np.any(denom == 0):
        raise ValidationError("modulation with gamma = -1 is not invertible")
    return FeatureMap((y.data - params.beta[None, None, :]) / denom[None, None, :])


def _region_values(raster, region) -> np.ndarray:
    arr = raster.data if isinstance(raster, FloatRaster) else np.asarray(raster, dtype=np.float64)
    if region is None:
        return arr.reshape(-1).astype(np.float64)
    bits = region.bits if isinstance(region, Mask) else np.asarray(region, dtype=bool)
    if bits.shape != arr.shape:
        raise ValidationError(f"region shape {bits.shape} does not match raster {arr.shape}")
    return arr[bits].astype(np.float64)


def _lad_alignment(p: np.ndarray, g: np.ndarray) -> float:
    """min over (s, t) of mean |s*p + t - g|, solved exactly as an LP."""
    n = p.size
    # variables: [s, t, e_0 .. e_{n-1}]; minimize sum(e)/n subject to
    #   s*p_i + t - e_i <= g_i   and   -s*p_i - t - e_i <= -g_i
    cols = np.empty(6 * n, dtype=np.int64)
    data = np.empty(6 * n, dtype=np.float64)
    rows = np.empty(6 * n, dtype=np.int64)
    idx = np.arange(n)
    # upper rows: [p_i, 1, -1]
    cols[0::6] = 0
    data[0::6] = p
    cols[1::6] = 1
    data[1::6] = 1.0
    cols[2::6] = 2 + idx
    data[2::6] = -1.0
    # lower rows: [-p_i, -1, -1]
    cols[3::6] = 0
    data[3::6] = -p
    cols[4::6] = 1
    data[4::6] = -1.0
    cols[5::6] = 2 + idx
    data[5::6] = -1.0
    rows[0::6] = idx
    rows[1::6] = idx
    rows[2::6] = idx
    rows[3::6] = n + idx
    rows[4::6] = n + idx
    rows[5::6] = n + idx
    a_ub = coo_matrix((data, (rows, cols)), shape=(2 * n, n + 2))
    b_ub = np.concatenate([g, -g])
    c = np.concatenate([[0.0, 0.0], np.full(n, 1.0 / n)])
    bounds = [(None, None), (None, None)] + [(0, None)] * n
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if not res.success:
        raise OccluKitError(f"affine alignment LP failed: {res.message}")
    return float(res.fun)


def ssi_mae_loss(pred, target, region=None, alignment: str = "lad") -> float:
    """Scale- and shift-invariant mean absolute depth error over a region.

    alignment "lad" (default) uses the exact L1-optimal affine fit, so the
    result is the true minimum over all (scale, shift).  "robust" maps the
    prediction onto the target through median/mean-absolute-deviation
    statistics; "lstsq" uses the least-squares affine fit.  All three are
    invariant to affine reparameterizations of the prediction.
    """
    if alignment not in ALIGNMENTS:
        raise ValidationError(f"unknown alignment {alignment!r}, expected one of {ALIGNMENTS}")
    p = _region_values(pred, region)
    g = _region_values(target, region)
    if p.shape != g.shape:
        raise ValidationError("prediction and target rasters differ in shape")
    if p.size < 2:
        raise ValidationError(f"region has {p.size} pixels; need at least 2")
    if np.ptp(g) == 0:
        raise ValidationError("target is constant over the region; alignment is degenerate")
    if alignment == "lad":
        return _lad_alignment(p, g)
    if alignment == "robust":
        t_p = float(np.median(p))
        s_p = float(np.mean(np.abs(p - t_p)))
        t_g = float(np.median(g))
        s_g = float(np.mean(np.abs(g - t_g)))
        if s_p == 0:
            aligned = np.full_like(g, t_g)  # constant prediction carries no shape
        else:
            aligned = (p - t_p) / s_p * s_g + t_g
        return float(np.mean(np.abs(aligned - g)))
    design = np.stack([p, np.ones_like(p)], axis=1)
    (s, t), *_ = np.linalg.lstsq(design, g, rcond=None)
    return float(np.mean(np.abs(s * p + t - g)))


def bce_loss(pred, target) -> float:
    """Mean binary cross-entropy; probabilities clamped to
    [BCE_CLAMP, 1 - BCE_CLAMP]."""
    p = pred.data if isinstance(pred, FloatRaster) else np.asarray(pred)
    p = np.asarray(p, dtype=np.float64)
    y = target.bits if isinstance(target, Mask) else np.asarray(target)
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape:
        raise ValidationError(f"prediction shape {p.shape} does not match labels {y.shape}")
    if p.size == 0:
        raise ValidationError("cannot average over zero elements")
    p = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def shape_mse_loss(pred: PointMap, gt: PointMap) -> float:
    """Mean squared Euclidean coordinate error over jointly-valid pixels."""
    if (pred.height, pred.width) != (gt.height, gt.width):
        raise ValidationError("point maps differ in resolution")
    joint = pred.valid.bits & gt.valid.bits
    if not joint.any():
        raise ValidationError("no jointly-valid pixels")
    diff = pred.points[joint] - gt.points[joint]
    return float(np.mean((diff ** 2).sum(axis=1)))


_BASE_COMPONENTS = ("camera", "depth", "depth_aux", "mask_visible", "mask_occluder")


def total_loss(components: dict, weights: LossWeights | None = None,
               include_occupancy: bool = False) -> float:
    """Weighted sum of the named loss components.

    Required names: camera, depth, depth_aux, mask_visible, mask_occluder,
    plus occupancy when include_occupancy is set.  Component names outside
    the chosen mode are ignored.
    """
    w = weights or LossWeights()
    required = _BASE_COMPONENTS + (("occupancy",) if include_occupancy else ())
    missing = [name for name in required if name not in components]
    if missing:
        raise ValidationError(f"missing loss components: {', '.join(missing)}")
    total = (w.lambda_c * components["camera"]
             + w.lambda_d * components["depth"]
             + w.lambda_d_aux * components["depth_aux"]
             + w.lambda_m_vis * components["mask_visible"]
             + w.lambda_m_occ * components["mask_occluder"])
    if include_occupancy:
        total = total + w.lambda_o * components["occupancy"]
    return float(total)


def sample_query_points(count: int = DEFAULT_QUERY_COUNT,
                        bounds=((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0)),
                        seed: int = 0) -> np.ndarray:
    """Uniform points in an axis-aligned box, deterministic given the seed."""
    if count < 1:
        raise ValidationError(f"count must be >= 1, got {count}")
    lo = np.asarray(bounds[0], dtype=np.float64)
    hi = np.asarray(bounds[1], dtype=np.float64)
    if lo.shape != (3,) or hi.shape != (3,) or not (hi > lo).all():
        raise ValidationError(f"bad bounds {bounds}")
    rng = np.random.default_rng(seed)
    return rng.uniform(lo, hi, size=(count, 3))
