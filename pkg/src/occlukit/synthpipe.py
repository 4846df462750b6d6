"""Seeded data-synthesis pipeline over pluggable image generators.

Each input render stub (depth map, silhouette mask, rendered guidance image,
category, camera) is turned into a dataset record by: perturbing the
guidance once, repeatedly invoking the object-appearance generator with
freshly sampled color/material prompt words until the generated silhouette
matches the render mask (IoU >= kappa), then outpainting the background with
a scene prompt and persisting image/depth/mask plus a manifest entry.

Determinism: every random draw comes from a stream keyed by
hash(seed, record_id, purpose), never from worker scheduling, so output
bytes are identical for any worker count.  Records that exhaust the retry
cap are dropped and logged rather than looping forever.

Generator backends: procedural mocks (default) or HTTP services selected via
the OCCLUKIT_OBJ_ENDPOINT / OCCLUKIT_BG_ENDPOINT environment variables.
"""

from __future__ import annotations

import base64
import concurrent.futures
import hashlib
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np
import requests

from .core import (
    DatasetRecord,
    FloatRaster,
    FormatError,
    GeneratorError,
    Image,
    Mask,
    ValidationError,
)
from .io import (
    SynthManifest,
    canonical_json,
    pfm_to_bytes,
    pgm_to_bytes,
    png_from_bytes,
    png_to_bytes,
    read_json,
    read_mask,
    read_pfm,
    read_png,
    write_json,
    write_manifest,
    write_mask,
    write_pfm,
    write_png,
)
from .maskops import extract_silhouette, iou

log = logging.getLogger(__name__)

DEFAULT_KAPPA = 0.95
DEFAULT_MAX_RETRIES = 8
DEFAULT_GUIDANCE_NOISE = 0.6
FOCAL_RANGE_MM = (30.0, 70.0)
ELEVATION_RANGE_DEG = (5.0, 65.0)

DEFAULT_COLORS = ("red", "pink", "orange", "yellow", "green", "blue",
                  "purple", "brown", "white", "black", "gray", "")
DEFAULT_MATERIALS = ("metal", "wood", "plastic", "ceramic", "stone",
                     "rubber", "leather", "")

OBJ_ENDPOINT_VAR = "OCCLUKIT_OBJ_ENDPOINT"
BG_ENDPOINT_VAR = "OCCLUKIT_BG_ENDPOINT"


# ---------------------------------------------------------------------------
# inputs and configuration


@dataclass
class RenderStub:
    """One rendered object awaiting appearance synthesis."""

    record_id: str
    object_id: str
    category: str
    focal_mm: float
    camera: dict
    depth_path: str
    mask_path: str
    render_path: str

    def __post_init__(self):
        if not self.category:
            raise ValidationError(f"render {self.record_id!r} has an empty category")
        lo, hi = FOCAL_RANGE_MM
        if not lo <= self.focal_mm <= hi:
            raise ValidationError(
                f"render {self.record_id!r}: focal {self.focal_mm}mm outside [{lo}, {hi}]")
        elev = self.camera.get("elevation_deg")
        if elev is not None:
            lo, hi = ELEVATION_RANGE_DEG
            if not lo <= float(elev) <= hi:
                raise ValidationError(
                    f"render {self.record_id!r}: elevation {elev} outside [{lo}, {hi}]")


def load_render_stubs(path) -> list:
    """Load a JSON list of render stubs; relative paths resolve against the
    file's directory."""
    doc = read_json(path)
    if not isinstance(doc, list):
        raise FormatError(f"{path}: render listing must be a JSON array")
    root = Path(path).parent
    stubs = []
    for i, row in enumerate(doc):
        try:
            stubs.append(RenderStub(
                record_id=row["record_id"],
                object_id=row["object_id"],
                category=row["category"],
                focal_mm=float(row["focal_mm"]),
                camera=dict(row.get("camera", {})),
                depth_path=str(root / row["depth_path"]),
                mask_path=str(root / row["mask_path"]),
                render_path=str(root / row["render_path"]),
            ))
        except KeyError as exc:
            raise FormatError(f"{path}: render {i} missing key {exc}") from None
    ids = [s.record_id for s in stubs]
    if len(set(ids)) != len(ids):
        dupe = next(r for r in ids if ids.count(r) > 1)
        raise ValidationError(f"duplicate record ID {dupe!r} in render listing")
    return stubs


@dataclass
class SynthConfig:
    seed: int
    scene_list: tuple
    kappa: float = DEFAULT_KAPPA
    max_retries: int = DEFAULT_MAX_RETRIES
    guidance_noise: float = DEFAULT_GUIDANCE_NOISE
    color_list: tuple = DEFAULT_COLORS
    material_list: tuple = DEFAULT_MATERIALS

    def __post_init__(self):
        if not 0 < self.kappa <= 1:
            raise ValidationError(f"kappa must be in (0, 1], got {self.kappa}")
        if self.max_retries < 1:
            raise ValidationError(f"max_retries must be >= 1, got {self.max_retries}")
        if not 0 <= self.guidance_noise <= 1:
            raise ValidationError(
                f"guidance_noise must be in [0, 1], got {self.guidance_noise}")
        self.scene_list = tuple(self.scene_list)
        self.color_list = tuple(self.color_list)
        self.material_list = tuple(self.material_list)
        for name in ("scene_list", "color_list", "material_list"):
            if not getattr(self, name):
                raise ValidationError(f"{name} must be nonempty")

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "scene_list": list(self.scene_list),
            "kappa": self.kappa,
            "max_retries": self.max_retries,
            "guidance_noise": self.guidance_noise,
            "color_list": list(self.color_list),
            "material_list": list(self.material_list),
        }

    @classmethod
    def from_json_dict(cls, doc: dict, root: Path | None = None) -> "SynthConfig":
        if "scene_list" in doc:
            scenes = tuple(doc["scene_list"])
        elif "scene_file" in doc:
            scene_path = Path(doc["scene_file"])
            if root is not None and not scene_path.is_absolute():
                scene_path = root / scene_path
            lines = Path(scene_path).read_text(encoding="utf-8").splitlines()
            scenes = tuple(s.strip() for s in lines if s.strip())
        else:
            raise ValidationError("config needs scene_list or scene_file")
        return cls(
            seed=int(doc.get("seed", 0)),
            scene_list=scenes,
            kappa=float(doc.get("kappa", DEFAULT_KAPPA)),
            max_retries=int(doc.get("max_retries", DEFAULT_MAX_RETRIES)),
            guidance_noise=float(doc.get("guidance_noise", DEFAULT_GUIDANCE_NOISE)),
            color_list=tuple(doc.get("color_list", DEFAULT_COLORS)),
            material_list=tuple(doc.get("material_list", DEFAULT_MATERIALS)),
        )

    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.to_json_dict()).encode("utf-8")).hexdigest()


def load_synth_config(path) -> SynthConfig:
    doc = read_json(path)
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: config must be a JSON object")
    return SynthConfig.from_json_dict(doc, root=Path(path).parent)


def derive_seed(base_seed: int, record_id: str, purpose) -> int:
    """Collision-resistant 64-bit stream seed for one (record, purpose) pair.
    Independent of scheduling, worker count, and processing order."""
    digest = hashlib.sha256(
        f"occlukit|{base_seed}|{record_id}|{purpose}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


# ---------------------------------------------------------------------------
# prompt construction


def build_object_prompt(color: str, material: str, obj: str) -> str:
    """"a {color} {material} {object}"; empty words drop out and whitespace
    collapses."""
    obj = obj.strip()
    if not obj:
        raise ValidationError("object word must be nonempty")
    parts = [w.strip() for w in (color, material, obj)]
    return " ".join(("a " + " ".join(w for w in parts if w)).split())


def build_scene_prompt(obj: str, scene: str) -> str:
    """"a {object} in the {scene}"; both words required."""
    obj = obj.strip()
    scene = scene.strip()
    if not obj:
        raise ValidationError("object word must be nonempty")
    if not scene:
        raise ValidationError("scene word must be nonempty")
    return f"a {obj} in the {scene}"


# ---------------------------------------------------------------------------
# guidance perturbation and filtering


def perturb_guidance(rendered: Image, noise_strength: float, seed: int) -> Image:
    """Additive per-channel Gaussian noise with standard deviation
    noise_strength * 255 * 0.5, rounded and clamped to [0, 255]."""
    if not 0 <= noise_strength <= 1:
        raise ValidationError(f"noise_strength must be in [0, 1], got {noise_strength}")
    if noise_strength == 0:
        return rendered.copy()
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, noise_strength * 255.0 * 0.5, size=rendered.data.shape)
    out = np.clip(np.rint(rendered.data.astype(np.float64) + noise), 0, 255)
    return Image(out.astype(np.uint8))


def is_filtered(fg_img: Image, render_mask: Mask, kappa: float = DEFAULT_KAPPA) -> bool:
    """True when the generated silhouette drifted: IoU against the render
    mask strictly below kappa."""
    if (fg_img.height, fg_img.width) != (render_mask.height, render_mask.width):
        raise ValidationError(
            f"image {fg_img.width}x{fg_img.height} does not match mask "
            f"{render_mask.width}x{render_mask.height}")
    return iou(extract_silhouette(fg_img), render_mask) < kappa


# ---------------------------------------------------------------------------
# generator ports


class GeneratorPort(Protocol):
    """Image synthesis backend; implementations must be deterministic in
    (inputs, seed)."""

    def object_appearance(self, depth: FloatRaster, guidance: Image,
                          prompt: str, seed: int) -> Image: ...

    def background_outpaint(self, image: Image, mask: Mask,
                            prompt: str, seed: int) -> Image: ...


def _prompt_rgb(prompt: str, seed: int) -> np.ndarray:
    digest = hashlib.sha256(f"{prompt}|{seed}".encode("utf-8")).digest()
    return np.array([80 + digest[i] % 151 for i in range(3)], dtype=np.float64)


@dataclass
class MockGeneratorPort:
    """Procedural stand-in for the diffusion services.

    The object generator paints the depth-valid region in a prompt-keyed
    color shaded by depth and keeps the background white, so the silhouette
    of its output reproduces the render mask.  The outpainter fills only the
    region outside the mask with a scene-keyed near-white pattern (every
    sample in [250, 255]) and never touches masked pixels.  An optional
    distortion hook whites out a fraction of object columns whenever
    distort_when(seed) is true, for exercising the silhouette filter.
    """

    distort_when: object = None
    distort_fraction: float = 0.2

    def object_appearance(self, depth: FloatRaster, guidance: Image,
                          prompt: str, seed: int) -> Image:
        region = depth.data > 0
        h, w = depth.data.shape
        out = np.full((h, w, 3), 255, dtype=np.uint8)
        if region.any():
            d = depth.data.astype(np.float64)
            lo = d[region].min()
            hi = d[region].max()
            rel = np.zeros_like(d) if hi == lo else (d - lo) / (hi - lo)
            shade = 1.0 - 0.4 * rel  # nearer surfaces render brighter
            rgb = _prompt_rgb(prompt, seed)
            for c in range(3):
                chan = np.rint(rgb[c] * shade).clip(0, 230).astype(np.uint8)
                out[:, :, c][region] = chan[region]
            if self.distort_when is not None and self.distort_when(seed):
                cols = np.flatnonzero(region.any(axis=0))
                k = max(1, int(round(len(cols) * self.distort_fraction)))
                wipe = np.zeros_like(region)
                wipe[:, cols[:k]] = True
                out[wipe & region] = 255
        return Image(out)

    def background_outpaint(self, image: Image, mask: Mask,
                            prompt: str, seed: int) -> Image:
        if (image.height, image.width) != (mask.height, mask.width):
            raise ValidationError("image and mask disagree on shape")
        out = image.copy()
        bg = ~mask.bits
        if not bg.any():
            return out
        digest = hashlib.sha256(f"{prompt}|{seed}".encode("utf-8")).digest()
        jj, ii = np.mgrid[0:image.height, 0:image.width]
        gradient = (digest[0] + jj + ii) % 4
        rng = np.random.default_rng(seed)
        noise = rng.integers(0, 2, size=gradient.shape)
        # keep every background sample inside the near-white band [250, 255]
        values = (250 + gradient + noise).astype(np.uint8)
        if out.channels == 1:
            out.data[bg] = values[bg]
        else:
            out.data[bg] = values[bg, None]
        return out


def mock_generators(distort_when=None, distort_fraction: float = 0.2) -> MockGeneratorPort:
    """Deterministic procedural generator pair (see MockGeneratorPort)."""
    return MockGeneratorPort(distort_when=distort_when, distort_fraction=distort_fraction)


@dataclass
class HttpGeneratorPort:
    """Client for external generator services speaking the JSON-over-HTTP
    protocol: POST {endpoint}/object_appearance and
    {endpoint}/background_outpaint with base64 payloads."""

    object_endpoint: str
    background_endpoint: str
    timeout: float = 30.0
    retries: int = 3
    backoff: float = 0.5

    def _post(self, url: str, payload: dict) -> dict:
        last_error = None
        for attempt in range(self.retries):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = requests.post(url, json=payload, timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = f"{exc}"
                continue
            if resp.status_code >= 500:
                last_error = f"server error {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise GeneratorError(f"{url}: HTTP {resp.status_code}")
            try:
                return resp.json()
            except ValueError:
                raise GeneratorError(f"{url}: response is not JSON") from None
        raise GeneratorError(f"{url}: giving up after {self.retries} attempts ({last_error})")

    @staticmethod
    def _image_from(doc: dict, url: str) -> Image:
        try:
            blob = base64.b64decode(doc["image_png_b64"])
        except KeyError:
            raise GeneratorError(f"{url}: response missing image_png_b64") from None
        return png_from_bytes(blob)

    def object_appearance(self, depth: FloatRaster, guidance: Image,
                          prompt: str, seed: int) -> Image:
        url = self.object_endpoint.rstrip("/") + "/object_appearance"
        doc = self._post(url, {
            "depth_pfm_b64": base64.b64encode(pfm_to_bytes(depth)).decode("ascii"),
            "guidance_png_b64": base64.b64encode(png_to_bytes(guidance)).decode("ascii"),
            "prompt": prompt,
            "seed": seed,
        })
        return self._image_from(doc, url)

    def background_outpaint(self, image: Image, mask: Mask,
                            prompt: str, seed: int) -> Image:
        url = self.background_endpoint.rstrip("/") + "/background_outpaint"
        mask_img = Image(np.where(mask.bits, 255, 0).astype(np.uint8))
        doc = self._post(url, {
            "image_png_b64": base64.b64encode(png_to_bytes(image)).decode("ascii"),
            "mask_pgm_b64": base64.b64encode(pgm_to_bytes(mask_img)).decode("ascii"),
            "prompt": prompt,
            "seed": seed,
        })
        return self._image_from(doc, url)


def resolve_generator_port(env=None) -> GeneratorPort:
    """HTTP port when both endpoint env vars are set, mocks when neither is;
    a half-configured environment is an error."""
    if env is None:
        import os
        env = os.environ
    obj = env.get(OBJ_ENDPOINT_VAR)
    bg = env.get(BG_ENDPOINT_VAR)
    if obj and bg:
        return HttpGeneratorPort(object_endpoint=obj, background_endpoint=bg)
    if obj or bg:
        raise ValidationError(
            f"set both {OBJ_ENDPOINT_VAR} and {BG_ENDPOINT_VAR} or neither")
    return mock_generators()


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class PipelineResult:
    manifest: SynthManifest
    dropped: list = field(default_factory=list)
    out_dir: str = ""

    @property
    def complete(self) -> bool:
        return not self.dropped


def _synthesize_record(stub: RenderStub, cfg: SynthConfig, port, out_dir: Path):
    depth = read_pfm(stub.depth_path)
    mask = read_mask(stub.mask_path)
    render = read_png(stub.render_path)
    if not ((depth.height, depth.width) == (mask.height, mask.width)
            == (render.height, render.width)):
        raise ValidationError(f"render {stub.record_id!r}: raster shapes disagree")

    guidance = perturb_guidance(render, cfg.guidance_noise,
                                derive_seed(cfg.seed, stub.record_id, "guidance"))

    accepted = None
    object_prompt = None
    ious = []
    for attempt in range(1, cfg.max_retries + 1):
        attempt_seed = derive_seed(cfg.seed, stub.record_id, f"attempt-{attempt}")
        rng = np.random.default_rng(attempt_seed)
        color = cfg.color_list[int(rng.integers(len(cfg.color_list)))]
        material = cfg.material_list[int(rng.integers(len(cfg.material_list)))]
        prompt = build_object_prompt(color, material, stub.category)
        try:
            candidate = port.object_appearance(depth, guidance, prompt, attempt_seed)
        except GeneratorError as exc:
            return ("dropped", {"record_id": stub.record_id,
                                "reason": "generator-failure",
                                "attempts": attempt, "detail": str(exc)})
        score = iou(extract_silhouette(candidate), mask)
        ious.append(score)
        if not score < cfg.kappa:
            accepted = candidate
            object_prompt = prompt
            break
    if accepted is None:
        return ("dropped", {"record_id": stub.record_id, "reason": "filtered",
                            "attempts": cfg.max_retries, "ious": ious})
    attempts_used = len(ious)

    scene_seed = derive_seed(cfg.seed, stub.record_id, "scene")
    scene_rng = np.random.default_rng(scene_seed)
    scene = cfg.scene_list[int(scene_rng.integers(len(cfg.scene_list)))]
    scene_prompt = build_scene_prompt(stub.category, scene)
    try:
        final = port.background_outpaint(accepted, mask, scene_prompt, scene_seed)
        if final.data.shape != accepted.data.shape:
            raise GeneratorError(
                f"outpainter changed image shape for {stub.record_id!r}")
        fg = mask.bits
        if not np.array_equal(final.data[fg], accepted.data[fg]):
            raise GeneratorError(
                f"outpainter modified foreground pixels for {stub.record_id!r}")
    except GeneratorError as exc:
        return ("dropped", {"record_id": stub.record_id,
                            "reason": "generator-failure",
                            "attempts": attempts_used, "detail": str(exc)})

    image_name = f"{stub.record_id}_image.png"
    depth_name = f"{stub.record_id}_depth.pfm"
    mask_name = f"{stub.record_id}_mask.pgm"
    write_png(out_dir / image_name, final)
    write_pfm(out_dir / depth_name, depth)
    write_mask(out_dir / mask_name, mask)

    record = DatasetRecord(
        record_id=stub.record_id,
        object_id=stub.object_id,
        category=stub.category,
        focal_mm=stub.focal_mm,
        camera=stub.camera,
        depth_path=depth_name,
        mask_path=mask_name,
        image_path=image_name,
        attempts=attempts_used,
        prompts={"object": object_prompt, "scene": scene_prompt},
    )
    return ("ok", record)


def run_pipeline(stubs, cfg: SynthConfig, port: GeneratorPort, out_dir,
                 workers: int = 1) -> PipelineResult:
    """Synthesize every render stub into out_dir and write manifest.json
    plus dropped.json.  Output is byte-identical for any worker count."""
    if workers < 1:
        raise ValidationError(f"workers must be >= 1, got {workers}")
    ids = [s.record_id for s in stubs]
    if len(set(ids)) != len(ids):
        dupe = next(r for r in ids if ids.count(r) > 1)
        raise ValidationError(f"duplicate record ID {dupe!r}")
    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)

    results = []
    if workers == 1:
        for stub in stubs:
            results.append(_synthesize_record(stub, cfg, port, out_path))
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_synthesize_record, stub, cfg, port, out_path)
                       for stub in stubs]
            results = [f.result() for f in futures]

    records = sorted((payload for kind, payload in results if kind == "ok"),
                     key=lambda r: r.record_id)
    dropped = sorted((payload for kind, payload in results if kind == "dropped"),
                     key=lambda d: d["record_id"])
    for entry in dropped:
        log.warning("dropped record %s: %s", entry["record_id"], entry["reason"])

    manifest = SynthManifest(seed=cfg.seed, pipeline_config_hash=cfg.config_hash(),
                             records=records)
    write_manifest(out_path / "manifest.json", manifest)
    write_json(out_path / "dropped.json", dropped)
    return PipelineResult(manifest=manifest, dropped=dropped, out_dir=str(out_path))
