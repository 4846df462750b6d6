"""Command-line entry point.

One `occlukit` command with a subcommand per pipeline stage.  Machine output
is canonical JSON (9 significant digits, sorted keys) written to --report /
--out when given, else stdout; --pretty renders a human-readable table to
stdout instead.  Exit codes: 0 success, 1 usage error, 2 data or validation
error, 3 partial pipeline failure (some synthesis records dropped).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .align import IcpConfig, icp_align
from .augment import apply_copy_paste, load_occluder_library, sample_plan
from .camera import normalize_points, pointmap_to_cloud, read_intrinsics, unproject
from .core import (
    OccluKitError,
    PointCloud,
    TriangleMesh,
    ValidationError,
)
from .geometry import (
    is_watertight,
    marching_cubes,
    sample_surface,
    surface_area,
)
from .io import (
    canonical_json,
    read_json,
    read_mask,
    read_occupancy_grid,
    read_pfm,
    read_pgm,
    read_ply,
    read_png,
    write_json,
    write_mask,
    write_ply,
    write_png,
)
from .losskit import bce_loss, ssi_mae_loss, total_loss
from .maskops import extract_silhouette, iou
from .metrics import DEFAULT_MULTIPLES, DEFAULT_TAU, MetricConfig, f_score
from .synthpipe import (
    load_render_stubs,
    load_synth_config,
    resolve_generator_port,
    run_pipeline,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_PARTIAL = 3

DEFAULT_EVAL_SAMPLES = 10000


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; this toolkit reserves 2 for
    data errors, so remap usage failures to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.9g}"
    return str(value)


def _pretty_rows(doc, prefix=""):
    rows = []
    if isinstance(doc, dict):
        for key, val in doc.items():
            rows.extend(_pretty_rows(val, f"{prefix}{key}." if isinstance(val, dict)
                                     else f"{prefix}{key}"))
    elif isinstance(doc, (list, tuple)):
        rows.append((prefix, "[" + ", ".join(_fmt(v) for v in doc) + "]"))
    else:
        rows.append((prefix, _fmt(doc)))
    return rows


def _emit(doc, report_path=None, pretty=False) -> None:
    if report_path:
        write_json(report_path, doc)
    if pretty:
        rows = _pretty_rows(doc)
        width = max(len(k) for k, _ in rows) if rows else 0
        for key, val in rows:
            sys.stdout.write(f"{key.ljust(width)}  {val}\n")
    elif not report_path:
        sys.stdout.write(canonical_json(doc) + "\n")


def _read_image(path):
    return read_pgm(path) if str(path).endswith(".pgm") else read_png(path)


# ---------------------------------------------------------------------------
# subcommands


def _cmd_unproject(args) -> int:
    depth = read_pfm(args.depth)
    intrinsics = read_intrinsics(args.intrinsics)
    mask = read_mask(args.mask) if args.mask else None
    pm = unproject(depth, intrinsics, mask, eta=args.eta)
    cloud = pointmap_to_cloud(pm)
    doc = {"points": int(cloud.points.shape[0]), "out": str(args.out)}
    if args.normalize:
        cloud, transform = normalize_points(cloud, convention=args.normalize)
        doc["normalization"] = transform.to_json_dict()
    write_ply(args.out, cloud)
    _emit(doc, args.report, args.pretty)
    return EXIT_OK


def _cmd_silhouette(args) -> int:
    image = _read_image(args.image)
    mask = extract_silhouette(image, bg_low=args.low, bg_high=args.high)
    write_mask(args.out, mask)
    _emit({"foreground_pixels": mask.count(), "out": str(args.out)},
          args.report, args.pretty)
    return EXIT_OK


def _cmd_iou(args) -> int:
    value = iou(read_mask(args.mask_a), read_mask(args.mask_b))
    _emit({"iou": value}, args.report, args.pretty)
    return EXIT_OK


def _cmd_augment(args) -> int:
    sample = read_json(args.sample)
    root = Path(args.sample).parent
    try:
        image = _read_image(root / sample["image_path"])
        mask = read_mask(root / sample["mask_path"])
        focal = float(sample["focal_mm"])
    except KeyError as exc:
        raise ValidationError(f"{args.sample}: sample missing key {exc}") from None
    library = load_occluder_library(args.library)
    plan = sample_plan(library, focal, image.height, image.width, args.seed)
    result = apply_copy_paste(image, mask, plan, library)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_png(out_dir / "augmented.png", result.image)
    write_mask(out_dir / "visible_mask.pgm", result.visible_mask)
    write_mask(out_dir / "occluder_mask.pgm", result.occluder_mask)
    doc = {
        "plan": plan.to_json_dict(),
        "visible_pixels": result.visible_mask.count(),
        "occluded_pixels": result.occluder_mask.count(),
        "out_dir": str(out_dir),
    }
    _emit(doc, args.report, args.pretty)
    return EXIT_OK


def _cmd_mesh(args) -> int:
    grid = read_occupancy_grid(args.grid)
    mesh = marching_cubes(grid, args.iso)
    write_ply(args.out, mesh, binary=args.binary)
    doc = {
        "vertices": int(mesh.vertices.shape[0]),
        "triangles": int(mesh.triangles.shape[0]),
        "watertight": is_watertight(mesh),
        "surface_area": surface_area(mesh),
        "out": str(args.out),
    }
    _emit(doc, args.report, args.pretty)
    return EXIT_OK


def _load_points(path, samples: int, seed: int, iso: float) -> PointCloud:
    name = str(path)
    if name.endswith(".occ"):
        mesh = marching_cubes(read_occupancy_grid(name), iso)
        return sample_surface(mesh, samples, seed=seed)
    if name.endswith(".ply"):
        geometry = read_ply(name)
        if isinstance(geometry, TriangleMesh):
            return sample_surface(geometry, samples, seed=seed)
        return geometry
    raise ValidationError(f"unsupported geometry file {name!r}; expected .occ or .ply")


def _cmd_align(args) -> int:
    src = _load_points(args.src, args.samples, args.seed, args.iso)
    dst = _load_points(args.dst, args.samples, args.seed, args.iso)
    config = IcpConfig(max_iterations=args.max_iter, convergence_tol=args.tol,
                       with_scale=args.with_scale)
    result = icp_align(src.points, dst.points, config)
    doc = result.transform.to_json_dict()
    doc["rms"] = result.rms
    doc["iterations"] = result.iterations
    if args.with_scale:
        doc["scale"] = result.scale
    write_json(args.out, doc)
    _emit(doc, args.report, args.pretty)
    return EXIT_OK


def _cmd_eval(args) -> int:
    # identical inputs sample identically, so self-comparison reports chamfer 0
    pred = _load_points(args.pred, args.samples, args.seed, args.iso)
    gt = _load_points(args.gt, args.samples, args.seed, args.iso)
    if not args.no_icp:
        result = icp_align(pred.points, gt.points)
        pred = PointCloud(result.apply(pred.points))
    config = MetricConfig(tau=args.tau, multiples=tuple(args.multiples))
    report = f_score(pred, gt, config, method=args.method)
    if args.figures:
        from .viz import save_eval_figures
        save_eval_figures(pred, gt, report, args.figures, method=args.method)
    _emit(report.to_json_dict(), args.report, args.pretty)
    return EXIT_OK


def _cmd_losses(args) -> int:
    doc = {}
    if args.pred_depth or args.gt_depth:
        if not (args.pred_depth and args.gt_depth):
            raise ValidationError("--pred-depth and --gt-depth must be given together")
        region = read_mask(args.mask) if args.mask else None
        doc["ssi_mae"] = ssi_mae_loss(read_pfm(args.pred_depth),
                                      read_pfm(args.gt_depth),
                                      region, alignment=args.alignment)
    if args.pred_probs or args.target_mask:
        if not (args.pred_probs and args.target_mask):
            raise ValidationError("--pred-probs and --target-mask must be given together")
        doc["bce"] = bce_loss(read_pfm(args.pred_probs), read_mask(args.target_mask))
    if args.components:
        components = read_json(args.components)
        if not isinstance(components, dict):
            raise ValidationError(f"{args.components}: components must be a JSON object")
        doc["total"] = total_loss(components, include_occupancy=args.include_occupancy)
    if not doc:
        raise ValidationError("nothing to compute; pass depth, probability, "
                              "or component inputs")
    _emit(doc, args.report, args.pretty)
    return EXIT_OK


def _cmd_synth(args) -> int:
    stubs = load_render_stubs(args.renders)
    config = load_synth_config(args.config)
    port = resolve_generator_port()
    result = run_pipeline(stubs, config, port, args.out_dir, workers=args.workers)
    doc = {
        "records": len(result.manifest.records),
        "dropped": len(result.dropped),
        "out_dir": result.out_dir,
    }
    _emit(doc, args.report, args.pretty)
    return EXIT_OK if result.complete else EXIT_PARTIAL


# ---------------------------------------------------------------------------
# parser


def _add_common(sub) -> None:
    sub.add_argument("--report", default=None, help="write the JSON report here")
    sub.add_argument("--pretty", action="store_true",
                     help="print a table instead of JSON on stdout")


def build_parser() -> _Parser:
    parser = _Parser(prog="occlukit",
                     description="Occlusion-aware 3D reconstruction toolkit")
    commands = parser.add_subparsers(dest="command", required=True,
                                     metavar="SUBCOMMAND")

    p = commands.add_parser("unproject", help="lift a depth map to a point cloud")
    p.add_argument("--depth", required=True)
    p.add_argument("--mask", default=None)
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--eta", type=float, default=0.5)
    p.add_argument("--normalize", nargs="?", const="ball", default=None,
                   choices=("ball", "rms", "bbox"))
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_unproject)

    p = commands.add_parser("silhouette", help="extract a foreground mask")
    p.add_argument("image")
    p.add_argument("--low", type=int, default=250)
    p.add_argument("--high", type=int, default=255)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_silhouette)

    p = commands.add_parser("iou", help="intersection over union of two masks")
    p.add_argument("mask_a")
    p.add_argument("mask_b")
    _add_common(p)
    p.set_defaults(func=_cmd_iou)

    p = commands.add_parser("augment", help="paste random occluders over a sample")
    p.add_argument("--sample", required=True,
                   help="JSON with image_path, mask_path, focal_mm")
    p.add_argument("--library", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_augment)

    p = commands.add_parser("mesh", help="occupancy grid to triangle mesh")
    p.add_argument("--grid", required=True)
    p.add_argument("--iso", type=float, default=0.5)
    p.add_argument("--binary", action="store_true", help="write binary PLY")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_mesh)

    p = commands.add_parser("align", help="rigid ICP alignment of two geometries")
    p.add_argument("--src", required=True)
    p.add_argument("--dst", required=True)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--with-scale", action="store_true")
    p.add_argument("--samples", type=int, default=DEFAULT_EVAL_SAMPLES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iso", type=float, default=0.5)
    p.add_argument("--out", required=True, help="write the transform JSON here")
    _add_common(p)
    p.set_defaults(func=_cmd_align)

    p = commands.add_parser("eval", help="chamfer and f-score report")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--multiples", type=int, nargs="+", default=list(DEFAULT_MULTIPLES))
    p.add_argument("--no-icp", action="store_true",
                   help="skip aligning the prediction onto the ground truth")
    p.add_argument("--method", choices=("kdtree", "brute"), default="kdtree")
    p.add_argument("--samples", type=int, default=DEFAULT_EVAL_SAMPLES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iso", type=float, default=0.5)
    p.add_argument("--figures", default=None,
                   help="also render figures into this directory")
    _add_common(p)
    p.set_defaults(func=_cmd_eval)

    p = commands.add_parser("losses", help="reference loss kernels")
    p.add_argument("--pred-depth", default=None)
    p.add_argument("--gt-depth", default=None)
    p.add_argument("--mask", default=None)
    p.add_argument("--alignment", choices=("lad", "robust", "lstsq"), default="lad")
    p.add_argument("--pred-probs", default=None, help="probability raster (PFM)")
    p.add_argument("--target-mask", default=None)
    p.add_argument("--components", default=None,
                   help="JSON map of named loss values to aggregate")
    p.add_argument("--include-occupancy", action="store_true")
    _add_common(p)
    p.set_defaults(func=_cmd_losses)

    p = commands.add_parser("synth", help="run the data synthesis pipeline")
    p.add_argument("--renders", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--workers", type=int, default=1)
    _add_common(p)
    p.set_defaults(func=_cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except OccluKitError as exc:
        sys.stderr.write(f"occlukit: error: {exc}\n")
        return EXIT_DATA
    except FileNotFoundError as exc:
        sys.stderr.write(f"occlukit: error: {exc}\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
