"""Occlusion-aware 3D reconstruction support toolkit.

Depth unprojection and camera models, occupancy-to-mesh extraction and
evaluation (marching cubes, ICP, chamfer/F-score), reference loss kernels,
copy-paste occluder augmentation, and a seeded data-synthesis pipeline over
pluggable image generators.
"""

from .core import (
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
from .camera import (
    CameraIntrinsics,
    IntrinsicsParams,
    NormalizationTransform,
    PointMap,
    UnprojectConfig,
    build_intrinsics,
    normalize_points,
    pointmap_to_cloud,
    project,
    read_intrinsics,
    unproject,
    write_intrinsics,
)
from .maskops import (
    binarize,
    composite,
    extract_silhouette,
    iou,
    luma,
    resize_nearest,
    shift_mask,
)
from .augment import (
    AugmentedSample,
    OccluderEntry,
    OccluderLibrary,
    OccluderPick,
    OccluderPlan,
    apply_copy_paste,
    load_occluder_library,
    sample_plan,
)
from .geometry import (
    AnalyticField,
    eval_grid,
    euler_characteristic,
    is_watertight,
    marching_cubes,
    sample_surface,
    signed_volume,
    surface_area,
    triangle_areas,
)
from .align import (
    IcpConfig,
    IcpResult,
    RigidTransform,
    apply_transform,
    icp_align,
    kabsch,
)
from .metrics import (
    FScoreReport,
    MetricConfig,
    chamfer_distance,
    f_score,
    nn_distances,
)
from .losskit import (
    FeatureMap,
    FilmParams,
    LossWeights,
    bce_loss,
    film_invert,
    film_modulate,
    sample_query_points,
    shape_mse_loss,
    ssi_mae_loss,
    total_loss,
)
from .synthpipe import (
    GeneratorPort,
    HttpGeneratorPort,
    PipelineResult,
    RenderStub,
    SynthConfig,
    build_object_prompt,
    build_scene_prompt,
    derive_seed,
    is_filtered,
    load_render_stubs,
    load_synth_config,
    mock_generators,
    perturb_guidance,
    resolve_generator_port,
    run_pipeline,
)
from .io import (
    SynthManifest,
    canonical_json,
    read_json,
    read_manifest,
    read_mask,
    read_occupancy_grid,
    read_pfm,
    read_ply,
    read_png,
    write_json,
    write_manifest,
    write_mask,
    write_occupancy_grid,
    write_pfm,
    write_ply,
    write_png,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
