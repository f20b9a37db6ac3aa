"""3D fruitlet mapping: count and size immature apples along a scanned branch.

The pipeline turns multi-view depth scans of both canopy sides into one
branch map of fruitlet positions and diameters: per-frame instance clouds
are fitted with a robust sphere estimator, fits are merged into per-side
track maps, the two sides are aligned through a shared fiducial, and the
merged map is scored against ground truth. A deterministic scan simulator
provides synthetic datasets with exact ground truth for verification.
"""

from .alignment import cross_side_transform, merge_maps, transform_map
from .dataset import (
    DatasetError,
    FiducialObservation,
    FrameRecord,
    GroundTruth,
    GroundTruthFruitlet,
    ScanDataset,
    extract_instance_clouds,
    load_dataset,
    load_ground_truth,
    write_dataset,
)
from .evaluation import (
    EvalReport,
    MatchResult,
    count_accuracy,
    emit_report,
    evaluate_map,
    match_fruitlets,
    precision_recall_f1,
    size_rmse_percent,
)
from .geometry import (
    CameraIntrinsics,
    RigidTransform,
    StereoRig,
    backproject,
    depth_resolution,
    disparity_to_depth,
    project,
)
from .mapping import (
    BranchMap,
    FruitletTrack,
    MergeConfig,
    build_side_map,
    integrate_observation,
    load_branch_map,
    save_branch_map,
)
from .simulator import (
    OrchardSpec,
    Scene,
    SceneGenerationError,
    export_dataset,
    generate_scene,
    plan_trajectory,
    render_frame,
    simulate_dataset,
)
from .spherefit import (
    DegenerateSampleError,
    FitConfig,
    FitReport,
    SphereModel,
    downsample_points,
    fit_sphere_exact,
    ransac_sphere_fit,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "BranchMap",
    "CameraIntrinsics",
    "DatasetError",
    "DegenerateSampleError",
    "EvalReport",
    "FiducialObservation",
    "FitConfig",
    "FitReport",
    "FrameRecord",
    "FruitletTrack",
    "GroundTruth",
    "GroundTruthFruitlet",
    "MatchResult",
    "MergeConfig",
    "OrchardSpec",
    "RigidTransform",
    "ScanDataset",
    "Scene",
    "SceneGenerationError",
    "SphereModel",
    "StereoRig",
    "backproject",
    "build_side_map",
    "count_accuracy",
    "cross_side_transform",
    "depth_resolution",
    "disparity_to_depth",
    "downsample_points",
    "emit_report",
    "evaluate_map",
    "export_dataset",
    "extract_instance_clouds",
    "fit_sphere_exact",
    "generate_scene",
    "integrate_observation",
    "load_branch_map",
    "load_dataset",
    "load_ground_truth",
    "match_fruitlets",
    "merge_maps",
    "plan_trajectory",
    "precision_recall_f1",
    "project",
    "ransac_sphere_fit",
    "render_frame",
    "save_branch_map",
    "simulate_dataset",
    "size_rmse_percent",
    "transform_map",
    "write_dataset",
]
