"""Covisibility-map tooling for sparse multi-view reconstruction.

The package builds per-view covisibility maps from dense correspondences,
enhances sparse reconstruction point clouds with gated triangulations and
rescaled monocular depth, trains a proximity classifier on the enhanced
cloud, and evaluates a covisibility-weighted proximity loss (with gradients)
over Gaussian positions. A synthetic-scene generator with exact ground truth
backs the whole thing with brute-force oracles.
"""

__version__ = "0.1.0"

from .cloud import (
    SOURCE_COLMAP,
    SOURCE_MONO,
    SOURCE_TRIANGULATED,
    PointCloud,
)
from .covismap import (
    CorrespondenceSet,
    CovisMap,
    SceneCovisScore,
    build_covis_map,
    covis_at,
    refine_covis_map,
    scene_covis_score,
)
from .enhance import (
    EnhanceResult,
    ScaleTransform,
    apply_scale,
    assemble_final,
    default_epsilon,
    enhance_scene,
    fit_scale,
    merge_clouds,
    split_by_covisibility,
    triangulate_correspondences,
    unproject_depth,
)
from .geometry import (
    CameraView,
    Ray,
    TriangulationResult,
    project,
    project_many,
    reprojection_error,
    triangulate,
    unproject,
)
from .proximity import (
    GaussianSet,
    ProximityLossResult,
    ProximityModel,
    TrainingSet,
    batch_scores,
    classify_cloud,
    descend_positions,
    load_model,
    make_training_set,
    proximity_loss,
    proximity_loss_grad,
    proximity_score,
    save_model,
    total_objective,
    train_classifier,
    weight_in,
    weight_out,
)
from .scene_io import (
    DepthMap,
    SceneBundle,
    load_scene,
    read_colmap_reconstruction,
    read_correspondences,
    read_covis_map_image,
    read_depth_map,
    read_ply,
    write_colmap_reconstruction,
    write_correspondences,
    write_covis_map_image,
    write_depth_map,
    write_ply,
)
from .synth import (
    GroundTruth,
    SceneSpec,
    generate_scene,
    oracle_correspondences,
    oracle_covis_map,
    oracle_nearest_neighbor,
    scene_distance,
)
