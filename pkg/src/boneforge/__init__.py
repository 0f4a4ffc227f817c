"""Hierarchical ellipsoid-bone rigs: skinning, occupancy, and retargeting."""

from boneforge.geometry import (
    DegenerateGeometryError,
    MeshFormatError,
    PointCloud,
    TriMesh,
    chamfer,
    eval_record,
    f_score,
    icp_align,
    load_mesh,
    sample_surface,
    save_mesh,
)
from boneforge.occupancy import (
    MaskFormatError,
    MaskImage,
    OccupancyConfig,
    PinholeCamera,
    camera_from_dict,
    camera_to_dict,
    coverage_loss,
    load_mask,
    look_at,
    overlap_loss,
    render_bone_mask,
    save_mask,
    unified_occ,
)
from boneforge.optimizer import (
    FitData,
    OptimConfig,
    RetargetReport,
    coarse_to_fine,
    fit_bones,
    grow_depth,
    retarget,
)
from boneforge.rig import (
    Bone,
    Pose,
    PoseCoverageError,
    Rig,
    RigError,
    RigidTransform,
    SchemaError,
    add_child_bones,
    build_rig,
    canonical_pose,
    compose_world,
    delete_subtree,
    flatten_rig,
    leaf_bones,
    load_rig,
    save_rig,
)
from boneforge.skinning import (
    DeltaWeights,
    SkinnedSurface,
    backward_warp,
    bone_distances,
    forward_warp,
    pose_surface,
    skin_surface,
    skinning_weights,
)
from boneforge.synth import ScenarioData, SynthScenario, make_scenario, perturb_pose

__version__ = "0.1.0"

__all__ = [
    "Bone",
    "DegenerateGeometryError",
    "DeltaWeights",
    "FitData",
    "MaskFormatError",
    "MaskImage",
    "MeshFormatError",
    "OccupancyConfig",
    "OptimConfig",
    "PinholeCamera",
    "PointCloud",
    "Pose",
    "PoseCoverageError",
    "RetargetReport",
    "Rig",
    "RigError",
    "RigidTransform",
    "ScenarioData",
    "SchemaError",
    "SkinnedSurface",
    "SynthScenario",
    "TriMesh",
    "add_child_bones",
    "backward_warp",
    "bone_distances",
    "build_rig",
    "camera_from_dict",
    "camera_to_dict",
    "canonical_pose",
    "chamfer",
    "coarse_to_fine",
    "compose_world",
    "coverage_loss",
    "delete_subtree",
    "eval_record",
    "f_score",
    "fit_bones",
    "flatten_rig",
    "forward_warp",
    "grow_depth",
    "icp_align",
    "leaf_bones",
    "load_mask",
    "load_mesh",
    "load_rig",
    "look_at",
    "make_scenario",
    "overlap_loss",
    "perturb_pose",
    "pose_surface",
    "render_bone_mask",
    "retarget",
    "sample_surface",
    "save_mask",
    "save_mesh",
    "save_rig",
    "skin_surface",
    "skinning_weights",
    "unified_occ",
]
