"""Two-stage scene optimization package."""
from .stages import (AppearanceStage, GeometryStage, StageConfig, StepReport,
                     gsds_residual, gsds_step, isd_residual, isd_step,
                     run_stage1, run_stage2)
from .state import (CHECKPOINT_MAGIC, CHECKPOINT_VERSION, STAGE_APPEARANCE_DONE,
                    STAGE_GEOMETRY_DONE, STAGE_INITIALIZED, ObjectTensors, SceneState,
                    initialize_state, load_checkpoint, save_checkpoint)
from .targets import (ConditionSource, LayoutOracleConditionSource,
                      SnapshotConditionSource, StateConditionSource,
                      appearance_latent_image, bundle_to_condition_images,
                      geometry_latent_image)

__all__ = [
    "AppearanceStage", "CHECKPOINT_MAGIC", "CHECKPOINT_VERSION", "ConditionSource",
    "GeometryStage", "LayoutOracleConditionSource", "ObjectTensors",
    "STAGE_APPEARANCE_DONE", "STAGE_GEOMETRY_DONE", "STAGE_INITIALIZED", "SceneState",
    "SnapshotConditionSource", "StageConfig", "StateConditionSource", "StepReport",
    "appearance_latent_image", "bundle_to_condition_images", "geometry_latent_image",
    "gsds_residual", "gsds_step", "initialize_state", "isd_residual", "isd_step",
    "load_checkpoint", "run_stage1", "run_stage2", "save_checkpoint",
]
