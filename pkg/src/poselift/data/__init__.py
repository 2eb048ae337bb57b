from .batching import Batch, eval_window_starts, flip_array, horizontal_flip, make_batches, root_relative
from .sequences import (
    Manifest,
    Pose2DSequence,
    Pose3DSequence,
    PoseSequence,
    SequenceFormatError,
    SequencePair,
    load_sequence,
    save_sequence,
)
from .synth import (
    ACTION_TEMPLATES,
    Camera,
    CameraError,
    SyntheticSceneConfig,
    forward_kinematics,
    generate_synthetic_sequence,
    pinhole_project,
    pinhole_project_points,
    sample_scene,
    write_synthetic_dataset,
)

__all__ = [
    "ACTION_TEMPLATES",
    "Batch",
    "Camera",
    "CameraError",
    "Manifest",
    "Pose2DSequence",
    "Pose3DSequence",
    "PoseSequence",
    "SequenceFormatError",
    "SequencePair",
    "SyntheticSceneConfig",
    "eval_window_starts",
    "flip_array",
    "forward_kinematics",
    "generate_synthetic_sequence",
    "horizontal_flip",
    "load_sequence",
    "make_batches",
    "pinhole_project",
    "pinhole_project_points",
    "root_relative",
    "sample_scene",
    "save_sequence",
    "write_synthetic_dataset",
]
