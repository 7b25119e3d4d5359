//! Contour-Pose construction: keypoints anchored with their nearest, clockwise
//! ordered contour points.

mod build;
mod cpz;
mod extract;
mod pose;

pub use build::{
    build_contour_pose, build_sequence, clockwise_angle, contour_pose_edges, fill_missing_keypoints,
    normalize_sequence, ring_edges, sample_uniform_contour, select_anchored, shuffle_ordering, shuffle_sequence,
    torso_frame, ContourPoseFrame, ContourPoseSequence, GraphKind, Ordering, CONTOUR_POSE_EDGES, CONTOUR_POSE_POINTS,
    GROUP_SIZE, POINTS_PER_KEYPOINT,
};
pub use cpz::{decode_cpz, encode_cpz, read_cpz, sidecar_path, write_cpz, CpzSidecar};
pub use extract::{extract_sequence, ExtractMode, ExtractOptions, UNIFORM_BASELINE_POINTS};
pub use pose::{
    kp, reduce_head, PoseFile, PoseFileFrame, PoseFrame, COCO_NAMES, KEYPOINT_NAMES, MIN_CONFIDENCE, MIRROR,
    NUM_COCO_KEYPOINTS, NUM_KEYPOINTS,
};
