use serde::{Deserialize, Serialize};

use super::build::{
    build_sequence, fill_missing_keypoints, normalize_sequence, sample_uniform_contour, shuffle_sequence,
    ContourPoseSequence, GraphKind, Ordering,
};
use super::pose::PoseFrame;
use crate::error::{Error, Result};
use crate::geometry::{approximate_dominant_points, trace_border, ApproxConfig, ApproxContour, SilhouetteFrame};

/// Point count of the uniform contour baseline.
pub const UNIFORM_BASELINE_POINTS: usize = 112;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractMode {
    ContourPose,
    /// Uniformly spaced contour ring of the given size.
    Uniform(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractOptions {
    pub approx: ApproxConfig,
    pub mode: ExtractMode,
    /// Shuffle contour points within groups (ordering ablation).
    pub shuffle_seed: Option<u64>,
    /// Mid-hip origin and unit torso length per frame.
    pub normalize: bool,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            approx: ApproxConfig::default(),
            mode: ExtractMode::ContourPose,
            shuffle_seed: None,
            normalize: true,
        }
    }
}

/// Approximated contours of every mask; errors name the failing frame.
pub fn approximate_frames(masks: &[SilhouetteFrame], cfg: &ApproxConfig) -> Result<Vec<ApproxContour>> {
    masks
        .iter()
        .enumerate()
        .map(|(t, m)| {
            trace_border(m)
                .and_then(|c| approximate_dominant_points(&c, cfg))
                .map_err(Error::at_frame(t))
        })
        .collect()
}

/// Masks and poses of one sequence to its (normalized) graph representation.
pub fn extract_sequence(
    masks: &[SilhouetteFrame],
    poses: &[PoseFrame],
    opts: &ExtractOptions,
    subject_id: Option<String>,
    view_id: Option<String>,
) -> Result<ContourPoseSequence> {
    if masks.len() != poses.len() {
        return Err(Error::LengthMismatch(masks.len(), poses.len()));
    }
    let contours = approximate_frames(masks, &opts.approx)?;
    let poses = fill_missing_keypoints(poses, &contours)?;
    let mut seq = match opts.mode {
        ExtractMode::ContourPose => build_sequence(&contours, &poses, subject_id, view_id)?,
        ExtractMode::Uniform(n) => ContourPoseSequence {
            frames: contours
                .iter()
                .enumerate()
                .map(|(t, c)| sample_uniform_contour(c, n).map_err(Error::at_frame(t)))
                .collect::<Result<_>>()?,
            kind: GraphKind::UniformRing,
            ordering: Ordering::Clockwise,
            subject_id,
            view_id,
        },
    };
    if opts.normalize {
        normalize_sequence(&mut seq, &poses)?;
    }
    if let (Some(seed), GraphKind::ContourPose) = (opts.shuffle_seed, seq.kind) {
        seq = shuffle_sequence(&seq, seed);
    }
    Ok(seq)
}
