//! Per-point feature channels, sinusoidal embedding and training-time
//! augmentation.

mod augment;

pub use augment::{augment, hflip, AugmentConfig};

use serde::{Deserialize, Serialize};

use crate::contour_pose::{kp, ContourPoseSequence, GraphKind, GROUP_SIZE};
use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// Two-channel feature groups in channel order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    /// Raw coordinates.
    Position,
    /// Offset from the nose (ring graphs: from the frame centroid).
    RelativeToNose,
    /// Offset from the anchoring keypoint; zero on keypoint slots (ring
    /// graphs: previous ring point minus the point).
    Edge,
    /// Change since the previous frame; zero in the first frame.
    Velocity,
    /// Next clockwise point of the group minus the point; keypoint slots use
    /// their first contour point (ring graphs: next ring point).
    Neighbor,
}

pub const FEATURE_GROUPS: [FeatureGroup; 5] = [
    FeatureGroup::Position,
    FeatureGroup::RelativeToNose,
    FeatureGroup::Edge,
    FeatureGroup::Velocity,
    FeatureGroup::Neighbor,
];

pub const RAW_CHANNELS: usize = 2 * FEATURE_GROUPS.len();

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSpec {
    /// Octave frequencies per scalar; each contributes a sine and a cosine.
    pub bands: usize,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        ChannelSpec { bands: 2 }
    }
}

impl ChannelSpec {
    pub fn embedded_channels(&self) -> usize {
        RAW_CHANNELS * 2 * self.bands
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands == 0 {
            return Err(Error::InvalidConfig("channels.bands must be positive".into()));
        }
        Ok(())
    }
}

/// `[T, P, 10]` feature tensor of a sequence.
pub fn expand_channels(seq: &ContourPoseSequence) -> Result<Tensor> {
    seq.validate()?;
    let (t_len, p) = (seq.len(), seq.points_per_frame());
    let mut out = vec![0.0; t_len * p * RAW_CHANNELS];
    for (t, frame) in seq.frames.iter().enumerate() {
        let pts = &frame.points;
        let reference = match seq.kind {
            GraphKind::ContourPose => pts[kp::NOSE * GROUP_SIZE],
            GraphKind::UniformRing => {
                let (sx, sy) = pts.iter().fold((0.0, 0.0), |(x, y), q| (x + q[0], y + q[1]));
                [sx / p as f64, sy / p as f64]
            }
        };
        for (i, &pt) in pts.iter().enumerate() {
            let (edge, neighbor) = match seq.kind {
                GraphKind::ContourPose => {
                    let (group, slot) = (i / GROUP_SIZE, i % GROUP_SIZE);
                    let next = if slot + 1 < GROUP_SIZE {
                        i + 1
                    } else {
                        group * GROUP_SIZE + 1
                    };
                    let edge = if slot == 0 {
                        [0.0; 2]
                    } else {
                        sub(pt, pts[group * GROUP_SIZE])
                    };
                    (edge, sub(pts[next], pt))
                }
                GraphKind::UniformRing => (sub(pts[(i + p - 1) % p], pt), sub(pts[(i + 1) % p], pt)),
            };
            let velocity = if t == 0 {
                [0.0; 2]
            } else {
                sub(pt, seq.frames[t - 1].points[i])
            };
            let groups = [pt, sub(pt, reference), edge, velocity, neighbor];
            let base = (t * p + i) * RAW_CHANNELS;
            for (g, v) in groups.iter().enumerate() {
                out[base + 2 * g] = v[0];
                out[base + 2 * g + 1] = v[1];
            }
        }
    }
    Tensor::new(&[t_len, p, RAW_CHANNELS], out)
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

/// Replaces every scalar `v` by `sin(2^b π v), cos(2^b π v)` for
/// `b = 0..bands`, keeping the channels of one scalar adjacent.
pub fn sinusoidal_embed(features: &Tensor, bands: usize) -> Result<Tensor> {
    let shape = features.shape();
    let Some((&c, lead)) = shape.split_last() else {
        return Err(Error::shape("embedding needs a channel axis"));
    };
    let mut out_shape = lead.to_vec();
    out_shape.push(c * 2 * bands);
    let mut out = Vec::with_capacity(features.numel() * 2 * bands);
    for &v in features.data() {
        for b in 0..bands {
            let w = std::f64::consts::PI * (1u64 << b) as f64 * v;
            out.push(w.sin());
            out.push(w.cos());
        }
    }
    Tensor::new(&out_shape, out)
}

/// Network input for a sequence: expanded then embedded, `[T, P, C_embed]`.
pub fn sequence_features(seq: &ContourPoseSequence, spec: &ChannelSpec) -> Result<Tensor> {
    sinusoidal_embed(&expand_channels(seq)?, spec.bands)
}
