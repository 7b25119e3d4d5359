use serde::{Deserialize, Serialize};

use crate::contour_pose::{kp, GROUP_SIZE, NUM_KEYPOINTS};
use crate::error::{Error, Result};
use crate::features::ChannelSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Embedded feature channels entering the first Local-CPT block.
    pub input_channels: usize,
    pub local_channels: Vec<usize>,
    pub global_channels: Vec<usize>,
    pub heads: usize,
    pub ta_kernel: usize,
    /// Width of the regional embedding; equals the first local block's output.
    pub embed_dim: usize,
    pub bn_momentum: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_channels: ChannelSpec::default().embedded_channels(),
            local_channels: vec![64, 64, 128],
            global_channels: vec![256],
            heads: 4,
            ta_kernel: 3,
            embed_dim: 64,
            bn_momentum: 0.1,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn embedding_dim(&self) -> usize {
        *self.global_channels.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.local_channels.is_empty() || self.global_channels.is_empty() {
            return bad("model needs at least one local and one global block".into());
        }
        if self.embed_dim != self.local_channels[0] {
            return bad(format!(
                "embed_dim {} must equal the first local block width {}",
                self.embed_dim, self.local_channels[0]
            ));
        }
        if self.ta_kernel.is_multiple_of(2) {
            return bad(format!("ta_kernel must be odd, got {}", self.ta_kernel));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad("bn_momentum must be in [0, 1]".into());
        }
        // Each block attends at its input width.
        let widths = std::iter::once(self.input_channels)
            .chain(self.local_channels.iter().copied())
            .chain(self.global_channels.iter().copied());
        for c in widths {
            if c == 0 || self.heads == 0 || c % self.heads != 0 {
                return bad(format!("channel width {c} not divisible by {} heads", self.heads));
            }
        }
        Ok(())
    }
}

/// Body regions in concatenation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Head,
    LeftArm,
    RightArm,
    LeftLeg,
    RightLeg,
}

pub const NUM_REGIONS: usize = 5;
pub const REGION_KEYPOINTS: usize = 3;
pub const REGION_POINTS: usize = REGION_KEYPOINTS * GROUP_SIZE;

impl Region {
    pub const ALL: [Region; NUM_REGIONS] = [
        Region::Head,
        Region::LeftArm,
        Region::RightArm,
        Region::LeftLeg,
        Region::RightLeg,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Region> {
        Region::ALL.get(i).copied().ok_or(Error::UnknownRegion(i))
    }

    pub fn keypoints(self) -> [usize; REGION_KEYPOINTS] {
        use kp::*;
        match self {
            Region::Head => [NOSE, L_EAR, R_EAR],
            Region::LeftArm => [L_SHOULDER, L_ELBOW, L_WRIST],
            Region::RightArm => [R_SHOULDER, R_ELBOW, R_WRIST],
            Region::LeftLeg => [L_HIP, L_KNEE, L_ANKLE],
            Region::RightLeg => [R_HIP, R_KNEE, R_ANKLE],
        }
    }

    /// Contour-Pose slots of the region's three groups, in layout order.
    pub fn point_indices(self) -> Vec<usize> {
        self.keypoints()
            .iter()
            .flat_map(|&k| k * GROUP_SIZE..(k + 1) * GROUP_SIZE)
            .collect()
    }
}

const _: () = assert!(NUM_REGIONS * REGION_KEYPOINTS == NUM_KEYPOINTS);
