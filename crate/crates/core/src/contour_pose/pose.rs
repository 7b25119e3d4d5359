use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of keypoints kept per frame (COCO without the eyes).
pub const NUM_KEYPOINTS: usize = 15;
pub const NUM_COCO_KEYPOINTS: usize = 17;

pub const KEYPOINT_NAMES: [&str; NUM_KEYPOINTS] = [
    "nose",
    "l_ear",
    "r_ear",
    "l_shoulder",
    "r_shoulder",
    "l_elbow",
    "r_elbow",
    "l_wrist",
    "r_wrist",
    "l_hip",
    "r_hip",
    "l_knee",
    "r_knee",
    "l_ankle",
    "r_ankle",
];

pub const COCO_NAMES: [&str; NUM_COCO_KEYPOINTS] = [
    "nose",
    "l_eye",
    "r_eye",
    "l_ear",
    "r_ear",
    "l_shoulder",
    "r_shoulder",
    "l_elbow",
    "r_elbow",
    "l_wrist",
    "r_wrist",
    "l_hip",
    "r_hip",
    "l_knee",
    "r_knee",
    "l_ankle",
    "r_ankle",
];

pub mod kp {
    pub const NOSE: usize = 0;
    pub const L_EAR: usize = 1;
    pub const R_EAR: usize = 2;
    pub const L_SHOULDER: usize = 3;
    pub const R_SHOULDER: usize = 4;
    pub const L_ELBOW: usize = 5;
    pub const R_ELBOW: usize = 6;
    pub const L_WRIST: usize = 7;
    pub const R_WRIST: usize = 8;
    pub const L_HIP: usize = 9;
    pub const R_HIP: usize = 10;
    pub const L_KNEE: usize = 11;
    pub const R_KNEE: usize = 12;
    pub const L_ANKLE: usize = 13;
    pub const R_ANKLE: usize = 14;
}

/// Left/right partner of every keypoint (the nose maps to itself).
pub const MIRROR: [usize; NUM_KEYPOINTS] = [0, 2, 1, 4, 3, 6, 5, 8, 7, 10, 9, 12, 11, 14, 13];

/// Keypoints below this confidence are treated as missing.
pub const MIN_CONFIDENCE: f64 = 0.05;

/// One frame of 15 keypoints in pixel coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseFrame {
    pub keypoints: [[f64; 2]; NUM_KEYPOINTS],
    pub confidence: [f64; NUM_KEYPOINTS],
}

impl PoseFrame {
    pub fn new(keypoints: [[f64; 2]; NUM_KEYPOINTS], confidence: [f64; NUM_KEYPOINTS]) -> Result<Self> {
        if keypoints.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::format("pose", "non-finite keypoint coordinate"));
        }
        if confidence.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::format("pose", "confidence outside [0, 1]"));
        }
        Ok(PoseFrame { keypoints, confidence })
    }

    pub fn is_valid(&self, k: usize) -> bool {
        self.confidence[k] >= MIN_CONFIDENCE
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let mut out = self.clone();
        for p in &mut out.keypoints {
            p[0] += dx;
            p[1] += dy;
        }
        out
    }
}

/// Drops the two eye keypoints from a 17-point COCO frame of `[x, y, conf]`.
pub fn reduce_head(coco: &[[f64; 3]]) -> Result<PoseFrame> {
    if coco.len() != NUM_COCO_KEYPOINTS {
        return Err(Error::InvalidKeypointCount {
            expected: NUM_COCO_KEYPOINTS,
            got: coco.len(),
        });
    }
    let mut keypoints = [[0.0; 2]; NUM_KEYPOINTS];
    let mut confidence = [0.0; NUM_KEYPOINTS];
    let kept = coco
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != 1 && *i != 2)
        .map(|(_, p)| p);
    for (k, p) in kept.enumerate() {
        keypoints[k] = [p[0], p[1]];
        confidence[k] = p[2];
    }
    PoseFrame::new(keypoints, confidence)
}

/// On-disk pose sequence: `{"frames":[{"keypoints":[[x,y,conf] x 17]}]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view_id: Option<String>,
    pub frames: Vec<PoseFileFrame>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseFileFrame {
    pub keypoints: Vec<[f64; 3]>,
}

impl PoseFile {
    pub fn to_frames(&self) -> Result<Vec<PoseFrame>> {
        self.frames.iter().map(|f| reduce_head(&f.keypoints)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eyes_are_dropped() {
        let coco: Vec<[f64; 3]> = (0..17).map(|i| [i as f64, -(i as f64), 1.0]).collect();
        let p = reduce_head(&coco).unwrap();
        let xs: Vec<f64> = p.keypoints.iter().map(|k| k[0]).collect();
        assert_eq!(xs, [0., 3., 4., 5., 6., 7., 8., 9., 10., 11., 12., 13., 14., 15., 16.]);
        for (name, coco_idx) in KEYPOINT_NAMES
            .iter()
            .zip([0, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16])
        {
            assert_eq!(*name, COCO_NAMES[coco_idx]);
        }
    }

    #[test]
    fn wrong_count_is_rejected() {
        let coco = vec![[0.0, 0.0, 1.0]; 15];
        assert!(matches!(
            reduce_head(&coco),
            Err(Error::InvalidKeypointCount { expected: 17, got: 15 })
        ));
    }

    #[test]
    fn mirror_is_an_involution_swapping_sides() {
        for k in 0..NUM_KEYPOINTS {
            assert_eq!(MIRROR[MIRROR[k]], k);
            let (a, b) = (KEYPOINT_NAMES[k], KEYPOINT_NAMES[MIRROR[k]]);
            assert_eq!(a.trim_start_matches(['l', 'r']), b.trim_start_matches(['l', 'r']));
        }
    }
}
