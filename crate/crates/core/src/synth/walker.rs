use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::contour_pose::{reduce_head, PoseFile, PoseFileFrame, PoseFrame, NUM_COCO_KEYPOINTS};
use crate::error::{Error, Result};
use crate::geometry::{fill_holes, SilhouetteFrame};

pub const DEFAULT_FRAME_SIZE: (usize, usize) = (256, 256);

/// Segment lengths in pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimbLengths {
    /// Mid-hip to neck.
    pub torso: f64,
    /// Neck to head center.
    pub head: f64,
    /// Half distance between the shoulders as seen by the camera.
    pub shoulder_offset: f64,
    /// Half distance between the hips as seen by the camera.
    pub hip_offset: f64,
    pub upper_arm: f64,
    pub forearm: f64,
    pub thigh: f64,
    pub shin: f64,
}

impl LimbLengths {
    pub fn to_array(&self) -> [f64; 8] {
        [
            self.torso,
            self.head,
            self.shoulder_offset,
            self.hip_offset,
            self.upper_arm,
            self.forearm,
            self.thigh,
            self.shin,
        ]
    }
}

/// Capsule radii in pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyWidths {
    pub torso: f64,
    pub neck: f64,
    pub head: f64,
    pub upper_arm: f64,
    pub forearm: f64,
    pub thigh: f64,
    pub shin: f64,
    pub foot: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkerIdentity {
    pub limbs: LimbLengths,
    pub widths: BodyWidths,
    pub foot_length: f64,
    /// Gait cycles per frame.
    pub gait_freq: f64,
    /// Thigh swing amplitude in radians.
    pub stride_amp: f64,
    /// Upper-arm swing amplitude in radians.
    pub arm_amp: f64,
    pub phase_offset: f64,
}

impl Default for WalkerIdentity {
    fn default() -> Self {
        WalkerIdentity {
            limbs: LimbLengths {
                torso: 48.0,
                head: 16.0,
                shoulder_offset: 5.0,
                hip_offset: 2.5,
                upper_arm: 28.0,
                forearm: 25.0,
                thigh: 42.0,
                shin: 40.0,
            },
            widths: BodyWidths {
                torso: 11.0,
                neck: 5.0,
                head: 9.0,
                upper_arm: 5.0,
                forearm: 4.0,
                thigh: 7.0,
                shin: 5.0,
                foot: 3.0,
            },
            foot_length: 8.0,
            gait_freq: 1.0 / 30.0,
            stride_amp: 0.4,
            arm_amp: 0.35,
            phase_offset: 0.0,
        }
    }
}

impl WalkerIdentity {
    pub fn validate(&self) -> Result<()> {
        let w = &self.widths;
        let positive = self
            .limbs
            .to_array()
            .iter()
            .chain(&[
                w.torso,
                w.neck,
                w.head,
                w.upper_arm,
                w.forearm,
                w.thigh,
                w.shin,
                w.foot,
                self.foot_length,
            ])
            .all(|&v| v > 0.0 && v.is_finite());
        if !positive {
            return Err(Error::InvalidConfig(
                "walker lengths and widths must be positive".into(),
            ));
        }
        if !(self.gait_freq > 0.0 && self.gait_freq < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "gait_freq {} outside (0, 0.5)",
                self.gait_freq
            )));
        }
        if w.head < 2.0 {
            return Err(Error::InvalidConfig("head radius must be at least 2 px".into()));
        }
        Ok(())
    }

    fn phase(&self, t: usize) -> f64 {
        2.0 * PI * self.gait_freq * t as f64 + self.phase_offset
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WalkerSequence {
    pub silhouettes: Vec<SilhouetteFrame>,
    /// COCO-ordered `[x, y, conf]` keypoints, 17 per frame.
    pub poses: Vec<Vec<[f64; 3]>>,
    pub identity: WalkerIdentity,
    pub seed: u64,
}

impl WalkerSequence {
    pub fn pose_frames(&self) -> Result<Vec<PoseFrame>> {
        self.poses.iter().map(|p| reduce_head(p)).collect()
    }

    pub fn pose_file(&self, subject_id: Option<String>) -> PoseFile {
        PoseFile {
            subject_id,
            view_id: None,
            frames: self
                .poses
                .iter()
                .map(|k| PoseFileFrame { keypoints: k.clone() })
                .collect(),
        }
    }
}

struct Capsule {
    a: [f64; 2],
    b: [f64; 2],
    r: f64,
}

struct Skeleton {
    coco: [[f64; 2]; NUM_COCO_KEYPOINTS],
    capsules: Vec<Capsule>,
}

fn add(p: [f64; 2], q: [f64; 2]) -> [f64; 2] {
    [p[0] + q[0], p[1] + q[1]]
}

/// Offset of `len` along an angle measured from straight down, positive forward (+x).
fn limb(len: f64, angle: f64) -> [f64; 2] {
    [len * angle.sin(), len * angle.cos()]
}

fn skeleton(id: &WalkerIdentity, t: usize, center: [f64; 2]) -> Skeleton {
    let (l, w) = (&id.limbs, &id.widths);
    let phi = id.phase(t);
    let hip = center;
    let neck = add(hip, [0.0, -l.torso]);
    let head = add(neck, limb(l.head, PI - 0.12));
    let r = w.head;

    let mut capsules = vec![
        Capsule {
            a: hip,
            b: neck,
            r: w.torso,
        },
        Capsule {
            a: neck,
            b: head,
            r: w.neck,
        },
        Capsule { a: head, b: head, r },
    ];
    let mut joints = [[0.0; 2]; 12];
    // Left side is drawn nearer to the viewer (+x), right side in antiphase.
    for (side, sign) in [(0usize, 1.0), (1, -1.0)] {
        let ph = phi + side as f64 * PI;
        let shoulder = add(neck, [sign * l.shoulder_offset, 0.0]);
        let upper = -id.arm_amp * ph.sin();
        let elbow_bend = 0.25 + 0.3 * id.arm_amp * (1.0 - ph.sin());
        let elbow = add(shoulder, limb(l.upper_arm, upper));
        let wrist = add(elbow, limb(l.forearm, upper + elbow_bend));

        let hip_s = add(hip, [sign * l.hip_offset, 0.0]);
        let thigh = id.stride_amp * ph.sin();
        // The knee bends during swing (thigh moving forward) and is straight in stance.
        let knee_flex = 1.2 * id.stride_amp * (ph + PI / 4.0).cos().max(0.0);
        let shin = thigh - knee_flex;
        let knee = add(hip_s, limb(l.thigh, thigh));
        let ankle = add(knee, limb(l.shin, shin));
        let toe = add(ankle, [id.foot_length * shin.cos(), -id.foot_length * shin.sin()]);

        capsules.extend([
            Capsule {
                a: shoulder,
                b: elbow,
                r: w.upper_arm,
            },
            Capsule {
                a: elbow,
                b: wrist,
                r: w.forearm,
            },
            Capsule {
                a: hip_s,
                b: knee,
                r: w.thigh,
            },
            Capsule {
                a: knee,
                b: ankle,
                r: w.shin,
            },
            Capsule {
                a: ankle,
                b: toe,
                r: w.foot,
            },
        ]);
        for (slot, p) in [shoulder, elbow, wrist, hip_s, knee, ankle].into_iter().enumerate() {
            joints[slot * 2 + side] = p;
        }
    }
    capsules.push(Capsule {
        a: joints[0],
        b: joints[1],
        r: w.upper_arm,
    });
    capsules.push(Capsule {
        a: joints[6],
        b: joints[7],
        r: w.thigh,
    });

    let mut coco = [[0.0; 2]; NUM_COCO_KEYPOINTS];
    coco[0] = add(head, [0.6 * r, 0.1 * r]);
    coco[1] = add(head, [0.45 * r, -0.3 * r]);
    coco[2] = add(head, [0.3 * r, -0.35 * r]);
    coco[3] = add(head, [-0.1 * r, -0.05 * r]);
    coco[4] = add(head, [-0.45 * r, 0.05 * r]);
    coco[5..].copy_from_slice(&joints);
    Skeleton { coco, capsules }
}

fn rasterize(capsules: &[Capsule], height: usize, width: usize) -> SilhouetteFrame {
    let mut frame = SilhouetteFrame::empty(height, width);
    for c in capsules {
        let x0 = (c.a[0].min(c.b[0]) - c.r).floor().max(0.0) as usize;
        let x1 = ((c.a[0].max(c.b[0]) + c.r).ceil() as usize).min(width - 1);
        let y0 = (c.a[1].min(c.b[1]) - c.r).floor().max(0.0) as usize;
        let y1 = ((c.a[1].max(c.b[1]) + c.r).ceil() as usize).min(height - 1);
        let (dx, dy) = (c.b[0] - c.a[0], c.b[1] - c.a[1]);
        let len2 = dx * dx + dy * dy;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (px, py) = (x as f64 - c.a[0], y as f64 - c.a[1]);
                let t = if len2 > 0.0 {
                    ((px * dx + py * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (ex, ey) = (px - t * dx, py - t * dy);
                if ex * ex + ey * ey <= c.r * c.r {
                    frame.set(x, y, true);
                }
            }
        }
    }
    frame
}

fn inside_frame(capsules: &[Capsule], height: usize, width: usize) -> bool {
    capsules.iter().all(|c| {
        [c.a, c.b].iter().all(|p| {
            p[0] - c.r >= 1.0
                && p[1] - c.r >= 1.0
                && p[0] + c.r <= width as f64 - 2.0
                && p[1] + c.r <= height as f64 - 2.0
        })
    })
}

/// Renders `frames` frames of a walker whose mid-hip stays at the frame center.
/// Masks are the union of limb capsules with enclosed background filled.
///
/// Output is a function of the identity and frame count only; `seed` is
/// carried along so datasets can record which draw produced the sequence.
pub fn generate_walker(
    id: &WalkerIdentity,
    frames: usize,
    frame_size: (usize, usize),
    seed: u64,
) -> Result<WalkerSequence> {
    id.validate()?;
    let (height, width) = frame_size;
    if frames == 0 {
        return Err(Error::InvalidConfig("walker needs at least one frame".into()));
    }
    let center = [(width / 2) as f64, (height / 2) as f64];
    let mut silhouettes = Vec::with_capacity(frames);
    let mut poses = Vec::with_capacity(frames);
    for t in 0..frames {
        let sk = skeleton(id, t, center);
        if !inside_frame(&sk.capsules, height, width) {
            return Err(Error::FigureOutOfFrame { width, height });
        }
        // Limbs touching each other can enclose slivers of background; the
        // silhouette is kept solid.
        silhouettes.push(fill_holes(&rasterize(&sk.capsules, height, width)));
        poses.push(sk.coco.iter().map(|p| [p[0], p[1], 1.0]).collect());
    }
    Ok(WalkerSequence {
        silhouettes,
        poses,
        identity: id.clone(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keypoints_are_foreground() {
        let seq = generate_walker(&WalkerIdentity::default(), 30, DEFAULT_FRAME_SIZE, 0).unwrap();
        for (mask, pose) in seq.silhouettes.iter().zip(&seq.poses) {
            for p in pose {
                assert!(mask.get(p[0].round() as usize, p[1].round() as usize), "{p:?}");
            }
        }
    }

    #[test]
    fn small_frame_is_rejected() {
        let err = generate_walker(&WalkerIdentity::default(), 2, (100, 100), 0).unwrap_err();
        assert!(matches!(
            err,
            Error::FigureOutOfFrame {
                width: 100,
                height: 100
            }
        ));
    }

    #[test]
    fn invalid_identity() {
        let mut id = WalkerIdentity::default();
        id.gait_freq = 0.5;
        assert!(generate_walker(&id, 2, DEFAULT_FRAME_SIZE, 0).is_err());
        let mut id = WalkerIdentity::default();
        id.limbs.shin = 0.0;
        assert!(generate_walker(&id, 2, DEFAULT_FRAME_SIZE, 0).is_err());
    }
}
