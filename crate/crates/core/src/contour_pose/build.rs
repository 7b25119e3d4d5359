use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pose::{kp, PoseFrame, NUM_KEYPOINTS};
use crate::error::{Error, Result};
use crate::geometry::ApproxContour;

/// Contour points anchored to every keypoint.
pub const POINTS_PER_KEYPOINT: usize = 10;
/// Slots per keypoint group: the keypoint followed by its contour points.
pub const GROUP_SIZE: usize = POINTS_PER_KEYPOINT + 1;
pub const CONTOUR_POSE_POINTS: usize = NUM_KEYPOINTS * GROUP_SIZE;
pub const CONTOUR_POSE_EDGES: usize = NUM_KEYPOINTS * (2 * POINTS_PER_KEYPOINT - 1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    /// 15 keypoint groups of 11 points.
    ContourPose,
    /// Ring of uniformly spaced contour points, no keypoints.
    UniformRing,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    Clockwise,
    Shuffled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContourPoseFrame {
    pub points: Vec<[f64; 2]>,
    /// Undirected index pairs, smaller index first.
    pub edges: Vec<[usize; 2]>,
    /// For every non-keypoint slot in order, the index of the chosen point in
    /// the source contour. Empty when loaded from disk.
    pub contour_indices: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContourPoseSequence {
    pub frames: Vec<ContourPoseFrame>,
    pub kind: GraphKind,
    pub ordering: Ordering,
    pub subject_id: Option<String>,
    pub view_id: Option<String>,
}

impl ContourPoseSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn points_per_frame(&self) -> usize {
        self.frames.first().map_or(0, |f| f.points.len())
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        self.frames.first().map_or(&[], |f| &f.edges)
    }

    /// `len` consecutive frames from `start`, wrapping cyclically past the end.
    pub fn window(&self, start: usize, len: usize) -> ContourPoseSequence {
        let n = self.frames.len().max(1);
        ContourPoseSequence {
            frames: (0..len).map(|i| self.frames[(start + i) % n].clone()).collect(),
            kind: self.kind,
            ordering: self.ordering,
            subject_id: self.subject_id.clone(),
            view_id: self.view_id.clone(),
        }
    }

    /// Fixed-length view: the centered window when longer than `len`,
    /// cyclic repetition from the first frame when shorter.
    pub fn center_clip(&self, len: usize) -> ContourPoseSequence {
        self.window(self.len().saturating_sub(len) / 2, len)
    }

    /// All frames share one point count and one edge list.
    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.frames.first() else {
            return Err(Error::InsufficientData("sequence has no frames".into()));
        };
        for f in &self.frames {
            if f.points.len() != first.points.len() {
                return Err(Error::LengthMismatch(first.points.len(), f.points.len()));
            }
            if f.edges != first.edges {
                return Err(Error::shape("frames disagree on the edge list"));
            }
        }
        if self.kind == GraphKind::ContourPose && first.points.len() != CONTOUR_POSE_POINTS {
            return Err(Error::LengthMismatch(CONTOUR_POSE_POINTS, first.points.len()));
        }
        Ok(())
    }
}

/// Edges of the Contour-Pose graph: every keypoint to each of its contour
/// points, and consecutive contour points within a group.
pub fn contour_pose_edges() -> Vec<[usize; 2]> {
    let mut edges = Vec::with_capacity(CONTOUR_POSE_EDGES);
    for k in 0..NUM_KEYPOINTS {
        let base = k * GROUP_SIZE;
        for j in 1..=POINTS_PER_KEYPOINT {
            edges.push([base, base + j]);
        }
        for j in 1..POINTS_PER_KEYPOINT {
            edges.push([base + j, base + j + 1]);
        }
    }
    edges
}

/// Ring over `n` points: `i -- i+1` and the closing edge.
pub fn ring_edges(n: usize) -> Vec<[usize; 2]> {
    match n {
        0 | 1 => Vec::new(),
        2 => vec![[0, 1]],
        _ => (0..n).map(|i| [i.min((i + 1) % n), i.max((i + 1) % n)]).collect(),
    }
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    dx * dx + dy * dy
}

/// Angle of `c` about `k` in image coordinates; increasing angle runs
/// clockwise on screen.
pub fn clockwise_angle(k: [f64; 2], c: [f64; 2]) -> f64 {
    (c[1] - k[1]).atan2(c[0] - k[0])
}

/// Indices of the `POINTS_PER_KEYPOINT` contour points nearest to `anchor`,
/// in clockwise order about it.
pub fn select_anchored(contour: &[[f64; 2]], anchor: [f64; 2]) -> Vec<usize> {
    let mut by_dist: Vec<(f64, usize)> = contour
        .iter()
        .enumerate()
        .map(|(i, &c)| (dist2(anchor, c), i))
        .collect();
    by_dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut chosen: Vec<(f64, f64, usize)> = by_dist[..POINTS_PER_KEYPOINT]
        .iter()
        .map(|&(d, i)| (clockwise_angle(anchor, contour[i]), d, i))
        .collect();
    chosen.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    chosen.into_iter().map(|c| c.2).collect()
}

/// Anchors every keypoint with its 10 nearest contour points, clockwise.
pub fn build_contour_pose(contour: &ApproxContour, pose: &PoseFrame) -> Result<ContourPoseFrame> {
    if contour.len() < POINTS_PER_KEYPOINT {
        return Err(Error::TooFewContourPoints {
            needed: POINTS_PER_KEYPOINT,
            got: contour.len(),
        });
    }
    let pts = contour.points_f64();
    let mut points = Vec::with_capacity(CONTOUR_POSE_POINTS);
    let mut contour_indices = Vec::with_capacity(NUM_KEYPOINTS * POINTS_PER_KEYPOINT);
    for &anchor in &pose.keypoints {
        points.push(anchor);
        for i in select_anchored(&pts, anchor) {
            points.push(pts[i]);
            contour_indices.push(i);
        }
    }
    Ok(ContourPoseFrame {
        points,
        edges: contour_pose_edges(),
        contour_indices,
    })
}

/// Per-frame [`build_contour_pose`].
pub fn build_sequence(
    contours: &[ApproxContour],
    poses: &[PoseFrame],
    subject_id: Option<String>,
    view_id: Option<String>,
) -> Result<ContourPoseSequence> {
    if contours.len() != poses.len() {
        return Err(Error::LengthMismatch(contours.len(), poses.len()));
    }
    if contours.is_empty() {
        return Err(Error::InsufficientData("sequence has no frames".into()));
    }
    let frames = contours
        .iter()
        .zip(poses)
        .enumerate()
        .map(|(t, (c, p))| build_contour_pose(c, p).map_err(Error::at_frame(t)))
        .collect::<Result<_>>()?;
    Ok(ContourPoseSequence {
        frames,
        kind: GraphKind::ContourPose,
        ordering: Ordering::Clockwise,
        subject_id,
        view_id,
    })
}

/// `n` contour points at uniform cyclic index spacing, connected as a ring.
pub fn sample_uniform_contour(contour: &ApproxContour, n: usize) -> Result<ContourPoseFrame> {
    let len = contour.len();
    if len < n || n == 0 {
        return Err(Error::TooFewContourPoints {
            needed: n.max(1),
            got: len,
        });
    }
    let contour_indices: Vec<usize> = (0..n).map(|i| i * len / n).collect();
    let pts = contour.points_f64();
    Ok(ContourPoseFrame {
        points: contour_indices.iter().map(|&i| pts[i]).collect(),
        edges: ring_edges(n),
        contour_indices,
    })
}

fn shuffle_groups(frame: &mut ContourPoseFrame, rng: &mut ChaCha8Rng) {
    let mut perm: Vec<usize> = (0..POINTS_PER_KEYPOINT).collect();
    let has_indices = frame.contour_indices.len() == NUM_KEYPOINTS * POINTS_PER_KEYPOINT;
    for k in 0..frame.points.len() / GROUP_SIZE {
        perm.shuffle(rng);
        let base = k * GROUP_SIZE + 1;
        let old: Vec<[f64; 2]> = frame.points[base..base + POINTS_PER_KEYPOINT].to_vec();
        for (slot, &src) in perm.iter().enumerate() {
            frame.points[base + slot] = old[src];
        }
        if has_indices {
            let ib = k * POINTS_PER_KEYPOINT;
            let old: Vec<usize> = frame.contour_indices[ib..ib + POINTS_PER_KEYPOINT].to_vec();
            for (slot, &src) in perm.iter().enumerate() {
                frame.contour_indices[ib + slot] = old[src];
            }
        }
    }
}

/// Randomly permutes the contour points inside every keypoint group.
pub fn shuffle_ordering(frame: &ContourPoseFrame, seed: u64) -> ContourPoseFrame {
    let mut out = frame.clone();
    shuffle_groups(&mut out, &mut ChaCha8Rng::seed_from_u64(seed));
    out
}

/// Shuffles every frame with an independent permutation drawn from one
/// seeded stream, so the order also changes from frame to frame.
pub fn shuffle_sequence(seq: &ContourPoseSequence, seed: u64) -> ContourPoseSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = seq.clone();
    for f in &mut out.frames {
        shuffle_groups(f, &mut rng);
    }
    out.ordering = Ordering::Shuffled;
    out
}

/// Replaces keypoints with confidence below the threshold by the same
/// keypoint from the nearest frame where it is valid (earlier frame on ties),
/// or by the centroid of that frame's contour when no frame has it.
pub fn fill_missing_keypoints(poses: &[PoseFrame], contours: &[ApproxContour]) -> Result<Vec<PoseFrame>> {
    if poses.len() != contours.len() {
        return Err(Error::LengthMismatch(poses.len(), contours.len()));
    }
    let mut out = poses.to_vec();
    for k in 0..NUM_KEYPOINTS {
        let valid: Vec<usize> = (0..poses.len()).filter(|&t| poses[t].is_valid(k)).collect();
        for t in 0..poses.len() {
            if poses[t].is_valid(k) {
                continue;
            }
            let nearest = valid.iter().copied().min_by_key(|&v| (v.abs_diff(t), v));
            out[t].keypoints[k] = match nearest {
                Some(v) => poses[v].keypoints[k],
                None => centroid(&contours[t].points_f64()),
            };
        }
    }
    Ok(out)
}

fn centroid(points: &[[f64; 2]]) -> [f64; 2] {
    let n = points.len().max(1) as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
    [sx / n, sy / n]
}

/// Mid-hip origin and torso length (mid-shoulder to mid-hip) of a pose.
/// Degenerate torsos fall back to unit scale.
pub fn torso_frame(pose: &PoseFrame) -> ([f64; 2], f64) {
    let mid = |a: usize, b: usize| {
        let (p, q) = (pose.keypoints[a], pose.keypoints[b]);
        [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0]
    };
    let hip = mid(kp::L_HIP, kp::R_HIP);
    let shoulder = mid(kp::L_SHOULDER, kp::R_SHOULDER);
    let torso = dist2(hip, shoulder).sqrt();
    (hip, if torso > 1e-9 { torso } else { 1.0 })
}

/// Expresses every frame relative to its pose: mid-hip at the origin, unit
/// torso length.
pub fn normalize_sequence(seq: &mut ContourPoseSequence, poses: &[PoseFrame]) -> Result<()> {
    if seq.frames.len() != poses.len() {
        return Err(Error::LengthMismatch(seq.frames.len(), poses.len()));
    }
    for (frame, pose) in seq.frames.iter_mut().zip(poses) {
        let (origin, scale) = torso_frame(pose);
        for p in &mut frame.points {
            *p = [(p[0] - origin[0]) / scale, (p[1] - origin[1]) / scale];
        }
    }
    Ok(())
}
