use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::contour_pose::{clockwise_angle, ContourPoseSequence, GraphKind, Ordering, GROUP_SIZE, MIRROR};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Standard deviation of coordinate noise, in normalized units.
    pub noise_std: f64,
    /// Probability, drawn once per sequence, of adding noise.
    pub noise_prob: f64,
    pub hflip_prob: f64,
    pub rng_seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            noise_std: 0.25,
            noise_prob: 0.3,
            hflip_prob: 0.01,
            rng_seed: 0,
        }
    }
}

impl AugmentConfig {
    /// No augmentation at all.
    pub fn disabled() -> Self {
        AugmentConfig {
            noise_std: 0.0,
            noise_prob: 0.0,
            hflip_prob: 0.0,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("noise_prob", self.noise_prob), ("hflip_prob", self.hflip_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("augment.{name} must be in [0, 1]")));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidConfig("augment.noise_std must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Noise and flip decisions are drawn from `rng` in a fixed order, so a
/// seeded generator makes the result reproducible.
pub fn augment(seq: &ContourPoseSequence, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<ContourPoseSequence> {
    cfg.validate()?;
    let mut out = seq.clone();
    if rng.random_bool(cfg.noise_prob) && cfg.noise_std > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_std).expect("validated std");
        for f in &mut out.frames {
            for p in &mut f.points {
                p[0] += normal.sample(rng);
                p[1] += normal.sample(rng);
            }
        }
    }
    if rng.random_bool(cfg.hflip_prob) {
        out = hflip(&out);
    }
    Ok(out)
}

/// Mirrors x, swaps left and right keypoint groups and restores clockwise
/// order inside each group (unless the sequence is deliberately unordered).
pub fn hflip(seq: &ContourPoseSequence) -> ContourPoseSequence {
    let mut out = seq.clone();
    for f in &mut out.frames {
        for p in &mut f.points {
            p[0] = -p[0];
        }
        match seq.kind {
            GraphKind::ContourPose => {
                let src = f.points.clone();
                for (k, &mirror) in MIRROR.iter().enumerate() {
                    let (to, from) = (k * GROUP_SIZE, mirror * GROUP_SIZE);
                    f.points[to..to + GROUP_SIZE].copy_from_slice(&src[from..from + GROUP_SIZE]);
                    if seq.ordering == Ordering::Clockwise {
                        sort_group(&mut f.points[to..to + GROUP_SIZE]);
                    }
                }
                f.contour_indices.clear();
            }
            GraphKind::UniformRing => {
                // Mirroring reverses the traversal; keep the start point.
                f.points[1..].reverse();
                f.contour_indices.clear();
            }
        }
    }
    out
}

fn sort_group(group: &mut [[f64; 2]]) {
    let anchor = group[0];
    let mut members: Vec<(f64, f64, usize, [f64; 2])> = group[1..]
        .iter()
        .enumerate()
        .map(|(slot, &c)| {
            let d = (c[0] - anchor[0]).powi(2) + (c[1] - anchor[1]).powi(2);
            (clockwise_angle(anchor, c), d, slot, c)
        })
        .collect();
    members.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    for (dst, m) in group[1..].iter_mut().zip(members) {
        *dst = m.3;
    }
}
