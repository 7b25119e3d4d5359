use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::walker::{generate_walker, WalkerIdentity, WalkerSequence, DEFAULT_FRAME_SIZE};
use crate::error::{Error, Result};
use crate::io::{create_dir_all, write_json, write_pgm};

/// Minimum relative difference in at least one limb between two identities.
pub const MIN_LIMB_DIFFERENCE: f64 = 0.05;

const MAX_DRAWS: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceEntry {
    pub dir: String,
    pub subject_id: String,
    pub identity_index: usize,
    pub phase_offset: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub seed: u64,
    pub frames: usize,
    pub frame_size: (usize, usize),
    pub identities: Vec<WalkerIdentity>,
    pub sequences: Vec<SequenceEntry>,
}

/// Largest relative per-limb difference, on raw lengths and on lengths
/// divided by the torso; the smaller of the two is returned.
pub fn limb_difference(a: &WalkerIdentity, b: &WalkerIdentity) -> f64 {
    let (la, lb) = (a.limbs.to_array(), b.limbs.to_array());
    let raw = la
        .iter()
        .zip(&lb)
        .map(|(x, y)| (x - y).abs() / x.max(*y))
        .fold(0.0, f64::max);
    let relative = la[1..]
        .iter()
        .zip(&lb[1..])
        .map(|(x, y)| {
            let (x, y) = (x / la[0], y / lb[0]);
            (x - y).abs() / x.max(y)
        })
        .fold(0.0, f64::max);
    raw.min(relative)
}

fn draw_identity(rng: &mut impl Rng) -> WalkerIdentity {
    let base = WalkerIdentity::default();
    let mut jitter = |v: f64| v * rng.random_range(0.85..1.15);
    let mut id = base.clone();
    let l = &mut id.limbs;
    for v in [
        &mut l.torso,
        &mut l.head,
        &mut l.shoulder_offset,
        &mut l.hip_offset,
        &mut l.upper_arm,
        &mut l.forearm,
        &mut l.thigh,
        &mut l.shin,
    ] {
        *v = jitter(*v);
    }
    let w = &mut id.widths;
    for v in [
        &mut w.torso,
        &mut w.neck,
        &mut w.head,
        &mut w.upper_arm,
        &mut w.forearm,
        &mut w.thigh,
        &mut w.shin,
        &mut w.foot,
    ] {
        *v = jitter(*v);
    }
    id.foot_length = jitter(id.foot_length);
    id.gait_freq = 1.0 / rng.random_range(24..=36) as f64;
    id.stride_amp = rng.random_range(0.3..0.5);
    id.arm_amp = rng.random_range(0.2..0.45);
    id
}

/// `n` identities whose limb vectors pairwise differ by at least
/// [`MIN_LIMB_DIFFERENCE`] (rejection sampling).
pub fn sample_identities(n: usize, rng: &mut impl Rng) -> Result<Vec<WalkerIdentity>> {
    let mut out: Vec<WalkerIdentity> = Vec::with_capacity(n);
    let mut draws = 0;
    while out.len() < n {
        draws += 1;
        if draws > MAX_DRAWS {
            return Err(Error::InvalidConfig(format!(
                "could not sample {n} distinct identities"
            )));
        }
        let id = draw_identity(rng);
        if out.iter().all(|o| limb_difference(o, &id) >= MIN_LIMB_DIFFERENCE) {
            out.push(id);
        }
    }
    Ok(out)
}

/// Writes `n_ids × seqs_per_id` walker sequences under `out`, one directory
/// per sequence (`s000_q00/000001.pgm …, pose.json`), plus `manifest.json`.
pub fn generate_dataset(
    out: &Path,
    n_ids: usize,
    seqs_per_id: usize,
    frames: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    if n_ids < 2 {
        return Err(Error::InvalidConfig("dataset needs at least 2 identities".into()));
    }
    if seqs_per_id == 0 || frames == 0 {
        return Err(Error::InvalidConfig("sequences and frames must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let identities = sample_identities(n_ids, &mut rng)?;
    let mut sequences = Vec::with_capacity(n_ids * seqs_per_id);
    for (i, _) in identities.iter().enumerate() {
        for q in 0..seqs_per_id {
            sequences.push(SequenceEntry {
                dir: format!("s{i:03}_q{q:02}"),
                subject_id: format!("s{i:03}"),
                identity_index: i,
                phase_offset: rng.random_range(0.0..2.0 * PI),
                seed: rng.next_u64(),
            });
        }
    }
    create_dir_all(out)?;
    sequences.par_iter().try_for_each(|entry| {
        let mut id = identities[entry.identity_index].clone();
        id.phase_offset = entry.phase_offset;
        let seq = generate_walker(&id, frames, DEFAULT_FRAME_SIZE, entry.seed)?;
        write_sequence(&out.join(&entry.dir), &seq, &entry.subject_id)
    })?;
    let manifest = DatasetManifest {
        seed,
        frames,
        frame_size: DEFAULT_FRAME_SIZE,
        identities,
        sequences,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn write_sequence(dir: &Path, seq: &WalkerSequence, subject_id: &str) -> Result<()> {
    create_dir_all(dir)?;
    for (t, mask) in seq.silhouettes.iter().enumerate() {
        write_pgm(&dir.join(format!("{:06}.pgm", t + 1)), mask)?;
    }
    write_json(&dir.join("pose.json"), &seq.pose_file(Some(subject_id.to_string())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identities_are_pairwise_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ids = sample_identities(16, &mut rng).unwrap();
        for i in 0..ids.len() {
            for j in 0..i {
                assert!(limb_difference(&ids[i], &ids[j]) >= MIN_LIMB_DIFFERENCE);
            }
        }
    }

    #[test]
    fn limb_difference_of_scaled_identity() {
        let a = WalkerIdentity::default();
        let mut b = a.clone();
        b.limbs.shin *= 1.1;
        let d = limb_difference(&a, &b);
        assert!((d - 0.1 / 1.1).abs() < 1e-12);
        // Uniform scaling is invisible after torso normalization.
        let mut c = a.clone();
        let l = &mut c.limbs;
        for v in [
            &mut l.torso,
            &mut l.head,
            &mut l.shoulder_offset,
            &mut l.hip_offset,
            &mut l.upper_arm,
            &mut l.forearm,
            &mut l.thigh,
            &mut l.shin,
        ] {
            *v *= 1.1;
        }
        assert!(limb_difference(&a, &c) < 1e-12);
    }
}
