use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::build::{ContourPoseFrame, ContourPoseSequence, GraphKind, Ordering};
use super::pose::NUM_KEYPOINTS;
use crate::error::{Error, Result};
use crate::io::{read_json, write_json};

const MAGIC: &[u8; 4] = b"CPZ1";
const HEADER_LEN: usize = 16;

/// Metadata stored next to a `.cpz` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpzSidecar {
    pub kind: GraphKind,
    pub ordering: Ordering,
    #[serde(default)]
    pub subject_id: Option<String>,
    #[serde(default)]
    pub view_id: Option<String>,
    pub edges: Vec<[usize; 2]>,
}

/// `x.cpz` keeps its metadata in `x.json`.
pub fn sidecar_path(cpz: &Path) -> PathBuf {
    cpz.with_extension("json")
}

/// Binary body: magic, u32 T, u32 V, u32 points per frame, then T x P x 2
/// little-endian f32 coordinates.
pub fn encode_cpz(seq: &ContourPoseSequence) -> Result<(Vec<u8>, CpzSidecar)> {
    seq.validate()?;
    let p = seq.points_per_frame();
    let v = match seq.kind {
        GraphKind::ContourPose => NUM_KEYPOINTS,
        GraphKind::UniformRing => 0,
    };
    let mut out = Vec::with_capacity(HEADER_LEN + seq.len() * p * 8);
    out.extend_from_slice(MAGIC);
    for n in [seq.len(), v, p] {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for f in &seq.frames {
        for pt in &f.points {
            out.extend_from_slice(&(pt[0] as f32).to_le_bytes());
            out.extend_from_slice(&(pt[1] as f32).to_le_bytes());
        }
    }
    let sidecar = CpzSidecar {
        kind: seq.kind,
        ordering: seq.ordering,
        subject_id: seq.subject_id.clone(),
        view_id: seq.view_id.clone(),
        edges: seq.edges().to_vec(),
    };
    Ok((out, sidecar))
}

pub fn decode_cpz(bytes: &[u8], sidecar: &CpzSidecar) -> Result<ContourPoseSequence> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::format("cpz", "missing CPZ1 header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
    let (t, v, p) = (word(0), word(1), word(2));
    let expected_v = match sidecar.kind {
        GraphKind::ContourPose => NUM_KEYPOINTS,
        GraphKind::UniformRing => 0,
    };
    if v != expected_v {
        return Err(Error::format(
            "cpz",
            format!("header V={v} but sidecar kind needs {expected_v}"),
        ));
    }
    if bytes.len() != HEADER_LEN + t * p * 8 {
        return Err(Error::format("cpz", format!("{} bytes for T={t}, P={p}", bytes.len())));
    }
    if sidecar.edges.iter().flatten().any(|&i| i >= p) {
        return Err(Error::format("cpz", "edge index out of range"));
    }
    let mut floats = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
    let frames = (0..t)
        .map(|_| ContourPoseFrame {
            points: (0..p)
                .map(|_| [floats.next().expect("sized"), floats.next().expect("sized")])
                .collect(),
            edges: sidecar.edges.clone(),
            contour_indices: Vec::new(),
        })
        .collect();
    let seq = ContourPoseSequence {
        frames,
        kind: sidecar.kind,
        ordering: sidecar.ordering,
        subject_id: sidecar.subject_id.clone(),
        view_id: sidecar.view_id.clone(),
    };
    seq.validate()?;
    Ok(seq)
}

pub fn write_cpz(path: &Path, seq: &ContourPoseSequence) -> Result<()> {
    let (bytes, sidecar) = encode_cpz(seq)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    write_json(&sidecar_path(path), &sidecar)
}

pub fn read_cpz(path: &Path) -> Result<ContourPoseSequence> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let sidecar: CpzSidecar = read_json(&sidecar_path(path))?;
    decode_cpz(&bytes, &sidecar)
}
