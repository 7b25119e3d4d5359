//! Triplet objectives over identity embeddings.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `max(0, |a - p| - |a - n| + margin)`.
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> Result<f64> {
    if anchor.len() != positive.len() || anchor.len() != negative.len() {
        return Err(Error::shape(format!(
            "triplet dims {} / {} / {}",
            anchor.len(),
            positive.len(),
            negative.len()
        )));
    }
    Ok((euclidean(anchor, positive) - euclidean(anchor, negative) + margin).max(0.0))
}

/// Hardest triplet selected for one anchor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinedTriplet {
    pub positive: usize,
    pub negative: usize,
    pub d_pos: f64,
    pub d_neg: f64,
    pub loss: f64,
}

/// Per-anchor batch-hard mining: farthest same-label row, nearest other-label
/// row (ties go to the lower index).
pub fn mine_batch_hard(rows: &[&[f64]], labels: &[usize], margin: f64) -> Result<Vec<MinedTriplet>> {
    if rows.len() != labels.len() {
        return Err(Error::LengthMismatch(rows.len(), labels.len()));
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    if counts.len() < 2 {
        return Err(Error::DegenerateBatch(format!("{} subject(s)", counts.len())));
    }
    if let Some((l, c)) = counts.iter().find(|(_, &c)| c < 2) {
        return Err(Error::DegenerateBatch(format!("subject {l} has {c} sequence(s)")));
    }
    let n = rows.len();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = euclidean(rows[i], rows[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    Ok((0..n)
        .map(|a| {
            let mut pos = (usize::MAX, f64::NEG_INFINITY);
            let mut neg = (usize::MAX, f64::INFINITY);
            for j in 0..n {
                let d = dist[a * n + j];
                if labels[j] == labels[a] {
                    if j != a && d > pos.1 {
                        pos = (j, d);
                    }
                } else if d < neg.1 {
                    neg = (j, d);
                }
            }
            MinedTriplet {
                positive: pos.0,
                negative: neg.0,
                d_pos: pos.1,
                d_neg: neg.1,
                loss: (pos.1 - neg.1 + margin).max(0.0),
            }
        })
        .collect())
}

/// Mean batch-hard triplet loss over all anchors.
pub fn batch_hard_loss(embeddings: &[Vec<f64>], labels: &[usize], margin: f64) -> Result<f64> {
    let rows: Vec<&[f64]> = embeddings.iter().map(Vec::as_slice).collect();
    let mined = mine_batch_hard(&rows, labels, margin)?;
    Ok(mined.iter().map(|m| m.loss).sum::<f64>() / mined.len() as f64)
}
