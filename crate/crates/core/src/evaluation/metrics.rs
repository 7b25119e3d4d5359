use std::collections::BTreeSet;

use rayon::prelude::*;

use super::EmbeddingSet;
use crate::error::{Error, Result};
use crate::training::euclidean;

fn check_sets(gallery: &EmbeddingSet, probe: &EmbeddingSet) -> Result<()> {
    if gallery.is_empty() {
        return Err(Error::EmptySet("gallery"));
    }
    if probe.is_empty() {
        return Err(Error::EmptySet("probe"));
    }
    let dim = gallery.entries[0].embedding.len();
    if let Some(e) = gallery
        .entries
        .iter()
        .chain(&probe.entries)
        .find(|e| e.embedding.len() != dim)
    {
        return Err(Error::shape(format!(
            "embedding of {} has {} dims, expected {dim}",
            e.subject_id,
            e.embedding.len()
        )));
    }
    Ok(())
}

/// Euclidean distances, one row per probe.
pub fn distance_matrix(gallery: &EmbeddingSet, probe: &EmbeddingSet) -> Result<Vec<Vec<f64>>> {
    check_sets(gallery, probe)?;
    Ok(probe
        .entries
        .par_iter()
        .map(|p| {
            gallery
                .entries
                .iter()
                .map(|g| euclidean(&p.embedding, &g.embedding))
                .collect()
        })
        .collect())
}

/// Fraction of probes whose `k` nearest gallery entries (ties by gallery
/// index) include their subject. Probes whose subject is absent from the
/// gallery are not ranked.
pub fn rank_retrieval(gallery: &EmbeddingSet, probe: &EmbeddingSet, k: usize) -> Result<f64> {
    let dist = distance_matrix(gallery, probe)?;
    Ok(rank_from_distances(gallery, probe, &dist, &[k])?[0])
}

pub(crate) fn rank_from_distances(
    gallery: &EmbeddingSet,
    probe: &EmbeddingSet,
    dist: &[Vec<f64>],
    ks: &[usize],
) -> Result<Vec<f64>> {
    let known: BTreeSet<&str> = gallery.entries.iter().map(|e| e.subject_id.as_str()).collect();
    let mut hits = vec![0usize; ks.len()];
    let mut ranked = 0usize;
    for (p, row) in probe.entries.iter().zip(dist) {
        if !known.contains(p.subject_id.as_str()) {
            continue;
        }
        ranked += 1;
        let mut order: Vec<usize> = (0..row.len()).collect();
        order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        let first_hit = order
            .iter()
            .position(|&g| gallery.entries[g].subject_id == p.subject_id)
            .expect("subject is in the gallery");
        for (h, &k) in hits.iter_mut().zip(ks) {
            if first_hit < k {
                *h += 1;
            }
        }
    }
    if ranked == 0 {
        return Err(Error::EmptySet("probes with a gallery subject"));
    }
    Ok(hits.iter().map(|&h| h as f64 / ranked as f64).collect())
}

/// Similarity scores (negative distances) of all probe x gallery pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct PairScores {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

pub fn pair_scores(gallery: &EmbeddingSet, probe: &EmbeddingSet, dist: &[Vec<f64>]) -> PairScores {
    let mut s = PairScores {
        genuine: Vec::new(),
        impostor: Vec::new(),
    };
    for (p, row) in probe.entries.iter().zip(dist) {
        for (g, &d) in gallery.entries.iter().zip(row) {
            if g.subject_id == p.subject_id {
                s.genuine.push(-d);
            } else {
                s.impostor.push(-d);
            }
        }
    }
    s
}

/// TAR at each requested FAR. The threshold is the impostor score with
/// `floor(far * n_impostor)` impostors strictly above it; genuine scores
/// strictly above the threshold are accepted. FAR >= 1 accepts everything.
pub fn tar_at_far(gallery: &EmbeddingSet, probe: &EmbeddingSet, far_points: &[f64]) -> Result<Vec<(f64, f64)>> {
    let dist = distance_matrix(gallery, probe)?;
    tar_from_scores(&pair_scores(gallery, probe, &dist), far_points)
}

pub(crate) fn tar_from_scores(scores: &PairScores, far_points: &[f64]) -> Result<Vec<(f64, f64)>> {
    if scores.impostor.is_empty() {
        return Err(Error::NoImpostors);
    }
    if scores.genuine.is_empty() {
        return Err(Error::EmptySet("genuine pairs"));
    }
    let mut imp = scores.impostor.clone();
    imp.sort_by(|a, b| b.total_cmp(a));
    let n_gen = scores.genuine.len() as f64;
    Ok(far_points
        .iter()
        .map(|&far| {
            let allowed = (far.max(0.0) * imp.len() as f64).floor() as usize;
            let tar = if allowed >= imp.len() {
                1.0
            } else {
                let threshold = imp[allowed];
                scores.genuine.iter().filter(|&&g| g > threshold).count() as f64 / n_gen
            };
            (far, tar)
        })
        .collect())
}

/// `(FAR, TAR)` at every distinct impostor threshold, from strictest to
/// accept-all.
pub fn roc_curve(scores: &PairScores) -> Result<Vec<(f64, f64)>> {
    if scores.impostor.is_empty() {
        return Err(Error::NoImpostors);
    }
    if scores.genuine.is_empty() {
        return Err(Error::EmptySet("genuine pairs"));
    }
    let mut imp = scores.impostor.clone();
    imp.sort_by(|a, b| b.total_cmp(a));
    let mut gen = scores.genuine.clone();
    gen.sort_by(|a, b| b.total_cmp(a));
    let (ni, ng) = (imp.len() as f64, gen.len() as f64);
    let mut curve = Vec::new();
    let mut accepted_gen = 0;
    let mut i = 0;
    while i < imp.len() {
        let threshold = imp[i];
        while accepted_gen < gen.len() && gen[accepted_gen] > threshold {
            accepted_gen += 1;
        }
        curve.push((i as f64 / ni, accepted_gen as f64 / ng));
        while i < imp.len() && imp[i] == threshold {
            i += 1;
        }
    }
    curve.push((1.0, 1.0));
    Ok(curve)
}
