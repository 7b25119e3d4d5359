use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{distance_matrix, pair_scores, rank_from_distances, roc_curve, tar_from_scores};
use super::{EmbeddingEntry, EmbeddingSet, Role};
use crate::contour_pose::ContourPoseSequence;
use crate::error::{Error, Result};
use crate::features::ChannelSpec;
use crate::model::GaitContour;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub ranks: Vec<usize>,
    pub far_points: Vec<f64>,
    pub aggregation: Aggregation,
}

/// How gallery sequences of one subject are scored.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Every gallery sequence is its own template.
    #[default]
    Sequence,
    /// Gallery sequences are averaged into one template per subject.
    Subject,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ranks: vec![1, 5, 10],
            far_points: vec![1e-2, 1e-1],
            aggregation: Aggregation::Sequence,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub gallery_size: usize,
    pub probe_size: usize,
    /// Probes whose subject appears in the gallery.
    pub ranked_probes: usize,
    pub genuine_pairs: usize,
    pub impostor_pairs: usize,
    /// Rank-k accuracy keyed by k.
    pub rank_k: BTreeMap<String, f64>,
    /// TAR keyed by FAR.
    pub tar_at_far: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn rank(&self, k: usize) -> Option<f64> {
        self.rank_k.get(&k.to_string()).copied()
    }
}

/// Embeds every sequence with frozen statistics after cropping or padding it
/// to `clip_frames` (see [`ContourPoseSequence::center_clip`]).
pub fn embed_dataset(
    sequences: &[ContourPoseSequence],
    model: &GaitContour,
    channels: &ChannelSpec,
    clip_frames: usize,
    role: Role,
) -> Result<EmbeddingSet> {
    let entries = sequences
        .par_iter()
        .map(|s| {
            let subject_id = s
                .subject_id
                .clone()
                .ok_or_else(|| Error::InsufficientData("sequence without a subject id".into()))?;
            Ok(EmbeddingEntry {
                subject_id,
                view_id: s.view_id.clone(),
                embedding: model.embed(&s.center_clip(clip_frames), channels)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EmbeddingSet::new(role, entries))
}

/// Mean embedding per subject, in order of first appearance.
pub fn subject_templates(set: &EmbeddingSet) -> EmbeddingSet {
    let mut order: Vec<String> = Vec::new();
    let mut sums: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    for e in &set.entries {
        let slot = sums.entry(e.subject_id.clone()).or_insert_with(|| {
            order.push(e.subject_id.clone());
            (vec![0.0; e.embedding.len()], 0)
        });
        for (s, v) in slot.0.iter_mut().zip(&e.embedding) {
            *s += v;
        }
        slot.1 += 1;
    }
    let entries = order
        .into_iter()
        .map(|id| {
            let (sum, n) = &sums[&id];
            EmbeddingEntry {
                embedding: sum.iter().map(|s| s / *n as f64).collect(),
                subject_id: id,
                view_id: None,
            }
        })
        .collect();
    EmbeddingSet::new(set.role, entries)
}

pub fn evaluate(gallery: &EmbeddingSet, probe: &EmbeddingSet, opts: &EvalOptions) -> Result<EvalReport> {
    let templates;
    let gallery = match opts.aggregation {
        Aggregation::Sequence => gallery,
        Aggregation::Subject => {
            templates = subject_templates(gallery);
            &templates
        }
    };
    let dist = distance_matrix(gallery, probe)?;
    let ranks = rank_from_distances(gallery, probe, &dist, &opts.ranks)?;
    let scores = pair_scores(gallery, probe, &dist);
    let tars = tar_from_scores(&scores, &opts.far_points)?;
    let known: std::collections::BTreeSet<&str> = gallery.entries.iter().map(|e| e.subject_id.as_str()).collect();
    Ok(EvalReport {
        gallery_size: gallery.len(),
        probe_size: probe.len(),
        ranked_probes: probe
            .entries
            .iter()
            .filter(|p| known.contains(p.subject_id.as_str()))
            .count(),
        genuine_pairs: scores.genuine.len(),
        impostor_pairs: scores.impostor.len(),
        rank_k: opts.ranks.iter().map(|k| k.to_string()).zip(ranks).collect(),
        tar_at_far: tars.into_iter().map(|(f, t)| (format!("{f}"), t)).collect(),
    })
}

/// Probe x gallery scores (negative distance), one row per pair.
pub fn write_score_csv(path: &Path, gallery: &EmbeddingSet, probe: &EmbeddingSet) -> Result<()> {
    let dist = distance_matrix(gallery, probe)?;
    let mut csv = String::from("probe,gallery,probe_subject,gallery_subject,score\n");
    for (pi, (p, row)) in probe.entries.iter().zip(&dist).enumerate() {
        for (gi, (g, d)) in gallery.entries.iter().zip(row).enumerate() {
            writeln!(csv, "{pi},{gi},{},{},{:.17e}", p.subject_id, g.subject_id, -d).expect("writing to a String");
        }
    }
    std::fs::write(path, csv).map_err(|e| Error::io(path, e))
}

/// ROC curve (TAR against log-scale FAR) as a standalone SVG.
pub fn write_roc_svg(path: &Path, gallery: &EmbeddingSet, probe: &EmbeddingSet) -> Result<()> {
    let dist = distance_matrix(gallery, probe)?;
    let scores = pair_scores(gallery, probe, &dist);
    let curve = roc_curve(&scores)?;
    let (w, h, m) = (480.0, 360.0, 48.0);
    let min_far = (1.0 / scores.impostor.len() as f64).min(1e-3);
    let lo = min_far.log10().floor();
    let x = |far: f64| m + (far.max(min_far).log10() - lo) / -lo * (w - 2.0 * m);
    let y = |tar: f64| h - m - tar * (h - 2.0 * m);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{m} {m} V{} H{}" fill="none" stroke="black"/>"#,
        h - m,
        w - m
    );
    let mut decade = lo;
    while decade <= 0.0 {
        let far = 10f64.powf(decade);
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">1e{}</text>"#,
            x(far),
            h - m + 16.0,
            decade as i32
        );
        decade += 1.0;
    }
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{tick}</text>"#,
            m - 6.0,
            y(tick) + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">FAR</text>"#,
        w / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">TAR</text>"#,
        h / 2.0,
        h / 2.0
    );
    let points: Vec<String> = curve.iter().map(|&(f, t)| format!("{:.2},{:.2}", x(f), y(t))).collect();
    let _ = writeln!(
        svg,
        r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
        points.join(" ")
    );
    svg.push_str("</svg>\n");
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}
