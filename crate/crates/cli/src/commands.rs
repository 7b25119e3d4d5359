use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gaitcontour::contour_pose::{extract_sequence, read_cpz, write_cpz, ContourPoseSequence};
use gaitcontour::evaluation::{embed_dataset, evaluate, write_roc_svg, write_score_csv, EvalReport, Role};
use gaitcontour::io::{create_dir_all, list_mask_files, read_mask_dir, read_pose_file, write_json};
use gaitcontour::model::{count_attention_ops, AttentionOps, GaitContour};
use gaitcontour::synth::{generate_dataset, DatasetManifest};
use gaitcontour::training::{tail_mean, train_loop, LabeledSequences, TrainOutcome};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;

/// Name of the resolved experiment config written next to a checkpoint.
pub const RUN_CONFIG: &str = "config.json";
pub const POSE_FILE: &str = "pose.json";

pub fn synth(out: &Path, ids: usize, seqs: usize, frames: usize, seed: u64) -> Result<DatasetManifest> {
    let manifest = generate_dataset(out, ids, seqs, frames, seed)?;
    log::info!(
        "wrote {} sequences of {frames} frames to {}",
        manifest.sequences.len(),
        out.display()
    );
    Ok(manifest)
}

/// Sequence directories under `masks`: the directory itself when it holds
/// mask images, otherwise every subdirectory with a pose file, sorted.
fn sequence_dirs(masks: &Path) -> Result<Vec<PathBuf>> {
    if !list_mask_files(masks)?.is_empty() {
        return Ok(vec![masks.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(masks)
        .with_context(|| format!("reading {}", masks.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(POSE_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("{} holds neither mask images nor sequence directories", masks.display());
    }
    Ok(dirs)
}

fn extract_one(dir: &Path, poses: &Path, cfg: &ExperimentConfig, index: usize) -> Result<ContourPoseSequence> {
    let masks = read_mask_dir(dir)?;
    let pose_file = read_pose_file(poses)?;
    let seq = extract_sequence(
        &masks,
        &pose_file.to_frames()?,
        &cfg.extract_options(index),
        pose_file.subject_id,
        pose_file.view_id,
    )?;
    Ok(seq)
}

/// Extracts one sequence directory or a dataset of them. A single sequence
/// goes to `out` when it ends in `.cpz`; otherwise `out` is a directory that
/// receives `<sequence dir name>.cpz` files. Returns the written paths.
pub fn extract(masks: &Path, poses: Option<&Path>, out: &Path, cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let dirs = sequence_dirs(masks)?;
    if dirs.len() > 1 && poses.is_some() {
        bail!(
            "--poses names a single pose file but {} holds {} sequences",
            masks.display(),
            dirs.len()
        );
    }
    let single_file = dirs.len() == 1 && out.extension().is_some_and(|e| e == "cpz");
    let targets: Vec<PathBuf> = if single_file {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir_all(parent)?;
        }
        vec![out.to_path_buf()]
    } else {
        create_dir_all(out)?;
        dirs.iter()
            .map(|d| {
                let name = d
                    .file_name()
                    .map_or_else(|| "sequence".into(), |n| n.to_string_lossy().into_owned());
                out.join(format!("{name}.cpz"))
            })
            .collect()
    };
    dirs.par_iter()
        .zip(&targets)
        .enumerate()
        .try_for_each(|(i, (dir, target))| -> Result<()> {
            let pose_path = poses.map_or_else(|| dir.join(POSE_FILE), Path::to_path_buf);
            let seq = extract_one(dir, &pose_path, cfg, i).with_context(|| format!("extracting {}", dir.display()))?;
            write_cpz(target, &seq)?;
            log::debug!("{} -> {} ({} frames)", dir.display(), target.display(), seq.len());
            Ok(())
        })?;
    log::info!("extracted {} sequence(s) to {}", targets.len(), out.display());
    Ok(targets)
}

/// All `.cpz` sequences of a directory in file-name order.
pub fn load_sequences(dir: &Path) -> Result<Vec<ContourPoseSequence>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "cpz"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .cpz sequences in {}", dir.display());
    }
    files
        .par_iter()
        .map(|f| read_cpz(f).with_context(|| format!("reading {}", f.display())))
        .collect()
}

/// Trains on every sequence in `data` and writes the checkpoint, loss curve
/// and the resolved config into `out`.
pub fn train(cfg: &ExperimentConfig, data: &Path, out: &Path) -> Result<TrainOutcome> {
    let sequences = load_sequences(data)?;
    let labeled = LabeledSequences::new(sequences)?;
    log::info!(
        "training on {} sequences of {} subjects for {} steps",
        labeled.sequences.len(),
        labeled.subjects.len(),
        cfg.triplet.steps
    );
    let outcome = train_loop(&labeled, &cfg.train_config(), Some(out))?;
    write_json(&out.join(RUN_CONFIG), cfg)?;
    log::info!(
        "final loss {:.5}, mean of last 100 steps {:.5}",
        outcome.losses.last().copied().unwrap_or(f64::NAN),
        tail_mean(&outcome.losses, 100)
    );
    Ok(outcome)
}

/// Optional artifacts of an evaluation.
#[derive(Clone, Debug, Default)]
pub struct EvalOutputs<'a> {
    pub scores: Option<&'a Path>,
    pub plot: Option<&'a Path>,
}

pub fn eval(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    gallery: &Path,
    probe: &Path,
    outputs: &EvalOutputs<'_>,
) -> Result<EvalReport> {
    let model = GaitContour::load(cfg.model.clone(), checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let clip = cfg.triplet.clip_frames;
    let g = embed_dataset(&load_sequences(gallery)?, &model, &cfg.channels, clip, Role::Gallery)?;
    let p = embed_dataset(&load_sequences(probe)?, &model, &cfg.channels, clip, Role::Probe)?;
    let report = evaluate(&g, &p, &cfg.eval)?;
    if let Some(path) = outputs.scores {
        write_score_csv(path, &g, &p)?;
    }
    if let Some(path) = outputs.plot {
        write_roc_svg(path, &g, &p)?;
    }
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct FlopsReport {
    pub points: usize,
    pub layers: Vec<AttentionOps>,
    pub total: AttentionOps,
}

pub fn flops(cfg: &ExperimentConfig, points: usize) -> Result<FlopsReport> {
    let (layers, total) = count_attention_ops(&cfg.model, points)?;
    Ok(FlopsReport { points, layers, total })
}

impl FlopsReport {
    /// Plain-text table: one row per Local-CPT layer, then the total.
    pub fn table(&self, cfg: &ExperimentConfig) -> String {
        let widths = std::iter::once(cfg.model.input_channels).chain(cfg.model.local_channels.iter().copied());
        let mut s = format!(
            "{:<8}{:>8}{:>16}{:>16}{:>10}\n",
            "layer", "width", "local", "full", "ratio"
        );
        for (i, (ops, c)) in self.layers.iter().zip(widths).enumerate() {
            let _ = writeln!(
                s,
                "{:<8}{:>8}{:>16}{:>16}{:>10.6}",
                i + 1,
                c,
                ops.local,
                ops.full,
                ops.ratio
            );
        }
        let t = &self.total;
        let _ = writeln!(
            s,
            "{:<8}{:>8}{:>16}{:>16}{:>10.6}",
            "total", "", t.local, t.full, t.ratio
        );
        let _ = writeln!(s, "ratio {:.6}", t.ratio);
        s
    }
}
