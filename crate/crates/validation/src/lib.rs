//! End-to-end learnability protocol on synthetic walkers: render a dataset,
//! extract it, split it into train / gallery / held-in / held-out
//! directories, train, and evaluate both probe sets.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gaitcontour::evaluation::EvalReport;
use gaitcontour::features::AugmentConfig;
use gaitcontour::io::write_json;
use gaitcontour::training::{tail_mean, FINAL_CHECKPOINT};
use gaitcontour_cli::commands::{self, EvalOutputs};
use gaitcontour_cli::ExperimentConfig;

#[derive(Clone, Debug)]
pub struct Protocol {
    pub ids: usize,
    /// Sequences per identity used for training. The first two form the
    /// gallery, the rest are held-in probes.
    pub train_seqs: usize,
    /// Extra sequences per identity, at unseen phase offsets.
    pub heldout_seqs: usize,
    pub frames: usize,
    pub synth_seed: u64,
    pub steps: usize,
    pub p_subjects: usize,
    pub k_seqs: usize,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            ids: 8,
            train_seqs: 4,
            heldout_seqs: 2,
            frames: 60,
            synth_seed: 7,
            steps: 2000,
            p_subjects: 4,
            k_seqs: 2,
        }
    }
}

pub const GALLERY_SEQS: usize = 2;

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: PathBuf,
    pub gallery: PathBuf,
    pub held_in: PathBuf,
    pub held_out: PathBuf,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub losses: Vec<f64>,
    pub held_in: EvalReport,
    pub held_out: EvalReport,
}

impl RunOutcome {
    pub fn tail_loss(&self) -> f64 {
        tail_mean(&self.losses, 100)
    }
}

impl Protocol {
    /// Renders masks and poses under `root/raw`.
    pub fn synthesize(&self, root: &Path) -> Result<PathBuf> {
        if self.train_seqs <= GALLERY_SEQS {
            bail!("need more than {GALLERY_SEQS} training sequences per identity");
        }
        let raw = root.join("raw");
        commands::synth(
            &raw,
            self.ids,
            self.train_seqs + self.heldout_seqs,
            self.frames,
            self.synth_seed,
        )?;
        Ok(raw)
    }

    /// Extracts `raw` into `root/<name>` and links each sequence into its
    /// split directories. `shuffle` selects the unordered ablation with that
    /// seed.
    pub fn extract_splits(&self, raw: &Path, root: &Path, name: &str, shuffle: Option<u64>) -> Result<Splits> {
        let mut cfg = ExperimentConfig::default();
        if let Some(seed) = shuffle {
            cfg.extract.shuffle = true;
            cfg.extract.seed = seed;
        }
        let base = root.join(name);
        let all = base.join("all");
        let files = commands::extract(raw, None, &all, &cfg)?;
        let splits = Splits {
            train: base.join("train"),
            gallery: base.join("gallery"),
            held_in: base.join("held_in"),
            held_out: base.join("held_out"),
        };
        for dir in [&splits.train, &splits.gallery, &splits.held_in, &splits.held_out] {
            std::fs::create_dir_all(dir)?;
        }
        for file in files {
            let q = sequence_index(&file)?;
            let mut targets = Vec::new();
            if q < self.train_seqs {
                targets.push(&splits.train);
                targets.push(if q < GALLERY_SEQS {
                    &splits.gallery
                } else {
                    &splits.held_in
                });
            } else {
                targets.push(&splits.held_out);
            }
            for dir in targets {
                for src in [file.clone(), file.with_extension("json")] {
                    let dst = dir.join(src.file_name().expect("extracted files are named"));
                    std::fs::copy(&src, &dst).with_context(|| format!("copying {}", src.display()))?;
                }
            }
        }
        Ok(splits)
    }

    /// Trains without augmentation under `seed` and evaluates the held-in
    /// and held-out probes against the gallery. Reports go next to the
    /// checkpoint.
    pub fn train_and_evaluate(&self, splits: &Splits, run_dir: &Path, seed: u64) -> Result<RunOutcome> {
        let mut cfg = ExperimentConfig::default();
        cfg.set_seed(seed);
        cfg.augment = AugmentConfig::disabled();
        cfg.triplet.steps = self.steps;
        cfg.triplet.p_subjects = self.p_subjects;
        cfg.triplet.k_seqs = self.k_seqs;
        let outcome = commands::train(&cfg, &splits.train, run_dir)?;
        let checkpoint = run_dir.join(FINAL_CHECKPOINT);
        let mut reports = Vec::new();
        for (name, probe) in [("held_in", &splits.held_in), ("held_out", &splits.held_out)] {
            let outputs = EvalOutputs {
                scores: Some(&run_dir.join(format!("{name}_scores.csv"))),
                plot: None,
            };
            let report = commands::eval(&cfg, &checkpoint, &splits.gallery, probe, &outputs)?;
            write_json(&run_dir.join(format!("{name}_report.json")), &report)?;
            reports.push(report);
        }
        let held_out = reports.pop().expect("two reports");
        let held_in = reports.pop().expect("two reports");
        Ok(RunOutcome {
            run_dir: run_dir.to_path_buf(),
            losses: outcome.losses,
            held_in,
            held_out,
        })
    }
}

/// `q` of a `sNNN_qMM.cpz` file name.
fn sequence_index(file: &Path) -> Result<usize> {
    let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    stem.rsplit_once("_q")
        .and_then(|(_, q)| q.parse().ok())
        .with_context(|| format!("{} is not named sNNN_qMM", file.display()))
}

/// Every file under `dir` with its bytes, sorted by relative path.
pub fn snapshot(dir: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).with_context(|| format!("reading {}", d.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir)?.to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path)?));
            }
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequence_index_parses_synth_names() {
        assert_eq!(sequence_index(Path::new("x/s003_q05.cpz")).unwrap(), 5);
        assert!(sequence_index(Path::new("x/other.cpz")).is_err());
    }

    #[test]
    fn tiny_protocol_splits_and_runs() {
        let dir = tempfile::tempdir().unwrap();
        let p = Protocol {
            ids: 2,
            train_seqs: 3,
            heldout_seqs: 1,
            frames: 4,
            steps: 2,
            p_subjects: 2,
            ..Protocol::default()
        };
        let raw = p.synthesize(dir.path()).unwrap();
        let splits = p.extract_splits(&raw, dir.path(), "ordered", None).unwrap();
        let count = |d: &Path| std::fs::read_dir(d).unwrap().count() / 2;
        assert_eq!(
            [&splits.train, &splits.gallery, &splits.held_in, &splits.held_out].map(|d| count(d)),
            [6, 4, 2, 2]
        );
        let run = p.train_and_evaluate(&splits, &dir.path().join("run"), 0).unwrap();
        assert_eq!(run.losses.len(), 2);
        assert_eq!(run.held_in.probe_size, 2);
        assert!(run.run_dir.join("held_out_report.json").is_file());
    }
}
