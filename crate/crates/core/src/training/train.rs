use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use crate::contour_pose::{ContourPoseSequence, GraphKind};
use crate::error::{Error, Result};
use crate::features::{augment, sequence_features, AugmentConfig, ChannelSpec};
use crate::model::{BnIds, ForwardMode, GaitContour, ModelConfig, Session};
use crate::numeric::{BatchStats, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TripletConfig {
    pub margin: f64,
    pub p_subjects: usize,
    pub k_seqs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: usize,
    /// Frames per training clip; evaluation crops or pads to the same length.
    pub clip_frames: usize,
    pub seed: u64,
    /// Write an intermediate checkpoint every this many steps (0 = final only).
    pub checkpoint_every: usize,
    pub lr_schedule: LrSchedule,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Cosine decay from `lr` to 0 over the run.
    Cosine,
}

impl LrSchedule {
    /// Learning rate for 1-based `step` of `steps`.
    pub fn at(self, lr: f64, step: usize, steps: usize) -> f64 {
        match self {
            LrSchedule::Constant => lr,
            LrSchedule::Cosine => {
                let progress = (step - 1) as f64 / steps.max(1) as f64;
                0.5 * lr * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

impl Default for TripletConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TripletConfig {
            margin: 0.2,
            p_subjects: 4,
            k_seqs: 2,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            steps: 2000,
            clip_frames: 4,
            seed: 0,
            checkpoint_every: 0,
            lr_schedule: LrSchedule::Constant,
        }
    }
}

impl TripletConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.margin.is_nan() || self.margin < 0.0 {
            return bad("triplet.margin must be >= 0");
        }
        if self.p_subjects < 2 || self.k_seqs < 2 {
            return bad("triplet batches need p_subjects >= 2 and k_seqs >= 2");
        }
        if self.clip_frames == 0 {
            return bad("triplet.clip_frames must be positive");
        }
        if self.lr.is_nan() || self.lr <= 0.0 || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2)
        {
            return bad("invalid Adam hyperparameters");
        }
        Ok(())
    }
}

/// Everything that shapes a training run besides the data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub channels: ChannelSpec,
    pub augment: AugmentConfig,
    pub triplet: TripletConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.channels.validate()?;
        self.augment.validate()?;
        self.triplet.validate()?;
        if self.model.input_channels != self.channels.embedded_channels() {
            return Err(Error::InvalidConfig(format!(
                "model.input_channels {} does not match {} embedded feature channels",
                self.model.input_channels,
                self.channels.embedded_channels()
            )));
        }
        Ok(())
    }
}

/// Sequences with dense integer labels; label `i` is `subjects[i]`.
#[derive(Clone, Debug)]
pub struct LabeledSequences {
    pub sequences: Vec<ContourPoseSequence>,
    pub labels: Vec<usize>,
    pub subjects: Vec<String>,
}

impl LabeledSequences {
    /// Labels follow the sorted order of subject ids.
    pub fn new(sequences: Vec<ContourPoseSequence>) -> Result<Self> {
        let mut ids = BTreeMap::new();
        for s in &sequences {
            let id = s
                .subject_id
                .clone()
                .ok_or_else(|| Error::InsufficientData("sequence without a subject id".into()))?;
            ids.insert(id, 0);
        }
        for (i, v) in ids.values_mut().enumerate() {
            *v = i;
        }
        let labels = sequences
            .iter()
            .map(|s| ids[s.subject_id.as_ref().expect("checked above")])
            .collect();
        Ok(LabeledSequences {
            sequences,
            labels,
            subjects: ids.into_keys().collect(),
        })
    }

    pub fn by_label(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.subjects.len()];
        for (i, &l) in self.labels.iter().enumerate() {
            groups[l].push(i);
        }
        groups
    }
}

pub struct TrainOutcome {
    pub model: GaitContour,
    /// Batch-hard loss at every step, before that step's update.
    pub losses: Vec<f64>,
}

/// One sampled clip with its label.
struct Sample {
    seq: ContourPoseSequence,
    label: usize,
}

/// P distinct subjects, K distinct sequences each, and a random clip window
/// per sequence.
fn sample_batch(
    data: &LabeledSequences,
    eligible: &[usize],
    groups: &[Vec<usize>],
    cfg: &TripletConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Sample> {
    let mut out = Vec::with_capacity(cfg.p_subjects * cfg.k_seqs);
    for pi in sample(rng, eligible.len(), cfg.p_subjects).into_vec() {
        let members = &groups[eligible[pi]];
        for ki in sample(rng, members.len(), cfg.k_seqs).into_vec() {
            let idx = members[ki];
            let seq = &data.sequences[idx];
            let slack = seq.len().saturating_sub(cfg.clip_frames);
            let start = rng.random_range(0..=slack);
            out.push(Sample {
                seq: seq.window(start, cfg.clip_frames),
                label: data.labels[idx],
            });
        }
    }
    out
}

/// Result of one optimization step before the parameter update.
pub struct StepGradients {
    pub loss: f64,
    pub grads: Vec<Option<Tensor>>,
    pub stats: Vec<Vec<(BnIds, BatchStats)>>,
    pub embeddings: Vec<Vec<f64>>,
}

/// Parameter gradients and batch-norm statistics of one sequence's tape.
type SequenceGrads = (Vec<Option<Tensor>>, Vec<(BnIds, BatchStats)>);

/// Batch-hard loss and its parameter gradient. Each sequence runs on its own
/// tape; the loss gradient with respect to the stacked embeddings is pushed
/// back through every tape and the parameter gradients summed in batch order.
pub fn batch_gradients(
    model: &GaitContour,
    features: &[Tensor],
    labels: &[usize],
    margin: f64,
) -> Result<StepGradients> {
    let sessions: Vec<(Session<'_>, crate::numeric::Var)> = features
        .par_iter()
        .map(|x| {
            let mut s = Session::new(model, ForwardMode::Train);
            let e = s.forward(x)?;
            Ok((s, e))
        })
        .collect::<Result<_>>()?;
    let embeddings: Vec<Vec<f64>> = sessions.iter().map(|(s, e)| s.tape.value(*e).data().to_vec()).collect();
    let d = model.config().embedding_dim();
    let stacked = Tensor::new(&[embeddings.len(), d], embeddings.concat())?;
    let mut loss_tape = Tape::new();
    let emb = loss_tape.leaf(stacked, true);
    let loss_var = loss_tape.batch_hard_triplet(emb, labels, margin)?;
    let loss = loss_tape.value(loss_var).item();
    let d_emb = loss_tape
        .backward(loss_var)?
        .take(emb)
        .unwrap_or_else(|| Tensor::zeros(&[embeddings.len(), d]));

    let per_seq: Vec<SequenceGrads> = sessions
        .into_par_iter()
        .enumerate()
        .map(|(i, (mut s, e))| {
            let seed = Tensor::new(&[d], d_emb.data()[i * d..(i + 1) * d].to_vec())?;
            let seed = s.tape.constant(seed);
            let weighted = s.tape.mul(e, seed)?;
            let total = s.tape.sum(weighted);
            let mut g = s.tape.backward(total)?;
            let grads = model.params().ids().map(|id| g.take(s.param(id))).collect();
            Ok((grads, s.into_stats()))
        })
        .collect::<Result<_>>()?;

    let mut grads: Vec<Option<Tensor>> = vec![None; model.params().len()];
    let mut stats = Vec::with_capacity(per_seq.len());
    for (g, st) in per_seq {
        for (acc, gi) in grads.iter_mut().zip(g) {
            match (acc.as_mut(), gi) {
                (Some(a), Some(gi)) => a.add_assign(gi.data()),
                (None, Some(gi)) => *acc = Some(gi),
                _ => {}
            }
        }
        stats.push(st);
    }
    Ok(StepGradients {
        loss,
        grads,
        stats,
        embeddings,
    })
}

fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("ckpt_{step:06}.gct"))
}

pub const FINAL_CHECKPOINT: &str = "model.gct";
pub const LOSS_CURVE: &str = "loss.csv";

/// Seeded P x K training loop. Batch sampling draws from `triplet.seed` and
/// augmentation from `augment.rng_seed`, each on its own stream. With an
/// output directory, writes the loss curve, periodic checkpoints and
/// `model.gct`.
pub fn train_loop(data: &LabeledSequences, cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let tc = &cfg.triplet;
    if let Some(s) = data.sequences.iter().find(|s| s.kind != GraphKind::ContourPose) {
        return Err(Error::InvalidConfig(format!(
            "GaitContour trains on Contour-Pose sequences, got a {:?} graph",
            s.kind
        )));
    }
    let groups = data.by_label();
    let eligible: Vec<usize> = (0..groups.len()).filter(|&l| groups[l].len() >= tc.k_seqs).collect();
    if eligible.len() < tc.p_subjects {
        return Err(Error::InsufficientData(format!(
            "{} subjects have >= {} sequences, batches need {}",
            eligible.len(),
            tc.k_seqs,
            tc.p_subjects
        )));
    }
    if let Some(dir) = out_dir {
        crate::io::create_dir_all(dir)?;
    }

    let mut model = GaitContour::new(cfg.model.clone())?;
    let mut adam = AdamState::new(model.params());
    let mut adam_cfg = tc.adam();
    let mut sample_rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.augment.rng_seed);
    aug_rng.set_stream(1);
    let mut losses = Vec::with_capacity(tc.steps);

    for step in 1..=tc.steps {
        let batch = sample_batch(data, &eligible, &groups, tc, &mut sample_rng);
        let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
        let augmented = batch
            .iter()
            .map(|s| augment(&s.seq, &cfg.augment, &mut aug_rng))
            .collect::<Result<Vec<_>>>()?;
        let features = augmented
            .par_iter()
            .map(|s| sequence_features(s, &cfg.channels))
            .collect::<Result<Vec<_>>>()?;
        let sg = batch_gradients(&model, &features, &labels, tc.margin)?;
        if !sg.loss.is_finite() {
            return Err(Error::InvalidConfig(format!("loss diverged at step {step}")));
        }
        model.update_running_stats(&sg.stats);
        adam_cfg.lr = tc.lr_schedule.at(tc.lr, step, tc.steps);
        adam_step(model.params_mut(), &sg.grads, &mut adam, &adam_cfg);
        losses.push(sg.loss);
        if step % 100 == 0 || step == tc.steps {
            let recent = &losses[losses.len().saturating_sub(100)..];
            log::info!(
                "step {step}/{}: loss {:.5} (mean of last {} {:.5})",
                tc.steps,
                sg.loss,
                recent.len(),
                recent.iter().sum::<f64>() / recent.len() as f64
            );
        }
        if let Some(dir) = out_dir {
            if tc.checkpoint_every > 0 && step % tc.checkpoint_every == 0 && step != tc.steps {
                model.save(&checkpoint_path(dir, step))?;
            }
        }
    }

    if let Some(dir) = out_dir {
        model.save(&dir.join(FINAL_CHECKPOINT))?;
        write_loss_curve(&dir.join(LOSS_CURVE), &losses)?;
    }
    Ok(TrainOutcome { model, losses })
}

pub fn write_loss_curve(path: &Path, losses: &[f64]) -> Result<()> {
    let mut csv = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        writeln!(csv, "{},{l:.17e}", i + 1).expect("writing to a String");
    }
    std::fs::write(path, csv).map_err(|e| Error::io(path, e))
}

/// Mean of the last `n` losses.
pub fn tail_mean(losses: &[f64], n: usize) -> f64 {
    let tail = &losses[losses.len().saturating_sub(n)..];
    tail.iter().sum::<f64>() / tail.len().max(1) as f64
}
