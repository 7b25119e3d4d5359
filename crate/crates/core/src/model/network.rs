use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, Region, NUM_REGIONS, REGION_KEYPOINTS, REGION_POINTS};
use crate::contour_pose::{ContourPoseSequence, GraphKind, CONTOUR_POSE_POINTS, GROUP_SIZE, NUM_KEYPOINTS};
use crate::error::{Error, Result};
use crate::features::{sequence_features, ChannelSpec};
use crate::numeric::params::normal_init;
use crate::numeric::{checkpoint, BatchStats, NormMode, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct BnIds {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

/// Parameter handles of one Temporal Transformer Layer.
#[derive(Clone, Debug)]
pub struct TtlIds {
    pub c_in: usize,
    pub c_out: usize,
    pub ta_w: ParamId,
    pub ta_b: ParamId,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub bn1: BnIds,
    pub bn2: BnIds,
    /// Shared residual projection, present when `c_in != c_out`.
    pub proj: Option<ParamId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardMode {
    /// Batch norm uses input statistics and reports them.
    Train,
    /// Batch norm uses the stored running statistics.
    Eval,
}

/// GaitContour: shared-weight Local-CPT over five regions followed by a
/// Global-PFT producing one identity embedding per sequence.
#[derive(Clone, Debug)]
pub struct GaitContour {
    config: ModelConfig,
    params: ParamStore,
    local: Vec<TtlIds>,
    global: Vec<TtlIds>,
    region_embed: ParamId,
}

fn register_bn(store: &mut ParamStore, prefix: &str, c: usize) -> BnIds {
    BnIds {
        gamma: store.register(format!("{prefix}.gamma"), Tensor::full(&[c], 1.0), true),
        beta: store.register(format!("{prefix}.beta"), Tensor::zeros(&[c]), true),
        running_mean: store.register(format!("{prefix}.running_mean"), Tensor::zeros(&[c]), false),
        running_var: store.register(format!("{prefix}.running_var"), Tensor::full(&[c], 1.0), false),
    }
}

fn register_ttl(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    c_in: usize,
    c_out: usize,
    k: usize,
) -> TtlIds {
    let mut weight = |store: &mut ParamStore, name: &str, shape: &[usize], fan_in: usize| {
        let t = normal_init(shape, 1.0 / (fan_in as f64).sqrt(), rng);
        store.register(format!("{prefix}.{name}"), t, true)
    };
    let ta_w = weight(store, "ta.w", &[k, c_in, c_in], k * c_in);
    let ta_b = store.register(format!("{prefix}.ta.b"), Tensor::zeros(&[c_in]), true);
    let bn1 = register_bn(store, &format!("{prefix}.bn1"), c_in);
    let mut proj_pair = |store: &mut ParamStore, name: &str| {
        let w = weight(store, &format!("{name}.w"), &[c_in, c_in], c_in);
        let b = store.register(format!("{prefix}.{name}.b"), Tensor::zeros(&[c_in]), true);
        (w, b)
    };
    let (wq, bq) = proj_pair(store, "mha.q");
    let (wk, bk) = proj_pair(store, "mha.k");
    let (wv, bv) = proj_pair(store, "mha.v");
    let (wo, bo) = proj_pair(store, "mha.o");
    let conv_w = weight(store, "conv.w", &[c_in, c_out], c_in);
    let conv_b = store.register(format!("{prefix}.conv.b"), Tensor::zeros(&[c_out]), true);
    let bn2 = register_bn(store, &format!("{prefix}.bn2"), c_out);
    let proj = (c_in != c_out).then(|| weight(store, "res_proj.w", &[c_in, c_out], c_in));
    TtlIds {
        c_in,
        c_out,
        ta_w,
        ta_b,
        wq,
        bq,
        wk,
        bk,
        wv,
        bv,
        wo,
        bo,
        conv_w,
        conv_b,
        bn1,
        bn2,
        proj,
    }
}

impl GaitContour {
    /// Fresh parameters drawn from `config.init_seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut params = ParamStore::new();
        let k = config.ta_kernel;
        let mut c = config.input_channels;
        let mut local = Vec::new();
        for (i, &out) in config.local_channels.iter().enumerate() {
            local.push(register_ttl(&mut params, &mut rng, &format!("local.{i}"), c, out, k));
            c = out;
        }
        let region_embed = params.register(
            "local.region_embed",
            normal_init(&[NUM_REGIONS, config.embed_dim], 1.0, &mut rng),
            true,
        );
        let mut global = Vec::new();
        for (i, &out) in config.global_channels.iter().enumerate() {
            global.push(register_ttl(&mut params, &mut rng, &format!("global.{i}"), c, out, k));
            c = out;
        }
        Ok(GaitContour {
            config,
            params,
            local,
            global,
            region_embed,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn local_blocks(&self) -> &[TtlIds] {
        &self.local
    }

    pub fn global_blocks(&self) -> &[TtlIds] {
        &self.global
    }

    pub fn region_embed(&self) -> ParamId {
        self.region_embed
    }

    /// Trainable element count of the shared Local-CPT (blocks + regional table).
    pub fn local_parameter_count(&self) -> usize {
        let prefixed = |p: &str| {
            self.params
                .entries()
                .iter()
                .filter(|e| e.trainable && e.name.starts_with(p))
                .map(|e| e.tensor.numel())
                .sum::<usize>()
        };
        prefixed("local.")
    }

    /// Blends per-sequence batch statistics into the running statistics:
    /// statistics of the same layer are averaged in order, then mixed in
    /// with the configured momentum.
    pub fn update_running_stats(&mut self, per_sequence: &[Vec<(BnIds, BatchStats)>]) {
        let Some(first) = per_sequence.first() else {
            return;
        };
        let m = self.config.bn_momentum;
        let n = per_sequence.len() as f64;
        for (slot, (ids, _)) in first.iter().enumerate() {
            let c = self.params.get(ids.running_mean).numel();
            let (mut mean, mut var) = (vec![0.0; c], vec![0.0; c]);
            for seq in per_sequence {
                let s = &seq[slot].1;
                for ch in 0..c {
                    mean[ch] += s.mean[ch] / n;
                    var[ch] += s.var_unbiased[ch] / n;
                }
            }
            for (id, fresh) in [(ids.running_mean, mean), (ids.running_var, var)] {
                for (r, f) in self.params.get_mut(id).data_mut().iter_mut().zip(fresh) {
                    *r = (1.0 - m) * *r + m * f;
                }
            }
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save(path, &self.params.named_values())
    }

    pub fn load(config: ModelConfig, path: &std::path::Path) -> Result<Self> {
        let mut model = GaitContour::new(config)?;
        model.params.assign(checkpoint::load(path)?)?;
        Ok(model)
    }

    /// Identity embedding of a sequence with frozen statistics.
    pub fn embed(&self, seq: &ContourPoseSequence, channels: &ChannelSpec) -> Result<Vec<f64>> {
        let features = sequence_features(seq, channels)?;
        let mut s = Session::new(self, ForwardMode::Eval);
        let e = s.forward(&features)?;
        Ok(s.tape.value(e).data().to_vec())
    }
}

/// One differentiable pass over a model: a tape with every parameter bound
/// as a leaf, plus the batch statistics gathered in train mode.
pub struct Session<'m> {
    pub tape: Tape,
    model: &'m GaitContour,
    vars: Vec<Var>,
    mode: ForwardMode,
    stats: Vec<(BnIds, BatchStats)>,
}

impl<'m> Session<'m> {
    pub fn new(model: &'m GaitContour, mode: ForwardMode) -> Self {
        let mut tape = Tape::new();
        let vars = model.params.bind(&mut tape);
        Session {
            tape,
            model,
            vars,
            mode,
            stats: Vec::new(),
        }
    }

    /// Session over an existing tape whose leaves `vars` stand in for the
    /// model parameters (same order as the store), e.g. for gradient checks.
    pub fn from_tape(model: &'m GaitContour, tape: Tape, vars: Vec<Var>, mode: ForwardMode) -> Result<Self> {
        if vars.len() != model.params.len() {
            return Err(Error::LengthMismatch(model.params.len(), vars.len()));
        }
        Ok(Session {
            tape,
            model,
            vars,
            mode,
            stats: Vec::new(),
        })
    }

    pub fn param(&self, id: ParamId) -> Var {
        self.vars[id.index()]
    }

    pub fn model(&self) -> &'m GaitContour {
        self.model
    }

    /// Batch statistics in the order the layers ran.
    pub fn stats(&self) -> &[(BnIds, BatchStats)] {
        &self.stats
    }

    pub fn into_stats(self) -> Vec<(BnIds, BatchStats)> {
        self.stats
    }

    fn batch_norm(&mut self, x: Var, ids: BnIds) -> Result<Var> {
        let (g, b) = (self.param(ids.gamma), self.param(ids.beta));
        let model = self.model;
        let mode = match self.mode {
            ForwardMode::Train => NormMode::Train,
            ForwardMode::Eval => NormMode::Eval {
                mean: model.params.get(ids.running_mean).data(),
                var: model.params.get(ids.running_var).data(),
            },
        };
        let (y, stats) = self.tape.batch_norm(x, g, b, mode)?;
        if let Some(s) = stats {
            self.stats.push((ids, s));
        }
        Ok(y)
    }

    /// Temporal Transformer Layer on `[B, T, J, C_in]`:
    /// `zh = z + TA(z)`, `out = BN(Conv(MHA(BN(zh)))) + zh + z`, where TA is
    /// a ReLU temporal convolution, Conv a point-wise projection, and both
    /// residual terms share one projection when the width changes.
    pub fn ttl(&mut self, ids: &TtlIds, z: Var) -> Result<Var> {
        let shape = self.tape.value(z).shape().to_vec();
        let [b, t, j, c] = shape[..] else {
            return Err(Error::shape(format!("TTL expects [B,T,J,C], got {shape:?}")));
        };
        if c != ids.c_in {
            return Err(Error::shape(format!("TTL expects {} channels, got {c}", ids.c_in)));
        }
        let pad = (self.model.config.ta_kernel - 1) / 2;
        let ta = self
            .tape
            .temporal_conv(z, self.param(ids.ta_w), Some(self.param(ids.ta_b)), pad)?;
        let ta = self.tape.relu(ta)?;
        let zh = self.tape.add(z, ta)?;

        let n1 = self.batch_norm(zh, ids.bn1)?;
        let tokens = self.tape.reshape(n1, &[b * t, j, c])?;
        let q = self.tape.linear(tokens, self.param(ids.wq), Some(self.param(ids.bq)))?;
        let k = self.tape.linear(tokens, self.param(ids.wk), Some(self.param(ids.bk)))?;
        let v = self.tape.linear(tokens, self.param(ids.wv), Some(self.param(ids.bv)))?;
        let att = self.tape.attention(q, k, v, self.model.config.heads)?;
        let att = self.tape.linear(att, self.param(ids.wo), Some(self.param(ids.bo)))?;
        let conv = self
            .tape
            .linear(att, self.param(ids.conv_w), Some(self.param(ids.conv_b)))?;
        let conv = self.tape.reshape(conv, &[b, t, j, ids.c_out])?;
        let main = self.batch_norm(conv, ids.bn2)?;

        let mut residual = self.tape.add(zh, z)?;
        if let Some(p) = ids.proj {
            residual = self.tape.linear(residual, self.param(p), None)?;
        }
        self.tape.add(main, residual)
    }

    /// Shared Local-CPT over stacked regions `[R, T, 33, C_in]`; entry `r`
    /// of `regions` names the body region of slice `r`. Returns `[R, T, 3, C]`.
    pub fn local_cpt(&mut self, x: Var, regions: &[Region]) -> Result<Var> {
        let shape = self.tape.value(x).shape().to_vec();
        let [r, t, j, _] = shape[..] else {
            return Err(Error::shape(format!("Local-CPT expects [R,T,J,C], got {shape:?}")));
        };
        if r != regions.len() || j != REGION_POINTS {
            return Err(Error::shape(format!(
                "Local-CPT input {shape:?} for {} regions",
                regions.len()
            )));
        }
        let blocks = &self.model.local;
        let mut h = self.ttl(&blocks[0], x)?;
        let width = blocks[0].c_out;
        let rows: Vec<usize> = regions
            .iter()
            .flat_map(|reg| std::iter::repeat_n(reg.index(), t * j))
            .collect();
        let table = self.param(self.model.region_embed);
        let l_r = self.tape.index_select(table, 0, &rows)?;
        let l_r = self.tape.reshape(l_r, &[r, t, j, width])?;
        h = self.tape.add(h, l_r)?;
        for ids in &blocks[1..] {
            h = self.ttl(ids, h)?;
        }
        self.tape.avg_pool(h, 2, GROUP_SIZE)
    }

    /// Global-PFT over the five regional outputs `[5, T, 3, C]` (stacked in
    /// region order); returns the `[D]` identity embedding.
    pub fn global_pft(&mut self, regional: Var) -> Result<Var> {
        let shape = self.tape.value(regional).shape().to_vec();
        let [r, t, k, _] = shape[..] else {
            return Err(Error::shape(format!("Global-PFT expects [5,T,3,C], got {shape:?}")));
        };
        if r != NUM_REGIONS || k != REGION_KEYPOINTS {
            return Err(Error::shape(format!("Global-PFT input {shape:?}")));
        }
        let mut h = self.concat_regions(regional)?;
        for ids in &self.model.global {
            h = self.ttl(ids, h)?;
        }
        let pooled = self.tape.avg_pool(h, 2, NUM_KEYPOINTS)?;
        let d = self.model.config.embedding_dim();
        let frames = self.tape.reshape(pooled, &[t, d])?;
        self.tape.mean(frames, 0)
    }

    /// `[5, T, 3, C]` to `[1, T, 15, C]`, regions side by side in region order.
    pub fn concat_regions(&mut self, regional: Var) -> Result<Var> {
        let parts = (0..NUM_REGIONS)
            .map(|i| self.tape.index_select(regional, 0, &[i]))
            .collect::<Result<Vec<_>>>()?;
        self.tape.concat(&parts, 2)
    }

    /// Full network on embedded features `[T, 165, C_in]`.
    pub fn forward(&mut self, features: &Tensor) -> Result<Var> {
        let shape = features.shape();
        if shape.len() != 3 || shape[1] != CONTOUR_POSE_POINTS || shape[2] != self.model.config.input_channels {
            return Err(Error::shape(format!(
                "model input must be [T, {CONTOUR_POSE_POINTS}, {}], got {shape:?}",
                self.model.config.input_channels
            )));
        }
        if shape[0] == 0 {
            return Err(Error::shape("model input has no frames"));
        }
        let x = self.tape.constant(features.clone());
        let stacked = split_region_vars(&mut self.tape, x)?;
        let local = self.local_cpt(stacked, &Region::ALL)?;
        self.global_pft(local)
    }
}

/// `[T, 165, C]` to `[5, T, 33, C]` in region order.
fn split_region_vars(tape: &mut Tape, x: Var) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    let parts = Region::ALL
        .iter()
        .map(|r| {
            let sel = tape.index_select(x, 1, &r.point_indices())?;
            tape.reshape(sel, &[1, shape[0], REGION_POINTS, shape[2]])
        })
        .collect::<Result<Vec<_>>>()?;
    tape.concat(&parts, 0)
}

/// Splits `[T, 165, C]` into the five `[T, 33, C]` region tensors.
pub fn split_region_tensor(x: &Tensor) -> Result<Vec<Tensor>> {
    let shape = x.shape();
    if shape.len() != 3 || shape[1] != CONTOUR_POSE_POINTS {
        return Err(Error::shape(format!(
            "expected [T, {CONTOUR_POSE_POINTS}, C], got {shape:?}"
        )));
    }
    let (t, c) = (shape[0], shape[2]);
    Region::ALL
        .iter()
        .map(|r| {
            let idx = r.point_indices();
            let mut data = Vec::with_capacity(t * REGION_POINTS * c);
            for ti in 0..t {
                for &p in &idx {
                    data.extend_from_slice(&x.data()[(ti * CONTOUR_POSE_POINTS + p) * c..][..c]);
                }
            }
            Tensor::new(&[t, REGION_POINTS, c], data)
        })
        .collect()
}

/// Coordinates of each region, `[T, 33, 2]`, in region order.
pub fn split_regions(seq: &ContourPoseSequence) -> Result<Vec<Tensor>> {
    seq.validate()?;
    if seq.kind != GraphKind::ContourPose {
        return Err(Error::InvalidConfig(
            "region split needs a Contour-Pose sequence".into(),
        ));
    }
    let data = seq
        .frames
        .iter()
        .flat_map(|f| f.points.iter().flat_map(|p| [p[0], p[1]]))
        .collect();
    split_region_tensor(&Tensor::new(&[seq.len(), CONTOUR_POSE_POINTS, 2], data)?)
}
