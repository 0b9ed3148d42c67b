//! Optimization loop and evaluation: shuffled minibatches, the blended
//! BCE/KD objective, gradient clipping, AdamW, EMA shadows, the cosine
//! schedule, and per-epoch JSONL metrics on both raw and EMA weights.

pub mod data;
pub mod metrics;
pub mod optim;
pub mod synth;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distill::{
    adapt_teacher, dynamic_weights, teacher_probs, total_loss, AdaptedTeacher, LossConfig,
    TeacherAdapterSpec, NUM_LABELS, TEACHER_DIM,
};
use crate::error::{Error, Result};
use crate::model::{ForwardOpts, Model, ParamStore};
use crate::tensor::{sigmoid, Tape, Tensor};

use data::Dataset;
use metrics::{compute_metrics, MetricsReport};
use optim::{adamw_step, clip_gradients, cosine_lr, ema_update, AdamState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub warmup_epochs: usize,
    pub cooldown_epochs: usize,
    pub total_epochs: usize,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub ema_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub alpha: f64,
    pub tau: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        // desk-scale defaults; see `paper_profile` for the full-scale values
        TrainConfig {
            lr_max: 1e-3,
            lr_min: 1e-5,
            warmup_epochs: 3,
            cooldown_epochs: 0,
            total_epochs: 30,
            weight_decay: 0.025,
            clip_norm: 0.02,
            ema_decay: 0.998,
            batch_size: 8,
            seed: 0,
            alpha: 0.0,
            tau: 1.0,
        }
    }
}

impl TrainConfig {
    /// Full-scale training profile: 5 warm-up epochs, a 30-epoch cosine
    /// span, 10 cool-down epochs, batch 512, EMA 0.99996; kept as named
    /// documentation, not exercised at desk scale.
    pub fn paper_profile() -> Self {
        TrainConfig {
            lr_max: 1e-3,
            lr_min: 1e-5,
            warmup_epochs: 5,
            cooldown_epochs: 10,
            total_epochs: 45,
            weight_decay: 0.025,
            clip_norm: 0.02,
            ema_decay: 0.99996,
            batch_size: 512,
            seed: 0,
            alpha: 0.5,
            tau: 1.0,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig { alpha: self.alpha, temperature: self.tau }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr_min > self.lr_max {
            return Err(Error::Config(format!("lr_min {} > lr_max {}", self.lr_min, self.lr_max)));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(Error::Config(format!("ema_decay {} outside [0,1]", self.ema_decay)));
        }
        if self.clip_norm <= 0.0 {
            return Err(Error::Config(format!("clip_norm {} must be positive", self.clip_norm)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        if self.warmup_epochs + self.cooldown_epochs > self.total_epochs {
            return Err(Error::Config(format!(
                "warmup {} + cooldown {} exceed total epochs {}",
                self.warmup_epochs, self.cooldown_epochs, self.total_epochs
            )));
        }
        self.loss_config().validate()
    }
}

/// Adapted teacher logits aligned row-for-row with a dataset.
pub struct TeacherData {
    pub adapted: AdaptedTeacher,
}

/// Align raw 18-logit rows to dataset sample order and adapt them.
pub fn align_teacher(
    rows: &[(String, [f64; TEACHER_DIM])],
    sample_ids: &[String],
    spec: &TeacherAdapterSpec,
) -> Result<TeacherData> {
    let by_id: BTreeMap<&str, &[f64; TEACHER_DIM]> =
        rows.iter().map(|(id, row)| (id.as_str(), row)).collect();
    let mut flat = Vec::with_capacity(sample_ids.len() * TEACHER_DIM);
    for id in sample_ids {
        let row = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::Config(format!("teacher logits missing for sample '{id}'")))?;
        flat.extend_from_slice(&row[..]);
    }
    let raw = Tensor::new(vec![sample_ids.len(), TEACHER_DIM], flat)?;
    Ok(TeacherData { adapted: adapt_teacher(&raw, spec)? })
}

/// One JSONL metrics record.
#[derive(Debug, Clone, Serialize)]
pub struct EpochLine {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub auc_macro: Option<f64>,
    pub auc_micro: Option<f64>,
    pub auc_per_label: Vec<Option<f64>>,
    pub acc: f64,
    pub f1: f64,
}

impl EpochLine {
    fn new(epoch: usize, lr: f64, rep: &MetricsReport) -> Self {
        EpochLine {
            epoch,
            lr,
            loss: rep.loss,
            auc_macro: rep.auc_macro,
            auc_micro: rep.auc_micro,
            auc_per_label: rep.auc_per_label.clone(),
            acc: rep.acc,
            f1: rep.f1,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metrics line serialization")
    }
}

fn teacher_batch(teacher: &TeacherData, indices: &[usize], tau: f64) -> Result<(Tensor, Vec<f64>)> {
    let mut flat = Vec::with_capacity(indices.len() * NUM_LABELS);
    for &i in indices {
        flat.extend_from_slice(
            &teacher.adapted.logits.values()[i * NUM_LABELS..(i + 1) * NUM_LABELS],
        );
    }
    let logits = Tensor::new(vec![indices.len(), NUM_LABELS], flat)?;
    let probs = teacher_probs(&logits, tau);
    let w = dynamic_weights(&probs, &teacher.adapted.active)?;
    Ok((probs, w))
}

/// Evaluate the loss and metrics of a parameter set over a dataset. With no
/// teacher available the loss falls back to the pure ground-truth term.
pub fn evaluate(
    model: &Model,
    params: &ParamStore,
    dataset: &Dataset,
    teacher: Option<&TeacherData>,
    loss_cfg: &LossConfig,
) -> Result<MetricsReport> {
    let eff = if teacher.is_none() {
        LossConfig { alpha: 0.0, temperature: loss_cfg.temperature }
    } else {
        *loss_cfg
    };
    let n = dataset.len();
    let batch = 16usize;
    let mut probs: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut loss_sum = 0.0;
    let mut i = 0;
    while i < n {
        let indices: Vec<usize> = (i..(i + batch).min(n)).collect();
        let (images, targets) = dataset.batch(&indices)?;
        let t = Tape::new();
        let res = model.forward_with(&t, params, &images, ForwardOpts::default())?;
        let y = t.leaf(targets);
        let tv = if eff.alpha > 0.0 {
            let (p_t, w) = teacher_batch(teacher.unwrap(), &indices, eff.temperature)?;
            let p_t = t.leaf(p_t);
            Some((p_t, w))
        } else {
            None
        };
        let loss = total_loss(&t, res.logits, y, tv.as_ref().map(|(p, w)| (*p, w.as_slice())), &eff)?;
        loss_sum += t.value_vec(loss)[0] * indices.len() as f64;
        let logits = t.value_vec(res.logits);
        for row in logits.chunks(NUM_LABELS) {
            probs.push(row.iter().map(|&o| sigmoid(o)).collect());
        }
        i += batch;
    }
    compute_metrics(&probs, &dataset.targets, loss_sum / n as f64)
}

pub struct TrainOutput {
    pub ema: ParamStore,
    pub adam: AdamState,
    /// Per-epoch metrics on EMA weights, already serialized as JSONL.
    pub lines_ema: Vec<String>,
    /// Per-epoch metrics on raw weights.
    pub lines_raw: Vec<String>,
    pub reports_ema: Vec<MetricsReport>,
    pub reports_raw: Vec<MetricsReport>,
    pub steps: u64,
}

/// Full training run. Per step: shuffled batch → forward → blended loss →
/// backward → global-norm clip → AdamW → EMA. Per epoch: metrics on the
/// validation set (or the training set when absent), on raw and EMA weights.
pub fn train(
    model: &mut Model,
    dataset: &Dataset,
    val: Option<&Dataset>,
    teacher: Option<&TeacherData>,
    val_teacher: Option<&TeacherData>,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if cfg.alpha > 0.0 && teacher.is_none() {
        return Err(Error::Config("alpha > 0 requires teacher logits".into()));
    }
    if let Some(td) = teacher {
        if td.adapted.logits.shape()[0] != dataset.len() {
            return Err(Error::Shape(format!(
                "teacher rows {} != dataset size {}",
                td.adapted.logits.shape()[0],
                dataset.len()
            )));
        }
    }
    let loss_cfg = cfg.loss_config();
    let mut ema = model.params.clone();
    let mut adam = AdamState::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = dataset.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let mut lines_ema = Vec::new();
    let mut lines_raw = Vec::new();
    let mut reports_ema = Vec::new();
    let mut reports_raw = Vec::new();
    let mut steps = 0u64;

    for epoch in 0..cfg.total_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut epoch_lr = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let lr = cosine_lr(epoch as f64 + bi as f64 / steps_per_epoch as f64, cfg);
            epoch_lr = lr;
            let (images, targets) = dataset.batch(chunk)?;
            let t = Tape::new();
            let res = model.forward(&t, &images, ForwardOpts { train: true, ..Default::default() })?;
            let y = t.leaf(targets);
            let tv = if cfg.alpha > 0.0 {
                let (p_t, w) = teacher_batch(teacher.unwrap(), chunk, cfg.tau)?;
                Some((t.leaf(p_t), w))
            } else {
                None
            };
            let loss =
                total_loss(&t, res.logits, y, tv.as_ref().map(|(p, w)| (*p, w.as_slice())), &loss_cfg)?;
            let loss_val = t.value_vec(loss)[0];
            if !loss_val.is_finite() {
                let ids: Vec<&str> = chunk.iter().map(|&i| dataset.sample_ids[i].as_str()).collect();
                return Err(Error::NonFinite(format!(
                    "loss at epoch {epoch}, batch {bi} (samples {})",
                    ids.join(",")
                )));
            }
            t.backward(loss)?;
            let mut grads: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for (name, var) in &res.param_vars {
                grads.insert(name.clone(), t.grad_vec(*var));
            }
            clip_gradients(&mut grads, cfg.clip_norm);
            adamw_step(&mut model.params, &grads, &mut adam, lr, cfg.weight_decay)?;
            ema_update(&mut ema, &model.params, cfg.ema_decay);
            steps += 1;
        }

        let eval_set = val.unwrap_or(dataset);
        let eval_teacher = if val.is_some() { val_teacher } else { teacher };
        let rep_raw = evaluate(model, &model.params, eval_set, eval_teacher, &loss_cfg)?;
        let rep_ema = evaluate(model, &ema, eval_set, eval_teacher, &loss_cfg)?;
        lines_raw.push(EpochLine::new(epoch, epoch_lr, &rep_raw).to_json());
        lines_ema.push(EpochLine::new(epoch, epoch_lr, &rep_ema).to_json());
        reports_raw.push(rep_raw);
        reports_ema.push(rep_ema);
    }

    Ok(TrainOutput { ema, adam, lines_ema, lines_raw, reports_ema, reports_raw, steps })
}
