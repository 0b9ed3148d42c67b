//! AdamW with decoupled weight decay, the warmup/cosine/cool-down learning
//! rate schedule, global-norm gradient clipping, and the EMA shadow update.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{OptSnapshot, ParamStore};
use crate::tensor::Tensor;

use super::TrainConfig;

#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
    pub step: u64,
    pub rejected: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (name, t) in params.iter() {
            m.insert(name.clone(), vec![0.0; t.numel()]);
            v.insert(name.clone(), vec![0.0; t.numel()]);
        }
        AdamState { m, v, step: 0, rejected: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn to_snapshot(&self) -> OptSnapshot {
        let pack = |src: &BTreeMap<String, Vec<f64>>| {
            let mut store = ParamStore::default();
            for (name, vals) in src {
                store.insert(name, Tensor::new(vec![vals.len()], vals.clone()).expect("flat"));
            }
            store
        };
        OptSnapshot { m: pack(&self.m), v: pack(&self.v), step: self.step, rejected: self.rejected }
    }
}

/// One decoupled-weight-decay Adam step. Non-finite gradients reject the
/// whole step (parameters and moments untouched, `rejected` incremented);
/// returns whether the step was applied.
pub fn adamw_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Vec<f64>>,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<bool> {
    for (name, g) in grads {
        let p = params.get(name)?;
        if p.numel() != g.len() {
            return Err(Error::Shape(format!(
                "adamw: gradient for '{name}' has {} elements, parameter has {}",
                g.len(),
                p.numel()
            )));
        }
        if !g.iter().all(|x| x.is_finite()) {
            state.rejected += 1;
            return Ok(false);
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (name, g) in grads {
        let m = state.m.get_mut(name).ok_or_else(|| Error::Config(format!("adamw: no state for '{name}'")))?;
        let v = state.v.get_mut(name).unwrap();
        let p = params.get_mut(name)?.values_mut();
        for i in 0..g.len() {
            // decay is decoupled from the adaptive update
            p[i] -= lr * weight_decay * p[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            p[i] -= lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(true)
}

/// Learning rate at a (possibly fractional) epoch: linear warm-up from 0 to
/// lr_max, cosine decay to lr_min over the span between warm-up and
/// cool-down, then a constant lr_min tail.
pub fn cosine_lr(epoch: f64, cfg: &TrainConfig) -> f64 {
    let warm = cfg.warmup_epochs as f64;
    let total = cfg.total_epochs as f64;
    let cool = cfg.cooldown_epochs as f64;
    let span = (total - warm - cool).max(0.0);
    if epoch < warm && warm > 0.0 {
        return cfg.lr_max * (epoch / warm).max(0.0);
    }
    let pos = epoch - warm;
    if pos >= span || span == 0.0 {
        return cfg.lr_min;
    }
    cfg.lr_min + (cfg.lr_max - cfg.lr_min) * (1.0 + (std::f64::consts::PI * pos / span).cos()) / 2.0
}

/// Scale all gradients so the global L2 norm does not exceed `max_norm`.
/// Returns the pre-clip norm and whether scaling was applied.
pub fn clip_gradients(grads: &mut BTreeMap<String, Vec<f64>>, max_norm: f64) -> (f64, bool) {
    let sq: f64 = grads.values().flat_map(|g| g.iter()).map(|x| x * x).sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.values_mut() {
            g.iter_mut().for_each(|x| *x *= scale);
        }
        (norm, true)
    } else {
        (norm, false)
    }
}

/// shadow ← decay·shadow + (1−decay)·params
pub fn ema_update(shadow: &mut ParamStore, params: &ParamStore, decay: f64) {
    for (name, p) in params.iter() {
        if let Ok(s) = shadow.get_mut(name) {
            for (sv, pv) in s.values_mut().iter_mut().zip(p.values()) {
                *sv = decay * *sv + (1.0 - decay) * pv;
            }
        }
    }
}
