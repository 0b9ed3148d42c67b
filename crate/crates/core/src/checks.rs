//! Finite-difference verification suites over the whole op set, the MXA
//! block, and the full model loss. Backs the `gradcheck` command and the
//! gradient acceptance gate.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::distill::bcewl;
use crate::error::Result;
use crate::model::{ForwardOpts, Model, ModelConfig};
use crate::mxa::{mxa_forward, CbamVars, RoiPredictorVars};
use crate::tensor::gradcheck::{gradient_check, GradCheckReport};
use crate::tensor::{PoolKind, Tape, Tensor, VarId};

pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub worst: f64,
    pub tol: f64,
    pub pass: bool,
    /// On failure: element index plus analytic vs numeric values.
    pub detail: Option<String>,
}

impl CheckOutcome {
    fn from_report(name: &str, report: &GradCheckReport) -> Self {
        let pass = report.pass();
        let detail = if pass {
            None
        } else {
            report
                .inputs
                .iter()
                .max_by(|a, b| a.worst_rel_err.total_cmp(&b.worst_rel_err))
                .map(|w| {
                    format!(
                        "input {} element {}: analytic {:.6e} vs numeric {:.6e}",
                        w.input_index, w.worst_element, w.worst_analytic, w.worst_numeric
                    )
                })
        };
        CheckOutcome { name: name.to_string(), worst: report.worst(), tol: report.tol, pass, detail }
    }
}

fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Uniform values pushed away from zero (for kinked ops like relu/max).
fn rand_t_off_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let vals = (0..n)
        .map(|_| {
            let r: f64 = rng.gen_range(-1.0..1.0);
            r.signum() * (0.05 + 0.95 * r.abs())
        })
        .collect();
    Tensor::new(shape.to_vec(), vals).unwrap()
}

/// Dot the output against fixed random weights so layout errors cannot hide
/// inside a permutation-invariant plain sum.
fn weighted(t: &Tape, out: VarId, weights: &[f64]) -> Result<VarId> {
    let w = t.constant(t.shape_of(out), weights.to_vec())?;
    t.sum_all(t.mul(out, w)?)
}

type CheckFn = fn(u64, f64) -> Result<GradCheckReport>;

macro_rules! check {
    ($name:ident, $seed:ident, $tol:ident, $inputs:expr, |$t:ident, $vars:ident, $w:ident| $body:expr, $out_len:expr) => {
        fn $name($seed: u64, $tol: f64) -> Result<GradCheckReport> {
            let mut rng = ChaCha8Rng::seed_from_u64($seed);
            let inputs = $inputs(&mut rng);
            let wv: Vec<f64> = (0..$out_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            gradient_check(
                move |$t, $vars| {
                    let $w = &wv;
                    $body
                },
                &inputs,
                FD_STEP,
                $tol,
            )
        }
    };
}

check!(chk_add, seed, tol, |r: &mut ChaCha8Rng| vec![rand_t(&[2, 3], r), rand_t(&[2, 3], r)],
    |t, vars, w| { let y = t.add(vars[0], vars[1])?; weighted(t, y, w) }, 6);
check!(chk_sub, seed, tol, |r: &mut ChaCha8Rng| vec![rand_t(&[2, 3], r), rand_t(&[2, 3], r)],
    |t, vars, w| { let y = t.sub(vars[0], vars[1])?; weighted(t, y, w) }, 6);
check!(chk_mul, seed, tol, |r: &mut ChaCha8Rng| vec![rand_t(&[2, 3], r), rand_t(&[2, 3], r)],
    |t, vars, w| { let y = t.mul(vars[0], vars[1])?; weighted(t, y, w) }, 6);
check!(chk_mul_channel, seed, tol,
    |r: &mut ChaCha8Rng| vec![rand_t(&[2, 3, 4, 4], r), rand_t(&[2, 3], r)],
    |t, vars, w| { let y = t.mul_channel(vars[0], vars[1])?; weighted(t, y, w) }, 96);
check!(chk_mul_spatial, seed, tol,
    |r: &mut ChaCha8Rng| vec![rand_t(&[2, 3, 4, 4], r), rand_t(&[2, 1, 4, 4], r)],
    |t, vars, w| { let y = t.mul_spatial(vars[0], vars[1])?; weighted(t, y, w) }, 96);
check!(chk_add_bias, seed, tol,
    |r: &mut ChaCha8Rng| vec![rand_t(&[2, 3, 5], r), rand_t(&[5], r)],
    |t, vars, w| { let y = t.add_bias(vars[0], vars[1])?; weighted(t, y, w) }, 30);
check!(chk_add_channel, seed, tol,
    |r: &mut ChaCha8Rng| vec![rand_t(&[2, 3, 4, 4], r), rand_t(&[3], r)],
    |t, vars, w| { let y = t.add_channel(vars[0], vars[1])?; weighted(t, y, w) }, 96);
check!(chk_scale, seed, tol, |r: &mut ChaCha8Rng| vec![rand_t(&[2, 4], r)],
    |t, vars, w| { let y = t.scale(vars[0], -1.7)?; let y = t.add_const(y, 0.37)?; weighted(t, y, w) }, 8);
check!(chk_sigmoid, seed, tol, |r: &mut ChaCha8Rng| vec![rand_t(&[2, 5], r)],
    |t, vars, w| { let y = t.sigmoid(vars[0])?; weighted(t, y, w) }, 10);
check!(chk_relu, seed, tol, |r: &mut ChaCha8Rng| vec![rand_t_off_zero(&[2, 5], r)],
    |t, vars, w| { let y = t.relu(vars[0])?; weighted(t, y, w) }, 10);
check!(chk_softplus, seed, tol, |r: &mut ChaCha8Rng| vec![rand_t(&[2, 5], r)],
    |t, vars, w| { let y = t.softplus(vars[0])?; weighted(t, y, w) }, 10);
check!(chk_matmul_2d, seed, tol,
    |r: &mut ChaCha8Rng| vec![rand_t(&[4, 5], r), rand_t(&[5, 3], r)],
    |t, vars, w| { let y = t.matmul(vars[0], vars[1])?; weighted(t, y, w) }, 12);
check!(chk_matmul_batched, seed, tol,
    |r: &mut ChaCha8Rng| vec![rand_t(&[2, 3, 4], r), rand_t(&[2, 4, 2], r)],
    |t, vars, w| { let y = t.matmul(vars[0], vars[1])?; weighted(t, y, w) }, 12);
check!(chk_matmul_shared, seed, tol,
    |r: &mut ChaCha8Rng| vec![rand_t(&[2, 3, 4], r), rand_t(&[4, 2], r)],
    |t, vars, w| { let y = t.matmul(vars[0], vars[1])?; weighted(t, y, w) }, 12);
check!(chk_conv2d_k1, seed, tol,
    |r: &mut ChaCha8Rng| vec![rand_t(&[1, 2, 4, 4], r), rand_t(&[3, 2, 1, 1], r)],
    |t, vars, w| { let y = t.conv2d(vars[0], vars[1], 1, 0)?; weighted(t, y, w) }, 48);
check!(chk_conv2d_k3, seed, tol,
    |r: &mut ChaCha8Rng| vec![rand_t(&[2, 3, 8, 8], r), rand_t(&[2, 3, 3, 3], r)],
    |t, vars, w| { let y = t.conv2d(vars[0], vars[1], 1, 1)?; weighted(t, y, w) }, 256);
check!(chk_conv2d_k7, seed, tol,
    |r: &mut ChaCha8Rng| vec![rand_t(&[1, 2, 8, 8], r), rand_t(&[1, 2, 7, 7], r)],
    |t, vars, w| { let y = t.conv2d(vars[0], vars[1], 1, 3)?; weighted(t, y, w) }, 64);
check!(chk_conv2d_strided, seed, tol,
    |r: &mut ChaCha8Rng| vec![rand_t(&[1, 2, 7, 7], r), rand_t(&[2, 2, 3, 3], r)],
    |t, vars, w| { let y = t.conv2d(vars[0], vars[1], 2, 1)?; weighted(t, y, w) }, 32);
check!(chk_pool_global_avg, seed, tol, |r: &mut ChaCha8Rng| vec![rand_t(&[2, 3, 4, 4], r)],
    |t, vars, w| { let y = t.pool(vars[0], PoolKind::GlobalAvg)?; weighted(t, y, w) }, 6);
check!(chk_pool_global_max, seed, tol, |r: &mut ChaCha8Rng| vec![rand_t_off_zero(&[2, 3, 4, 4], r)],
    |t, vars, w| { let y = t.pool(vars[0], PoolKind::GlobalMax)?; weighted(t, y, w) }, 6);
check!(chk_pool_channel_avg, seed, tol, |r: &mut ChaCha8Rng| vec![rand_t(&[2, 3, 3, 3], r)],
    |t, vars, w| { let y = t.pool(vars[0], PoolKind::ChannelAvg)?; weighted(t, y, w) }, 18);
check!(chk_pool_channel_max, seed, tol, |r: &mut ChaCha8Rng| vec![rand_t_off_zero(&[2, 3, 3, 3], r)],
    |t, vars, w| { let y = t.pool(vars[0], PoolKind::ChannelMax)?; weighted(t, y, w) }, 18);
check!(chk_pool_window_avg, seed, tol, |r: &mut ChaCha8Rng| vec![rand_t(&[1, 2, 6, 6], r)],
    |t, vars, w| { let y = t.pool(vars[0], PoolKind::WindowAvg { k: 2, stride: 2 })?; weighted(t, y, w) }, 18);
check!(chk_sum_axes, seed, tol, |r: &mut ChaCha8Rng| vec![rand_t(&[2, 3, 4], r)],
    |t, vars, w| { let y = t.sum_axes(vars[0], &[0, 2])?; weighted(t, y, w) }, 3);
check!(chk_mean_axes, seed, tol, |r: &mut ChaCha8Rng| vec![rand_t(&[2, 3, 4], r)],
    |t, vars, w| { let y = t.mean_axes(vars[0], &[1])?; weighted(t, y, w) }, 8);
check!(chk_concat, seed, tol,
    |r: &mut ChaCha8Rng| vec![rand_t(&[2, 2, 3], r), rand_t(&[2, 2, 3], r)],
    |t, vars, w| { let y = t.concat(&[vars[0], vars[1]], 1)?; weighted(t, y, w) }, 24);
check!(chk_reshape, seed, tol, |r: &mut ChaCha8Rng| vec![rand_t(&[2, 6], r)],
    |t, vars, w| { let y = t.reshape(vars[0], vec![3, 4])?; let y = t.sigmoid(y)?; weighted(t, y, w) }, 12);
check!(chk_permute, seed, tol, |r: &mut ChaCha8Rng| vec![rand_t(&[2, 3, 4], r)],
    |t, vars, w| { let y = t.permute(vars[0], &[2, 0, 1])?; let y = t.sigmoid(y)?; weighted(t, y, w) }, 24);
check!(chk_slice, seed, tol, |r: &mut ChaCha8Rng| vec![rand_t(&[3, 5], r)],
    |t, vars, w| { let y = t.slice(vars[0], 1, 1, 4)?; let y = t.sigmoid(y)?; weighted(t, y, w) }, 9);
check!(chk_softmax, seed, tol, |r: &mut ChaCha8Rng| vec![rand_t(&[3, 5], r)],
    |t, vars, w| { let y = t.softmax(vars[0])?; weighted(t, y, w) }, 15);
check!(chk_bce, seed, tol,
    |r: &mut ChaCha8Rng| {
        let logits = rand_t(&[2, 4], r);
        let targets = Tensor::new(vec![2, 4], (0..8).map(|_| r.gen_range(0.05..0.95)).collect()).unwrap();
        vec![logits, targets]
    },
    |t, vars, w| { let y = t.bce_with_logits(vars[0], vars[1])?; weighted(t, y, w) }, 8);
check!(chk_crop_resize, seed, tol,
    |r: &mut ChaCha8Rng| {
        let input = rand_t(&[1, 2, 6, 6], r);
        let boxes = Tensor::new(
            vec![1, 4],
            vec![r.gen_range(0.05..0.35), r.gen_range(0.05..0.35), r.gen_range(0.55..0.93), r.gen_range(0.55..0.93)],
        )
        .unwrap();
        vec![input, boxes]
    },
    |t, vars, w| { let y = t.crop_resize(vars[0], vars[1], 4, 4)?; weighted(t, y, w) }, 32);

const OP_CHECKS: &[(&str, CheckFn)] = &[
    ("add", chk_add),
    ("sub", chk_sub),
    ("mul", chk_mul),
    ("mul_channel", chk_mul_channel),
    ("mul_spatial", chk_mul_spatial),
    ("add_bias", chk_add_bias),
    ("add_channel", chk_add_channel),
    ("scale/add_const", chk_scale),
    ("sigmoid", chk_sigmoid),
    ("relu", chk_relu),
    ("softplus", chk_softplus),
    ("matmul 2d", chk_matmul_2d),
    ("matmul batched", chk_matmul_batched),
    ("matmul shared-b", chk_matmul_shared),
    ("conv2d k=1", chk_conv2d_k1),
    ("conv2d k=3", chk_conv2d_k3),
    ("conv2d k=7", chk_conv2d_k7),
    ("conv2d k=3 s=2", chk_conv2d_strided),
    ("pool global_avg", chk_pool_global_avg),
    ("pool global_max", chk_pool_global_max),
    ("pool channel_avg", chk_pool_channel_avg),
    ("pool channel_max", chk_pool_channel_max),
    ("pool window_avg", chk_pool_window_avg),
    ("sum", chk_sum_axes),
    ("mean", chk_mean_axes),
    ("concat", chk_concat),
    ("reshape", chk_reshape),
    ("permute", chk_permute),
    ("slice", chk_slice),
    ("softmax", chk_softmax),
    ("bce_with_logits", chk_bce),
    ("crop_resize", chk_crop_resize),
];

/// Gradient-check every engine op across the given seeds.
pub fn ops_suite(seeds: &[u64], tol: f64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for (name, f) in OP_CHECKS {
        let mut worst: Option<GradCheckReport> = None;
        for &seed in seeds {
            let report = f(seed, tol)?;
            let replace = worst.as_ref().map(|w| report.worst() > w.worst()).unwrap_or(true);
            if replace {
                worst = Some(report);
            }
        }
        out.push(CheckOutcome::from_report(name, &worst.unwrap()));
    }
    Ok(out)
}

/// End-to-end gradient check of the MXA block on a 1×4×8×8 map (r = 2),
/// covering the map, the ROI predictor, and the CBAM parameters.
pub fn mxa_suite(seeds: &[u64], tol: f64) -> Result<Vec<CheckOutcome>> {
    let mut worst: Option<GradCheckReport> = None;
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = vec![
            rand_t(&[1, 4, 8, 8], &mut rng),
            rand_t(&[4, 4, 3, 3], &mut rng),
            rand_t(&[4, 4, 3, 3], &mut rng),
            rand_t(&[4, 4], &mut rng),
            rand_t(&[4], &mut rng),
            rand_t(&[4, 2], &mut rng),
            rand_t(&[2, 4], &mut rng),
            rand_t(&[1, 2, 7, 7], &mut rng),
        ];
        let wv: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let report = gradient_check(
            move |t, vars| {
                let roi = RoiPredictorVars { conv1: vars[1], conv2: vars[2], fc_w: vars[3], fc_b: vars[4] };
                let cbam = CbamVars { w1: vars[5], w2: vars[6], spatial: vars[7] };
                let res = mxa_forward(t, vars[0], &roi, &cbam)?;
                weighted(t, res.out, &wv)
            },
            &inputs,
            FD_STEP,
            tol,
        )?;
        let replace = worst.as_ref().map(|w| report.worst() > w.worst()).unwrap_or(true);
        if replace {
            worst = Some(report);
        }
    }
    Ok(vec![CheckOutcome::from_report("mxa_forward", &worst.unwrap())])
}

/// Finite-difference check of the full toy-model BCE loss against the
/// analytic gradients of every parameter.
pub fn model_suite(seeds: &[u64], tol: f64) -> Result<Vec<CheckOutcome>> {
    let mut outcome = CheckOutcome {
        name: "model loss".to_string(),
        worst: 0.0,
        tol,
        pass: true,
        detail: None,
    };
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Model::build(ModelConfig::toy_8x8(), seed)?;
        let s = model.cfg.image_size;
        let images = Tensor::new(
            vec![1, 1, s, s],
            (0..s * s).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )?;
        let target_vals: Vec<f64> =
            (0..model.cfg.num_labels).map(|_| f64::from(rng.gen_bool(0.5))).collect();

        let loss_of = |m: &Model| -> Result<f64> {
            let t = Tape::new();
            let res = m.forward(&t, &images, ForwardOpts::default())?;
            let y = t.constant(vec![1, m.cfg.num_labels], target_vals.clone())?;
            let l = bcewl(&t, res.logits, y)?;
            Ok(t.value_vec(l)[0])
        };

        // analytic gradients
        let t = Tape::new();
        let res = model.forward(&t, &images, ForwardOpts { train: true, ..Default::default() })?;
        let y = t.constant(vec![1, model.cfg.num_labels], target_vals.clone())?;
        let l = bcewl(&t, res.logits, y)?;
        t.backward(l)?;
        let analytic: Vec<(String, Vec<f64>)> = res
            .param_vars
            .iter()
            .map(|(name, var)| (name.clone(), t.grad_vec(*var)))
            .collect();

        for (name, grads) in &analytic {
            for e in 0..grads.len() {
                let orig = model.params.get(name)?.values()[e];
                model.params.get_mut(name)?.values_mut()[e] = orig + FD_STEP;
                let lp = loss_of(&model)?;
                model.params.get_mut(name)?.values_mut()[e] = orig - FD_STEP;
                let lm = loss_of(&model)?;
                model.params.get_mut(name)?.values_mut()[e] = orig;
                let cd = (lp - lm) / (2.0 * FD_STEP);
                let an = grads[e];
                let rel = (an - cd).abs() / 1.0_f64.max(an.abs()).max(cd.abs());
                if rel > outcome.worst {
                    outcome.worst = rel;
                    outcome.detail = Some(format!(
                        "{name}[{e}]: analytic {an:.6e} vs numeric {cd:.6e} (seed {seed})"
                    ));
                }
            }
        }
    }
    outcome.pass = outcome.worst <= tol;
    if outcome.pass {
        outcome.detail = None;
    }
    Ok(vec![outcome])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ops_suite_passes_on_two_seeds() {
        let out = ops_suite(&[1, 2], 1e-4).unwrap();
        assert_eq!(out.len(), OP_CHECKS.len());
        for o in &out {
            assert!(o.pass, "{}: worst {} {:?}", o.name, o.worst, o.detail);
        }
    }

    #[test]
    fn mxa_suite_passes_on_one_seed() {
        let out = mxa_suite(&[3], 1e-4).unwrap();
        assert!(out[0].pass, "worst {} {:?}", out[0].worst, out[0].detail);
    }

    #[test]
    fn model_suite_passes_on_one_seed() {
        let out = model_suite(&[4], 1e-3).unwrap();
        assert!(out[0].pass, "worst {} {:?}", out[0].worst, out[0].detail);
    }
}
