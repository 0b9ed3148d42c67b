//! Synthetic chest-X-ray stand-in: images with per-label planted signals
//! (bright rectangles at label-specific locations, or a global brightness
//! shift) plus Gaussian noise, with labels drawn from a co-occurrence
//! matrix and a configurable uncertain-positive fraction.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distill::{RawLabel, NUM_LABELS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum SignalKind {
    /// Bright rectangle at a fixed normalized position.
    Rect { x: f64, y: f64, w: f64, h: f64 },
    /// Global brightness shift.
    Brightness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSpec {
    pub kind: SignalKind,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub image_size: usize,
    pub background: f64,
    /// Pixel noise σ, shared by all images so the noise level itself leaks
    /// no label information.
    pub noise_sigma: f64,
    /// Fraction of positive labels emitted as −1 (uncertain).
    pub uncertain_fraction: f64,
    /// Fraction of negative labels emitted as blank cells.
    pub blank_negative_fraction: f64,
    pub signals: Vec<SignalSpec>,
    /// 14×14: diagonal entries are base marginals; entry (i,j) with i≠j is
    /// the probability that a base-positive i forces j positive.
    pub cooccurrence: Vec<Vec<f64>>,
    /// Label-irrelevant bright blobs placed outside the central signal zone
    /// (the synthetic stand-in for shoulders/hardware clutter).
    #[serde(default)]
    pub distractors: usize,
    #[serde(default)]
    pub distractor_intensity: f64,
    #[serde(default)]
    pub distractor_size: f64,
}

impl SyntheticSpec {
    /// Small faint rectangles clustered in the central region, so an
    /// adaptive crop-zoom has something to buy over fixed patch resolution.
    pub fn default_desk() -> Self {
        let rect_positions: [(f64, f64); 13] = [
            (0.28, 0.28),
            (0.39, 0.28),
            (0.50, 0.28),
            (0.61, 0.28),
            (0.28, 0.39),
            (0.50, 0.39),
            (0.61, 0.39),
            (0.28, 0.50),
            (0.39, 0.50),
            (0.61, 0.50),
            (0.28, 0.61),
            (0.39, 0.61),
            (0.50, 0.61),
        ];
        let mut signals = vec![SignalSpec { kind: SignalKind::Brightness, intensity: 0.10 }];
        for (x, y) in rect_positions {
            signals.push(SignalSpec {
                kind: SignalKind::Rect { x, y, w: 0.06, h: 0.06 },
                intensity: 0.12,
            });
        }
        let mut cooccurrence = vec![vec![0.0; NUM_LABELS]; NUM_LABELS];
        for (j, row) in cooccurrence.iter_mut().enumerate() {
            row[j] = 0.35;
        }
        SyntheticSpec {
            image_size: 64,
            background: 0.25,
            noise_sigma: 0.15,
            uncertain_fraction: 0.25,
            blank_negative_fraction: 0.30,
            signals,
            cooccurrence,
            distractors: 3,
            distractor_intensity: 0.35,
            distractor_size: 0.12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 2 {
            return Err(Error::Config("synth: image_size must be ≥ 2".into()));
        }
        if self.signals.len() != NUM_LABELS {
            return Err(Error::Config(format!(
                "synth: expected {NUM_LABELS} signal specs, got {}",
                self.signals.len()
            )));
        }
        if self.cooccurrence.len() != NUM_LABELS
            || self.cooccurrence.iter().any(|r| r.len() != NUM_LABELS)
        {
            return Err(Error::Config("synth: cooccurrence must be 14×14".into()));
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if self.cooccurrence.iter().flatten().any(|&p| !unit(p)) {
            return Err(Error::Config("synth: cooccurrence entries must lie in [0,1]".into()));
        }
        if !unit(self.uncertain_fraction) || !unit(self.blank_negative_fraction) || !unit(self.background) {
            return Err(Error::Config("synth: fractions and background must lie in [0,1]".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config("synth: noise_sigma must be ≥ 0".into()));
        }
        if self.distractors > 0
            && !(self.distractor_size > 0.0 && self.distractor_size <= 0.25 && self.distractor_intensity >= 0.0)
        {
            return Err(Error::Config("synth: distractor size must lie in (0, 0.25]".into()));
        }
        for (j, s) in self.signals.iter().enumerate() {
            if let SignalKind::Rect { x, y, w, h } = s.kind {
                if !(unit(x) && unit(y) && w > 0.0 && h > 0.0 && x + w <= 1.0 && y + h <= 1.0) {
                    return Err(Error::Config(format!("synth: signal {j} rectangle out of bounds")));
                }
            }
        }
        Ok(())
    }

    /// Exact per-label positive rate under the base-bit forcing rule:
    /// m_j = 1 − (1−d_j)·Πᵢ≠ⱼ(1 − dᵢ·c_ij).
    pub fn effective_marginals(&self) -> Vec<f64> {
        (0..NUM_LABELS)
            .map(|j| {
                let mut none = 1.0 - self.cooccurrence[j][j];
                for i in 0..NUM_LABELS {
                    if i != j {
                        none *= 1.0 - self.cooccurrence[i][i] * self.cooccurrence[i][j];
                    }
                }
                1.0 - none
            })
            .collect()
    }
}

pub struct SynthSample {
    /// Row-major S×S pixels in [0,1].
    pub image: Vec<f64>,
    pub labels: Vec<RawLabel>,
    /// The underlying binary truth before the uncertain/blank encoding.
    pub truth: Vec<bool>,
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Deterministic per (spec, seed).
pub fn synth_dataset(spec: &SyntheticSpec, n: usize, seed: u64) -> Result<Vec<SynthSample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = spec.image_size;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        // base bits, then forcing from base bits only (no cascade)
        let base: Vec<bool> = (0..NUM_LABELS).map(|j| rng.gen_bool(spec.cooccurrence[j][j])).collect();
        let mut truth = base.clone();
        for i in 0..NUM_LABELS {
            if !base[i] {
                continue;
            }
            for j in 0..NUM_LABELS {
                let p = spec.cooccurrence[i][j];
                if i != j && p > 0.0 && rng.gen_bool(p) {
                    truth[j] = true;
                }
            }
        }

        let mut image = vec![spec.background; s * s];
        for (j, sig) in spec.signals.iter().enumerate() {
            if !truth[j] {
                continue;
            }
            match sig.kind {
                SignalKind::Brightness => image.iter_mut().for_each(|p| *p += sig.intensity),
                SignalKind::Rect { x, y, w, h } => {
                    let x0 = (x * s as f64).round() as usize;
                    let y0 = (y * s as f64).round() as usize;
                    let x1 = ((x + w) * s as f64).round().min(s as f64) as usize;
                    let y1 = ((y + h) * s as f64).round().min(s as f64) as usize;
                    for yy in y0..y1 {
                        for xx in x0..x1 {
                            image[yy * s + xx] += sig.intensity;
                        }
                    }
                }
            }
        }
        // peripheral distractors: random positions kept out of [0.25,0.75]²
        for _ in 0..spec.distractors {
            let d = spec.distractor_size;
            let (mut x, mut y);
            let mut tries = 0;
            loop {
                x = rng.gen_range(0.0..(1.0 - d));
                y = rng.gen_range(0.0..(1.0 - d));
                let central =
                    x + d > 0.25 && x < 0.75 && y + d > 0.25 && y < 0.75;
                tries += 1;
                if !central || tries > 64 {
                    break;
                }
            }
            let x0 = (x * s as f64).round() as usize;
            let y0 = (y * s as f64).round() as usize;
            let x1 = ((x + d) * s as f64).round().min(s as f64) as usize;
            let y1 = ((y + d) * s as f64).round().min(s as f64) as usize;
            for yy in y0..y1 {
                for xx in x0..x1 {
                    image[yy * s + xx] += spec.distractor_intensity;
                }
            }
        }
        if spec.noise_sigma > 0.0 {
            for p in image.iter_mut() {
                *p += spec.noise_sigma * gauss(&mut rng);
            }
        }
        image.iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0));

        let labels: Vec<RawLabel> = truth
            .iter()
            .map(|&t| {
                if t {
                    if spec.uncertain_fraction > 0.0 && rng.gen_bool(spec.uncertain_fraction) {
                        RawLabel::Uncertain
                    } else {
                        RawLabel::Positive
                    }
                } else if spec.blank_negative_fraction > 0.0 && rng.gen_bool(spec.blank_negative_fraction)
                {
                    RawLabel::Blank
                } else {
                    RawLabel::Negative
                }
            })
            .collect();
        out.push(SynthSample { image, labels, truth });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_unit_rectangle_saturates_exactly() {
        let mut spec = SyntheticSpec::default_desk();
        spec.noise_sigma = 0.0;
        spec.distractors = 0;
        spec.signals[1] = SignalSpec {
            kind: SignalKind::Rect { x: 0.25, y: 0.25, w: 0.25, h: 0.25 },
            intensity: 1.0,
        };
        for row in spec.cooccurrence.iter_mut() {
            row.iter_mut().for_each(|p| *p = 0.0);
        }
        spec.cooccurrence[1][1] = 1.0;
        let samples = synth_dataset(&spec, 4, 9).unwrap();
        let s = spec.image_size;
        for sample in &samples {
            assert!(sample.truth[1]);
            let (x0, y0) = (s / 4, s / 4);
            for yy in y0..y0 + s / 4 {
                for xx in x0..x0 + s / 4 {
                    assert_eq!(sample.image[yy * s + xx], 1.0);
                }
            }
            assert_eq!(sample.image[0], spec.background);
        }
    }

    #[test]
    fn forcing_probability_one_implies_the_target_label() {
        let mut spec = SyntheticSpec::default_desk();
        spec.cooccurrence[3][7] = 1.0;
        let samples = synth_dataset(&spec, 400, 11).unwrap();
        let mut saw_forced = false;
        for sample in &samples {
            if sample.truth[3] {
                assert!(sample.truth[7], "label 3 positive without label 7");
                saw_forced = true;
            }
        }
        assert!(saw_forced);
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let spec = SyntheticSpec::default_desk();
        let a = synth_dataset(&spec, 16, 3).unwrap();
        let b = synth_dataset(&spec, 16, 3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.labels, y.labels);
        }
        let c = synth_dataset(&spec, 16, 4).unwrap();
        assert!(a.iter().zip(&c).any(|(x, y)| x.image != y.image));
    }

    #[test]
    fn positive_rates_match_the_effective_marginals() {
        let mut spec = SyntheticSpec::default_desk();
        spec.cooccurrence[2][5] = 0.5;
        let n = 2000;
        let samples = synth_dataset(&spec, n, 21).unwrap();
        let marginals = spec.effective_marginals();
        for j in 0..NUM_LABELS {
            let rate = samples.iter().filter(|s| s.truth[j]).count() as f64 / n as f64;
            assert!(
                (rate - marginals[j]).abs() < 0.05,
                "label {j}: rate {rate} vs marginal {}",
                marginals[j]
            );
        }
    }

    #[test]
    fn uncertain_fraction_emits_minus_ones() {
        let mut spec = SyntheticSpec::default_desk();
        spec.uncertain_fraction = 1.0;
        let samples = synth_dataset(&spec, 50, 5).unwrap();
        for sample in &samples {
            for (t, l) in sample.truth.iter().zip(&sample.labels) {
                if *t {
                    assert_eq!(*l, RawLabel::Uncertain);
                }
            }
        }
    }

    #[test]
    fn mean_brightness_probe_separates_the_global_label() {
        // sanity oracle: the planted signals are learnable at all
        let mut spec = SyntheticSpec::default_desk();
        spec.noise_sigma = 0.1;
        let samples = synth_dataset(&spec, 500, 77).unwrap();
        let scores: Vec<f64> =
            samples.iter().map(|s| s.image.iter().sum::<f64>() / s.image.len() as f64).collect();
        let labels: Vec<bool> = samples.iter().map(|s| s.truth[0]).collect();
        let auc = crate::train::metrics::roc_auc(&scores, &labels).unwrap().unwrap();
        assert!(auc > 0.95, "brightness probe AUC {auc}");
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let mut spec = SyntheticSpec::default_desk();
        spec.cooccurrence[0][0] = 1.5;
        assert!(spec.validate().is_err());
        let mut spec = SyntheticSpec::default_desk();
        spec.signals.pop();
        assert!(spec.validate().is_err());
        let mut spec = SyntheticSpec::default_desk();
        spec.signals[2] = SignalSpec { kind: SignalKind::Rect { x: 0.9, y: 0.1, w: 0.3, h: 0.2 }, intensity: 0.5 };
        assert!(spec.validate().is_err());
    }
}
