//! Evaluation metrics: rank-based ROC-AUC (macro, micro, per label, with
//! the undefined-label convention), 0.5-threshold accuracy, and macro F1.

use serde::Serialize;

use crate::distill::NUM_LABELS;
use crate::error::{Error, Result};

/// Mann–Whitney AUC via mid-ranks: P(score⁺ > score⁻) + ½·P(tie).
/// `None` when the label has no positives or no negatives.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "roc_auc: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("roc_auc: scores".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // mid-ranks over tie groups, 1-based
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + 1 + j + 1) as f64 / 2.0;
        for &k in &idx[i..=j] {
            if labels[k] {
                rank_sum_pos += mid;
            }
        }
        i = j + 1;
    }
    let auc = (rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos as f64 * n_neg as f64);
    Ok(Some(auc))
}

/// Confusion-matrix metrics at a probability threshold (ties predict
/// positive). F1 is 0 when precision+recall is 0.
pub fn threshold_metrics(scores: &[f64], labels: &[bool], threshold: f64) -> (f64, f64) {
    let (mut tp, mut fp, mut tn, mut fnn) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        let pred = s >= threshold;
        match (pred, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fnn += 1,
        }
    }
    let n = scores.len().max(1);
    let acc = (tp + tn) as f64 / n as f64;
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fnn > 0 { tp as f64 / (tp + fnn) as f64 } else { 0.0 };
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    (acc, f1)
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub auc_per_label: Vec<Option<f64>>,
    pub auc_macro: Option<f64>,
    pub auc_micro: Option<f64>,
    pub acc: f64,
    pub f1: f64,
    pub loss: f64,
}

/// Metrics over per-sample probability rows and binary target rows.
/// The macro AUC averages the defined labels only; the micro AUC pools all
/// (sample,label) cells.
pub fn compute_metrics(probs: &[Vec<f64>], targets: &[Vec<f64>], loss: f64) -> Result<MetricsReport> {
    if probs.len() != targets.len() {
        return Err(Error::Shape(format!(
            "metrics: {} probability rows vs {} target rows",
            probs.len(),
            targets.len()
        )));
    }
    let n = probs.len();
    if n == 0 {
        return Err(Error::Config("metrics: empty evaluation set".into()));
    }
    let labels = probs[0].len();
    if labels != NUM_LABELS {
        return Err(Error::Shape(format!("metrics: expected {NUM_LABELS} labels, got {labels}")));
    }
    let mut auc_per_label = Vec::with_capacity(labels);
    let mut acc_sum = 0.0;
    let mut f1_sum = 0.0;
    for j in 0..labels {
        let scores: Vec<f64> = (0..n).map(|i| probs[i][j]).collect();
        let truth: Vec<bool> = (0..n).map(|i| targets[i][j] >= 0.5).collect();
        auc_per_label.push(roc_auc(&scores, &truth)?);
        let (acc, f1) = threshold_metrics(&scores, &truth, 0.5);
        acc_sum += acc;
        f1_sum += f1;
    }
    let defined: Vec<f64> = auc_per_label.iter().flatten().copied().collect();
    let auc_macro = if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    };
    let pooled_scores: Vec<f64> = probs.iter().flatten().copied().collect();
    let pooled_truth: Vec<bool> = targets.iter().flatten().map(|&t| t >= 0.5).collect();
    let auc_micro = roc_auc(&pooled_scores, &pooled_truth)?;
    Ok(MetricsReport {
        auc_per_label,
        auc_macro,
        auc_micro,
        acc: acc_sum / labels as f64,
        f1: f1_sum / labels as f64,
        loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// O(n²) pair-counting oracle, independent of the rank path.
    fn auc_pairs(scores: &[f64], labels: &[bool]) -> Option<f64> {
        let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
        let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
        if pos.is_empty() || neg.is_empty() {
            return None;
        }
        let mut num = 0.0;
        for &p in &pos {
            for &q in &neg {
                if p > q {
                    num += 1.0;
                } else if p == q {
                    num += 0.5;
                }
            }
        }
        Some(num / (pos.len() as f64 * neg.len() as f64))
    }

    #[test]
    fn perfect_ranking_scores_one() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [true, true, false, false];
        assert_eq!(roc_auc(&scores, &labels).unwrap(), Some(1.0));
    }

    #[test]
    fn degenerate_label_sets_are_undefined() {
        assert_eq!(roc_auc(&[0.1, 0.9], &[true, true]).unwrap(), None);
        assert_eq!(roc_auc(&[0.1, 0.9], &[false, false]).unwrap(), None);
        assert!(roc_auc(&[0.1], &[true, false]).is_err());
    }

    #[test]
    fn rank_formula_equals_pair_counting_exactly_including_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for case in 0..200 {
            let n = rng.gen_range(2..=50);
            // draw from a small discrete grid to force heavy ties
            let levels = rng.gen_range(2..=6);
            let scores: Vec<f64> =
                (0..n).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            let fast = roc_auc(&scores, &labels).unwrap();
            let slow = auc_pairs(&scores, &labels);
            assert_eq!(fast, slow, "case {case}: {scores:?} {labels:?}");
        }
    }

    #[test]
    fn auc_is_invariant_under_strictly_increasing_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let scores: Vec<f64> = (0..40).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let labels: Vec<bool> = (0..40).map(|_| rng.gen_bool(0.4)).collect();
        let base = roc_auc(&scores, &labels).unwrap();
        let sig: Vec<f64> = scores.iter().map(|&s| crate::tensor::sigmoid(s)).collect();
        let affine: Vec<f64> = scores.iter().map(|&s| 2.0 * s + 3.0).collect();
        assert_eq!(roc_auc(&sig, &labels).unwrap(), base);
        assert_eq!(roc_auc(&affine, &labels).unwrap(), base);
    }

    #[test]
    fn exact_scores_give_perfect_threshold_metrics() {
        let scores = [1.0, 0.0, 1.0, 0.0];
        let labels = [true, false, true, false];
        let (acc, f1) = threshold_metrics(&scores, &labels, 0.5);
        assert_eq!(acc, 1.0);
        assert_eq!(f1, 1.0);
    }

    #[test]
    fn all_half_scores_predict_positive_so_accuracy_is_prevalence() {
        let scores = [0.5; 10];
        let labels = [true, true, true, false, false, false, false, false, false, false];
        let (acc, _) = threshold_metrics(&scores, &labels, 0.5);
        assert_eq!(acc, 0.3);
    }

    #[test]
    fn f1_is_zero_when_nothing_is_predicted_or_true() {
        let (_, f1) = threshold_metrics(&[0.1, 0.2], &[false, false], 0.5);
        assert_eq!(f1, 0.0);
    }

    #[test]
    fn random_scores_vs_random_labels_hover_near_half_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1000;
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let (acc, _) = threshold_metrics(&scores, &labels, 0.5);
        assert!((acc - 0.5).abs() < 0.05, "accuracy {acc}");
    }

    #[test]
    fn report_skips_undefined_labels_in_the_macro_mean() {
        let mut probs = Vec::new();
        let mut targets = Vec::new();
        for i in 0..6 {
            let mut p = vec![0.5; NUM_LABELS];
            let mut t = vec![0.0; NUM_LABELS];
            // label 0 perfectly ranked, label 1 all-positive (undefined)
            p[0] = if i < 3 { 0.9 } else { 0.1 };
            t[0] = if i < 3 { 1.0 } else { 0.0 };
            t[1] = 1.0;
            probs.push(p);
            targets.push(t);
        }
        let rep = compute_metrics(&probs, &targets, 0.25).unwrap();
        assert_eq!(rep.auc_per_label[0], Some(1.0));
        assert_eq!(rep.auc_per_label[1], None);
        assert_eq!(rep.auc_per_label[2], None); // no positives at all
        assert_eq!(rep.auc_macro, Some(1.0));
        assert!(rep.auc_micro.is_some());
        assert_eq!(rep.loss, 0.25);
    }
}
