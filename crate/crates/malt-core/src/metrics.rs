//! Per-frame average precision and calibrated average precision.
//!
//! Frames are ranked per class by descending score, ties broken by frame
//! index (earlier frame first) for cross-run determinism. AP averages the
//! precision at each positive rank. Calibrated precision reweights false
//! positives by `w = negatives / positives`, so cAP equals AP exactly when a
//! class is balanced. The background class is excluded from both means.

use serde::Serialize;

use crate::error::{MaltError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetric {
    pub class: usize,
    pub ap: f64,
    pub cap: f64,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub per_class: Vec<ClassMetric>,
    /// Mean AP over action classes with at least one positive frame.
    pub mean_ap: f64,
    /// Mean calibrated AP over the same classes.
    pub mean_cap: f64,
    pub total_frames: usize,
    /// Action classes with zero positive frames, excluded from the means.
    pub skipped_classes: Vec<usize>,
}

/// Ranking order for one class: indices sorted by score descending, earlier
/// frames first on ties.
fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Average precision of one class. `None` when there are no positives.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len());
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return None;
    }
    let mut tp = 0usize;
    let mut acc = 0.0;
    for (rank, &idx) in ranking(scores).iter().enumerate() {
        if positive[idx] {
            tp += 1;
            acc += tp as f64 / (rank + 1) as f64;
        }
    }
    Some(acc / n_pos as f64)
}

/// Calibrated AP: precision at rank uses `tp / (tp + fp / w)` with
/// `w = negatives / positives`. `None` when there are no positives.
pub fn calibrated_average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len());
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return None;
    }
    let n_neg = positive.len() - n_pos;
    let w = n_neg as f64 / n_pos as f64;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut acc = 0.0;
    for &idx in &ranking(scores) {
        if positive[idx] {
            tp += 1;
            let denom = if w == 0.0 {
                tp as f64 // no negatives at all: precision is 1 at every rank
            } else {
                tp as f64 + fp as f64 / w
            };
            acc += tp as f64 / denom;
        } else {
            fp += 1;
        }
    }
    Some(acc / n_pos as f64)
}

/// Full report over pooled frames. `scores` is `T x (classes + 1)` (column 0
/// = background) and `labels` are per-frame ground truth.
pub fn metric_report(scores: &Tensor, labels: &[u16]) -> Result<MetricReport> {
    let t = scores.rows();
    if t != labels.len() {
        return Err(MaltError::Contract(format!(
            "metrics: {t} score rows but {} labels",
            labels.len()
        )));
    }
    if t == 0 {
        return Err(MaltError::Contract("metrics: no frames".into()));
    }
    let classes = scores.cols() - 1;
    if let Some(&bad) = labels.iter().find(|&&l| l as usize > classes) {
        return Err(MaltError::Data(format!(
            "metrics: label {bad} out of range for {classes} action classes"
        )));
    }

    let mut per_class = Vec::new();
    let mut skipped = Vec::new();
    let mut ap_sum = 0.0;
    let mut cap_sum = 0.0;
    for class in 1..=classes {
        let class_scores: Vec<f64> = (0..t).map(|i| scores.at(i, class)).collect();
        let positive: Vec<bool> = labels.iter().map(|&l| l as usize == class).collect();
        match (
            average_precision(&class_scores, &positive),
            calibrated_average_precision(&class_scores, &positive),
        ) {
            (Some(ap), Some(cap)) => {
                let positives = positive.iter().filter(|&&p| p).count();
                per_class.push(ClassMetric {
                    class,
                    ap,
                    cap,
                    positives,
                    negatives: t - positives,
                });
                ap_sum += ap;
                cap_sum += cap;
            }
            _ => skipped.push(class),
        }
    }
    if per_class.is_empty() {
        return Err(MaltError::Data(
            "metrics: no action class has a positive frame".into(),
        ));
    }
    let n = per_class.len() as f64;
    Ok(MetricReport {
        per_class,
        mean_ap: ap_sum / n,
        mean_cap: cap_sum / n,
        total_frames: t,
        skipped_classes: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_ranking_gives_ap_one() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let positive = [true, true, false, false];
        assert_eq!(average_precision(&scores, &positive), Some(1.0));
        assert_eq!(calibrated_average_precision(&scores, &positive), Some(1.0));
    }

    #[test]
    fn ap_hand_enumeration() {
        // labels [1,0,1,0], class-1 scores [0.9, 0.8, 0.7, 0.1]:
        // positives rank 1 and 3 -> AP = (1/1 + 2/3) / 2
        let scores = [0.9, 0.8, 0.7, 0.1];
        let positive = [true, false, true, false];
        let ap = average_precision(&scores, &positive).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12, "{ap}");
        assert!((ap - 0.8333).abs() < 1e-4);
    }

    #[test]
    fn cap_hand_evaluation() {
        // one positive ranked last of four, w = 3:
        // cPrec = 1 / (1 + 3/3) = 0.5
        let scores = [0.2, 0.9, 0.8, 0.7];
        let positive = [true, false, false, false];
        let cap = calibrated_average_precision(&scores, &positive).unwrap();
        assert_eq!(cap, 0.5);
    }

    #[test]
    fn cap_equals_ap_when_balanced() {
        let mut rng = crate::rng::Rng::new(3);
        for _ in 0..50 {
            let n = 8;
            let scores: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
            // exactly half positive -> w = 1
            let mut positive = vec![false; n];
            for p in positive.iter_mut().take(n / 2) {
                *p = true;
            }
            // random placement
            for i in (1..n).rev() {
                let j = rng.below(i as u64 + 1) as usize;
                positive.swap(i, j);
            }
            let ap = average_precision(&scores, &positive).unwrap();
            let cap = calibrated_average_precision(&scores, &positive).unwrap();
            assert!((ap - cap).abs() < 1e-15, "ap {ap} cap {cap}");
        }
    }

    #[test]
    fn one_hot_scores_give_map_one() {
        let labels: Vec<u16> = vec![0, 1, 2, 0, 1];
        let mut scores = Tensor::zeros(vec![5, 3]);
        for (i, &l) in labels.iter().enumerate() {
            scores.row_mut(i)[l as usize] = 1.0;
        }
        let report = metric_report(&scores, &labels).unwrap();
        assert_eq!(report.mean_ap, 1.0);
        assert_eq!(report.mean_cap, 1.0);
    }

    #[test]
    fn classes_without_positives_are_skipped_and_reported() {
        let labels: Vec<u16> = vec![0, 1, 1, 0];
        let mut scores = Tensor::zeros(vec![4, 4]); // classes 1..=3
        for (i, &l) in labels.iter().enumerate() {
            scores.row_mut(i)[l as usize] = 1.0;
        }
        let report = metric_report(&scores, &labels).unwrap();
        assert_eq!(report.skipped_classes, vec![2, 3]);
        assert_eq!(report.per_class.len(), 1);
    }

    #[test]
    fn ties_break_by_frame_index() {
        // equal scores: earlier frame ranked first
        let order = ranking(&[0.5, 0.5, 0.7]);
        assert_eq!(order, vec![2, 0, 1]);
    }

    #[test]
    fn report_rejects_out_of_range_labels() {
        let scores = Tensor::zeros(vec![2, 3]);
        let err = metric_report(&scores, &[0, 5]).unwrap_err();
        assert!(matches!(err, MaltError::Data(_)));
    }
}
