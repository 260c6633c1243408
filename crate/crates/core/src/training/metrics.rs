//! Confusion counts, threshold metrics and ROC AUC. The positive class is 1.

use crate::error::{dim_err, input_err, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn from_predictions(predicted: &[usize], labels: &[usize]) -> Result<Self> {
        if predicted.len() != labels.len() {
            return Err(dim_err!("{} predictions for {} labels", predicted.len(), labels.len()));
        }
        let mut cm = Self::default();
        for (&p, &l) in predicted.iter().zip(labels) {
            match (p, l) {
                (1, 1) => cm.tp += 1,
                (0, 0) => cm.tn += 1,
                (1, 0) => cm.fp += 1,
                (0, 1) => cm.fn_ += 1,
                _ => return Err(input_err!("non-binary class pair ({p}, {l})")),
            }
        }
        Ok(cm)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub precision: f64,
    /// Sensitivity.
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
    pub auc: f64,
    /// Metrics whose denominator was zero; each is reported as 0.
    pub degenerate: Vec<&'static str>,
}

fn ratio(num: u64, den: u64, name: &'static str, degenerate: &mut Vec<&'static str>) -> f64 {
    if den == 0 {
        degenerate.push(name);
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Threshold metrics from counts. AUC is left at 0 and flagged.
pub fn metrics_from_confusion(cm: ConfusionMatrix) -> MetricsReport {
    let mut degenerate = Vec::new();
    let accuracy = ratio(cm.tp + cm.tn, cm.total(), "accuracy", &mut degenerate);
    let precision = ratio(cm.tp, cm.tp + cm.fp, "precision", &mut degenerate);
    let recall = ratio(cm.tp, cm.tp + cm.fn_, "recall", &mut degenerate);
    let specificity = ratio(cm.tn, cm.tn + cm.fp, "specificity", &mut degenerate);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        degenerate.push("f1");
        0.0
    };
    degenerate.push("auc");
    MetricsReport {
        confusion: cm,
        accuracy,
        precision,
        recall,
        specificity,
        f1,
        auc: 0.0,
        degenerate,
    }
}

/// Area under the ROC curve by the trapezoid rule. Thresholds sweep the
/// distinct scores from high to low; tied scores move the curve diagonally.
/// Returns `None` when either class is absent.
pub fn roc_auc(scores: &[f64], labels: &[usize]) -> Result<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(dim_err!("{} scores for {} labels", scores.len(), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(input_err!("NaN score"));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0.0, 0.0);
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let (tpr, fpr) = (tp / pos, fp / neg);
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    Ok(Some(area))
}

/// Full report from hard predictions and class-1 scores.
pub fn metrics_report(predicted: &[usize], scores: &[f64], labels: &[usize]) -> Result<MetricsReport> {
    if labels.is_empty() {
        return Err(input_err!("cannot evaluate an empty set"));
    }
    let mut report = metrics_from_confusion(ConfusionMatrix::from_predictions(predicted, labels)?);
    report.degenerate.retain(|&d| d != "auc");
    match roc_auc(scores, labels)? {
        Some(a) => report.auc = a,
        None => report.degenerate.push("auc"),
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cm(tp: u64, tn: u64, fp: u64, fn_: u64) -> ConfusionMatrix {
        ConfusionMatrix { tp, tn, fp, fn_ }
    }

    #[test]
    fn worked_fixture() {
        let r = metrics_from_confusion(cm(90, 95, 5, 10));
        assert_eq!(r.recall, 0.9);
        assert_eq!(r.specificity, 0.95);
        assert_eq!(r.accuracy, 0.925);
        assert_eq!(r.precision, 90.0 / 95.0);
        assert_eq!(format!("{:.3}", r.precision), "0.947");
        assert_eq!(format!("{:.3}", r.f1), "0.923");
        assert!((r.f1 - 180.0 / 195.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictions() {
        let labels = [0, 1, 1, 0, 1];
        let scores = [0.1, 0.9, 0.8, 0.3, 0.7];
        let r = metrics_report(&labels, &scores, &labels).unwrap();
        assert_eq!((r.accuracy, r.precision, r.recall, r.f1, r.auc), (1.0, 1.0, 1.0, 1.0, 1.0));
        assert!(r.degenerate.is_empty());
    }

    #[test]
    fn auc_references() {
        let labels = [0, 1, 0, 1, 1, 0];
        assert_eq!(roc_auc(&[0.5; 6], &labels).unwrap(), Some(0.5));
        assert_eq!(roc_auc(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6], &[1, 1, 1, 0, 0, 0]).unwrap(), Some(0.0));
        // pairwise oracle: P(score_pos > score_neg) + ½ P(tie)
        let scores = [0.3, 0.3, 0.1, 0.8, 0.3, 0.2];
        let mut wins = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                if labels[i] == 1 && labels[j] == 0 {
                    wins += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
                }
            }
        }
        assert!((roc_auc(&scores, &labels).unwrap().unwrap() - wins / 9.0).abs() < 1e-15);
        assert_eq!(roc_auc(&[0.1, 0.2], &[1, 1]).unwrap(), None);
    }

    #[test]
    fn degenerate_denominators() {
        let r = metrics_report(&[0, 0], &[0.2, 0.4], &[0, 0]).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.precision, 0.0);
        assert!(r.degenerate.contains(&"precision"));
        assert!(r.degenerate.contains(&"recall"));
        assert!(r.degenerate.contains(&"f1"));
        assert!(r.degenerate.contains(&"auc"));
        assert!(metrics_report(&[], &[], &[]).is_err());
        assert!(ConfusionMatrix::from_predictions(&[2], &[0]).is_err());
    }

    proptest! {
        #[test]
        fn count_identities(tp in 0u64..500, tn in 0u64..500, fp in 0u64..500, fn_ in 0u64..500) {
            prop_assume!(tp + tn + fp + fn_ > 0);
            let r = metrics_from_confusion(cm(tp, tn, fp, fn_));
            prop_assert_eq!(r.accuracy, (tp + tn) as f64 / (tp + tn + fp + fn_) as f64);
            if r.precision + r.recall > 0.0 {
                prop_assert_eq!(r.f1, 2.0 * r.precision * r.recall / (r.precision + r.recall));
            }
            for v in [r.accuracy, r.precision, r.recall, r.specificity, r.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn auc_matches_pairwise_oracle(pairs in prop::collection::vec((0u8..5, 0usize..2), 2..60)) {
            let scores: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let labels: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let got = roc_auc(&scores, &labels).unwrap();
            let (mut wins, mut n) = (0.0, 0.0);
            for i in 0..labels.len() {
                for j in 0..labels.len() {
                    if labels[i] == 1 && labels[j] == 0 {
                        n += 1.0;
                        wins += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
                    }
                }
            }
            match got {
                None => prop_assert_eq!(n, 0.0),
                Some(a) => {
                    prop_assert!((0.0..=1.0).contains(&a));
                    prop_assert!((a - wins / n).abs() < 1e-12);
                }
            }
        }
    }
}
