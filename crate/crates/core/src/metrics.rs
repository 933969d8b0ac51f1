//! Confusion-matrix metrics: accuracy, precision, recall and F1, with
//! per-label values and macro/micro/weighted aggregates for multi-class runs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `matrix[i][j]` counts samples of true label `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    arity: usize,
    matrix: Vec<Vec<u64>>,
}

/// Binary view with misinformation (label 1) as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn from_matrix(matrix: Vec<Vec<u64>>) -> Result<Self> {
        let arity = matrix.len();
        if arity < 2 || matrix.iter().any(|row| row.len() != arity) {
            return Err(Error::Validation("confusion matrix must be square with arity >= 2".into()));
        }
        Ok(Self { arity, matrix })
    }

    /// Builds a 2x2 matrix from binary counts.
    pub fn from_binary(c: BinaryCounts) -> Self {
        Self {
            arity: 2,
            matrix: vec![vec![c.tn, c.fp], vec![c.fn_, c.tp]],
        }
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn matrix(&self) -> &[Vec<u64>] {
        &self.matrix
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.matrix[truth][predicted]
    }

    pub fn total(&self) -> u64 {
        self.matrix.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.arity).map(|i| self.matrix[i][i]).sum()
    }

    pub fn true_positives(&self, label: usize) -> u64 {
        self.matrix[label][label]
    }

    /// Predicted as `label` but truly another label.
    pub fn false_positives(&self, label: usize) -> u64 {
        (0..self.arity)
            .filter(|&i| i != label)
            .map(|i| self.matrix[i][label])
            .sum()
    }

    /// Truly `label` but predicted as another label.
    pub fn false_negatives(&self, label: usize) -> u64 {
        (0..self.arity)
            .filter(|&j| j != label)
            .map(|j| self.matrix[label][j])
            .sum()
    }

    pub fn support(&self, label: usize) -> u64 {
        self.matrix[label].iter().sum()
    }

    /// TP/TN/FP/FN for binary counts, positive class 1.
    pub fn binary(&self) -> Option<BinaryCounts> {
        (self.arity == 2).then(|| BinaryCounts {
            tp: self.matrix[1][1],
            tn: self.matrix[0][0],
            fp: self.matrix[0][1],
            fn_: self.matrix[1][0],
        })
    }
}

/// Tallies predicted against true labels.
pub fn confusion(predicted: &[usize], labels: &[usize], arity: usize) -> Result<ConfusionCounts> {
    if predicted.len() != labels.len() {
        return Err(Error::Dimension {
            context: "confusion",
            expected: labels.len(),
            actual: predicted.len(),
        });
    }
    if arity < 2 {
        return Err(Error::Validation(format!("arity must be at least 2, got {arity}")));
    }
    let mut matrix = vec![vec![0u64; arity]; arity];
    for (&p, &t) in predicted.iter().zip(labels) {
        if p >= arity || t >= arity {
            return Err(Error::Validation(format!(
                "label out of range for arity {arity}: truth {t}, predicted {p}"
            )));
        }
        matrix[t][p] += 1;
    }
    Ok(ConfusionCounts { arity, matrix })
}

/// A ratio that may have had a zero denominator; such cases yield 0 and set `undefined`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: f64,
    pub undefined: bool,
}

fn ratio(num: u64, den: u64) -> Ratio {
    if den == 0 {
        Ratio {
            value: 0.0,
            undefined: true,
        }
    } else {
        Ratio {
            value: num as f64 / den as f64,
            undefined: false,
        }
    }
}

/// `trace(M) / total`.
pub fn accuracy(counts: &ConfusionCounts) -> Result<f64> {
    let total = counts.total();
    if total == 0 {
        return Err(Error::Validation("accuracy of zero scored samples".into()));
    }
    Ok(counts.correct() as f64 / total as f64)
}

/// `TP / (TP + FP)` for `label`.
pub fn precision(counts: &ConfusionCounts, label: usize) -> Ratio {
    let tp = counts.true_positives(label);
    ratio(tp, tp + counts.false_positives(label))
}

/// `TP / (TP + FN)` for `label`.
pub fn recall(counts: &ConfusionCounts, label: usize) -> Ratio {
    let tp = counts.true_positives(label);
    ratio(tp, tp + counts.false_negatives(label))
}

/// Harmonic mean `2PR / (P + R)`, or 0 when `P + R = 0`.
pub fn f1(precision: f64, recall: f64) -> f64 {
    let sum = precision + recall;
    if sum == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / sum
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: usize,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

/// How the headline F1 of a report was aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Averaging {
    /// F1 of label 1 (misinformation), used for binary runs.
    PositiveClass,
    /// Unweighted mean of per-label F1, used for multi-class runs.
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub arity: usize,
    pub scored: u64,
    pub excluded: usize,
    pub accuracy: f64,
    pub per_label: Vec<LabelMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub weighted_f1: f64,
    pub positive_class_f1: Option<f64>,
    pub averaging: Averaging,
    pub headline_f1: f64,
    pub confusion: ConfusionCounts,
}

/// Per-label metrics plus aggregates. The headline F1 is positive-class F1
/// for binary counts and macro F1 otherwise.
pub fn macro_report(counts: &ConfusionCounts) -> Result<MetricReport> {
    let acc = accuracy(counts)?;
    let k = counts.arity();
    let per_label: Vec<LabelMetrics> = (0..k)
        .map(|label| {
            let p = precision(counts, label);
            let r = recall(counts, label);
            LabelMetrics {
                label,
                support: counts.support(label),
                precision: p.value,
                recall: r.value,
                f1: f1(p.value, r.value),
                precision_undefined: p.undefined,
                recall_undefined: r.undefined,
            }
        })
        .collect();
    let mean = |f: fn(&LabelMetrics) -> f64| per_label.iter().map(f).sum::<f64>() / k as f64;
    let total = counts.total() as f64;
    let weighted_f1 = per_label
        .iter()
        .map(|m| m.f1 * m.support as f64)
        .sum::<f64>()
        / total;
    // Micro-averaged P, R and F1 all equal accuracy for single-label problems.
    let micro_f1 = acc;
    let positive_class_f1 = (k == 2).then(|| per_label[1].f1);
    let macro_f1 = mean(|m| m.f1);
    let (averaging, headline_f1) = match positive_class_f1 {
        Some(v) => (Averaging::PositiveClass, v),
        None => (Averaging::Macro, macro_f1),
    };
    Ok(MetricReport {
        arity: k,
        scored: counts.total(),
        excluded: 0,
        accuracy: acc,
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1,
        micro_f1,
        weighted_f1,
        positive_class_f1,
        averaging,
        headline_f1,
        per_label,
        confusion: counts.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bin(tp: u64, tn: u64, fp: u64, fn_: u64) -> ConfusionCounts {
        ConfusionCounts::from_binary(BinaryCounts { tp, tn, fp, fn_ })
    }

    #[test]
    fn perfect_binary_confusion() {
        let c = confusion(&[0, 1, 1], &[0, 1, 1], 2).unwrap();
        assert_eq!(c.binary().unwrap(), BinaryCounts { tp: 2, tn: 1, fp: 0, fn_: 0 });
    }

    #[test]
    fn total_confusion() {
        let c = confusion(&[1, 1], &[0, 0], 2).unwrap();
        assert_eq!(c.binary().unwrap(), BinaryCounts { tp: 0, tn: 0, fp: 2, fn_: 0 });
    }

    #[test]
    fn three_class_tally() {
        let c = confusion(&[0, 1, 2, 2], &[0, 2, 2, 1], 3).unwrap();
        assert_eq!(c.matrix(), &[vec![1, 0, 0], vec![0, 0, 1], vec![0, 1, 1]]);
    }

    #[test]
    fn confusion_errors() {
        assert!(matches!(confusion(&[0], &[0, 1], 2), Err(Error::Dimension { .. })));
        assert!(confusion(&[2], &[0], 2).is_err());
        assert!(confusion(&[0], &[3], 3).is_err());
    }

    #[test]
    fn accuracy_cases() {
        assert!((accuracy(&bin(3, 5, 1, 1)).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(accuracy(&bin(4, 4, 0, 0)).unwrap(), 1.0);
        assert_eq!(accuracy(&bin(0, 0, 3, 2)).unwrap(), 0.0);
        assert!(accuracy(&bin(0, 0, 0, 0)).is_err());
    }

    #[test]
    fn precision_cases() {
        assert_eq!(precision(&bin(3, 0, 1, 0), 1).value, 0.75);
        let p = precision(&bin(0, 5, 0, 2), 1);
        assert_eq!(p, Ratio { value: 0.0, undefined: true });
        assert_eq!(precision(&bin(4, 1, 0, 3), 1).value, 1.0);
    }

    #[test]
    fn recall_cases() {
        assert!((recall(&bin(3, 0, 0, 4), 1).value - 3.0 / 7.0).abs() < 1e-15);
        assert_eq!(recall(&bin(2, 0, 5, 0), 1).value, 1.0);
        let r = recall(&bin(0, 5, 2, 0), 1);
        assert!(r.undefined && r.value == 0.0);
    }

    #[test]
    fn f1_cases() {
        assert!((f1(0.8, 0.8) - 0.8).abs() < 1e-15);
        // 2 * 0.75 * (3/7) / (0.75 + 3/7) = 6/11
        assert!((f1(0.75, 3.0 / 7.0) - 6.0 / 11.0).abs() < 1e-15);
        assert!((f1(0.75, 3.0 / 7.0) - 0.5455).abs() < 1e-4);
        assert_eq!(f1(0.0, 0.0), 0.0);
    }

    #[test]
    fn macro_report_perfect_three_class() {
        let c = confusion(&[0, 1, 2, 2], &[0, 1, 2, 2], 3).unwrap();
        let r = macro_report(&c).unwrap();
        assert_eq!(r.macro_f1, 1.0);
        assert_eq!(r.headline_f1, 1.0);
        assert_eq!(r.averaging, Averaging::Macro);
    }

    #[test]
    fn macro_report_binary_matches_positive_class_equations() {
        let c = bin(3, 5, 1, 4);
        let r = macro_report(&c).unwrap();
        let p = precision(&c, 1).value;
        let rc = recall(&c, 1).value;
        assert_eq!(r.per_label[1].precision, p);
        assert_eq!(r.per_label[1].recall, rc);
        assert_eq!(r.per_label[1].f1, f1(p, rc));
        assert_eq!(r.headline_f1, f1(p, rc));
        assert_eq!(r.averaging, Averaging::PositiveClass);
    }

    #[test]
    fn macro_report_three_class_hand_checked() {
        // M = [[1,0,0],[0,0,1],[0,1,1]]
        // label 0: P = 1, R = 1, F1 = 1
        // label 1: P = 0/1 = 0, R = 0/1 = 0, F1 = 0
        // label 2: P = 1/2, R = 1/2, F1 = 1/2
        let c = confusion(&[0, 1, 2, 2], &[0, 2, 2, 1], 3).unwrap();
        let r = macro_report(&c).unwrap();
        let f1s: Vec<f64> = r.per_label.iter().map(|m| m.f1).collect();
        assert_eq!(f1s, vec![1.0, 0.0, 0.5]);
        assert!((r.macro_f1 - 0.5).abs() < 1e-15);
        assert!((r.accuracy - 0.5).abs() < 1e-15);
        // weighted by support (1, 1, 2): (1 + 0 + 1) / 4
        assert!((r.weighted_f1 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn report_serializes_with_averaging_name() {
        let r = macro_report(&bin(1, 1, 1, 1)).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"averaging\":\"positive-class\""));
        let back: MetricReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }
    fn pairs() -> impl proptest::strategy::Strategy<Value = (usize, Vec<(usize, usize)>)> {
        use proptest::prelude::*;
        prop_oneof![Just(2usize), Just(3), Just(6)]
            .prop_flat_map(|k| (Just(k), proptest::collection::vec((0..k, 0..k), 1..50)))
    }

    proptest::proptest! {
        #[test]
        fn metrics_ignore_pair_order((k, mut pairs) in pairs(), seed: u64) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let report_of = |pairs: &[(usize, usize)]| {
                let (p, l): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
                macro_report(&confusion(&p, &l, k).unwrap()).unwrap()
            };
            let before = report_of(&pairs);
            pairs.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            proptest::prop_assert_eq!(before, report_of(&pairs));
        }

        #[test]
        fn f1_lies_between_precision_and_recall(p in 0.0f64..=1.0, r in 0.0f64..=1.0) {
            let f = f1(p, r);
            if p + r > 0.0 {
                proptest::prop_assert!(p.min(r) - 1e-12 <= f && f <= p.max(r) + 1e-12);
                proptest::prop_assert!((1.0 / f - (1.0 / p + 1.0 / r) / 2.0).abs() < 1e-9 || p == 0.0 || r == 0.0);
            } else {
                proptest::prop_assert_eq!(f, 0.0);
            }
        }

        #[test]
        fn accuracy_is_micro_recall((k, pairs) in pairs()) {
            let (p, l): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
            let counts = confusion(&p, &l, k).unwrap();
            let tp: u64 = (0..k).map(|c| counts.true_positives(c)).sum();
            let fn_: u64 = (0..k).map(|c| counts.false_negatives(c)).sum();
            let micro_recall = tp as f64 / (tp + fn_) as f64;
            proptest::prop_assert!((accuracy(&counts).unwrap() - micro_recall).abs() < 1e-15);
            proptest::prop_assert!((macro_report(&counts).unwrap().micro_f1 - micro_recall).abs() < 1e-15);
        }
    }
}
