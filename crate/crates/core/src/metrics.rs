//! Confusion matrix, per-class precision/recall/F1, accuracy and
//! one-vs-rest precision-recall curves.
//!
//! Zero-division conventions: an empty row or column yields 0 recall or
//! precision; an empty prediction set has precision 1.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CLASSES: usize = 3;

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix3 {
    pub counts: [[u64; CLASSES]; CLASSES],
}

impl ConfusionMatrix3 {
    pub fn from_rows(counts: [[u64; CLASSES]; CLASSES]) -> Self {
        Self { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..CLASSES).map(|k| self.counts[k][k]).sum()
    }

    pub fn row_sum(&self, k: usize) -> u64 {
        self.counts[k].iter().sum()
    }

    pub fn column_sum(&self, k: usize) -> u64 {
        self.counts.iter().map(|row| row[k]).sum()
    }

    /// Parses three comma-separated rows of counts (blank lines and `#`
    /// comments ignored).
    pub fn parse_csv(text: &str) -> Result<Self> {
        let rows: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect();
        if rows.len() != CLASSES {
            return Err(Error::Parse(format!(
                "confusion matrix needs 3 rows, found {}",
                rows.len()
            )));
        }
        let mut counts = [[0u64; CLASSES]; CLASSES];
        for (i, row) in rows.iter().enumerate() {
            let fields: Vec<&str> = row.split(',').map(str::trim).collect();
            if fields.len() != CLASSES {
                return Err(Error::Parse(format!("confusion row {i} needs 3 counts")));
            }
            for (j, f) in fields.iter().enumerate() {
                counts[i][j] = f
                    .parse()
                    .map_err(|e| Error::Parse(format!("confusion row {i}, column {j}: {e}")))?;
            }
        }
        Ok(Self { counts })
    }
}

fn check_label(label: usize) -> Result<()> {
    if label >= CLASSES {
        return Err(Error::Label(format!("class {label} outside 0..=2")));
    }
    Ok(())
}

pub fn confusion(true_labels: &[usize], predicted_labels: &[usize]) -> Result<ConfusionMatrix3> {
    if true_labels.len() != predicted_labels.len() {
        return Err(Error::Dimension(format!(
            "{} true labels vs {} predictions",
            true_labels.len(),
            predicted_labels.len()
        )));
    }
    let mut cm = ConfusionMatrix3::default();
    for (&t, &p) in true_labels.iter().zip(predicted_labels) {
        check_label(t)?;
        check_label(p)?;
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check_nonempty(cm: &ConfusionMatrix3) -> Result<()> {
    if cm.total() == 0 {
        return Err(Error::Degenerate("confusion matrix is empty".into()));
    }
    Ok(())
}

pub fn class_metrics(cm: &ConfusionMatrix3, k: usize) -> Result<ClassMetrics> {
    check_label(k)?;
    check_nonempty(cm)?;
    let tp = cm.counts[k][k];
    let precision = ratio(tp, cm.column_sum(k));
    let recall = ratio(tp, cm.row_sum(k));
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(ClassMetrics {
        precision,
        recall,
        f1,
    })
}

pub fn accuracy(cm: &ConfusionMatrix3) -> Result<f64> {
    check_nonempty(cm)?;
    Ok(cm.trace() as f64 / cm.total() as f64)
}

/// Micro-averaged recall: pooled true positives over pooled positives.
pub fn micro_recall(cm: &ConfusionMatrix3) -> Result<f64> {
    check_nonempty(cm)?;
    let tp: u64 = (0..CLASSES).map(|k| cm.counts[k][k]).sum();
    let pos: u64 = (0..CLASSES).map(|k| cm.row_sum(k)).sum();
    Ok(ratio(tp, pos))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

/// One-vs-rest precision/recall sweep for class `k`. Thresholds are the
/// distinct values of `scores[_][k]` in descending order; at each threshold
/// a sample counts as predicted positive iff its score is `>=` the
/// threshold. Recall is non-decreasing along the output and the last point
/// has recall 1.
pub fn pr_curve(
    scores: &[[f64; CLASSES]],
    true_labels: &[usize],
    k: usize,
) -> Result<Vec<PrPoint>> {
    check_label(k)?;
    if scores.len() != true_labels.len() {
        return Err(Error::Dimension(format!(
            "{} score rows vs {} labels",
            scores.len(),
            true_labels.len()
        )));
    }
    for (i, row) in scores.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dimension(format!(
                "score row {i} sums to {sum}, expected 1"
            )));
        }
    }
    for &t in true_labels {
        check_label(t)?;
    }
    let positives = true_labels.iter().filter(|&&t| t == k).count();
    if positives == 0 {
        return Err(Error::UndefinedRecall(k));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b][k].total_cmp(&scores[a][k]));
    let mut points = Vec::new();
    let (mut tp, mut predicted) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]][k];
        while i < order.len() && scores[order[i]][k] == threshold {
            predicted += 1;
            if true_labels[order[i]] == k {
                tp += 1;
            }
            i += 1;
        }
        let precision = if predicted == 0 {
            1.0
        } else {
            tp as f64 / predicted as f64
        };
        points.push(PrPoint {
            threshold,
            recall: tp as f64 / positives as f64,
            precision,
        });
    }
    Ok(points)
}

pub fn write_pr_csv<W: Write>(points: &[PrPoint], mut out: W) -> Result<()> {
    writeln!(out, "threshold,recall,precision")?;
    for p in points {
        writeln!(
            out,
            "{:.12e},{:.12e},{:.12e}",
            p.threshold, p.recall, p.precision
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Everything derivable from one confusion matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix3,
}

impl MetricsReport {
    pub fn from_confusion(cm: &ConfusionMatrix3) -> Result<Self> {
        Ok(Self {
            accuracy: accuracy(cm)?,
            per_class: (0..CLASSES)
                .map(|k| class_metrics(cm, k))
                .collect::<Result<_>>()?,
            confusion: *cm,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference() -> ConfusionMatrix3 {
        ConfusionMatrix3::from_rows([[3890, 131, 0], [362, 6768, 4], [0, 2, 3701]])
    }

    #[test]
    fn perfect_balanced_predictions() {
        let labels = [0, 0, 0, 1, 1, 1, 2, 2, 2];
        let cm = confusion(&labels, &labels).unwrap();
        assert_eq!(cm.counts, [[3, 0, 0], [0, 3, 0], [0, 0, 3]]);
        assert_eq!(accuracy(&cm).unwrap(), 1.0);
    }

    #[test]
    fn empty_input() {
        let cm = confusion(&[], &[]).unwrap();
        assert_eq!(cm.total(), 0);
        assert!(accuracy(&cm).is_err());
        assert!(class_metrics(&cm, 0).is_err());
    }

    #[test]
    fn label_out_of_range() {
        assert!(matches!(confusion(&[0, 3], &[0, 1]), Err(Error::Label(_))));
        assert!(confusion(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn reference_matrix_f1() {
        let cm = reference();
        let f1: Vec<f64> = (0..3).map(|k| class_metrics(&cm, k).unwrap().f1).collect();
        assert!((f1[0] - 0.9404).abs() < 5e-4, "{}", f1[0]);
        assert!((f1[1] - 0.964446).abs() < 5e-4, "{}", f1[1]);
        assert!((f1[2] - 0.999190).abs() < 5e-4, "{}", f1[2]);
    }

    #[test]
    fn reference_matrix_accuracy() {
        let cm = reference();
        assert_eq!(cm.trace(), 14359);
        assert_eq!(cm.total(), 14858);
        assert!((accuracy(&cm).unwrap() - 0.96642).abs() < 1e-5);
    }

    #[test]
    fn all_wrong_is_zero() {
        let cm = ConfusionMatrix3::from_rows([[0, 2, 1], [4, 0, 0], [1, 1, 0]]);
        assert_eq!(accuracy(&cm).unwrap(), 0.0);
        assert_eq!(class_metrics(&cm, 0).unwrap().f1, 0.0);
    }

    #[test]
    fn empty_column_precision_is_zero() {
        let cm = ConfusionMatrix3::from_rows([[5, 0, 0], [3, 0, 0], [0, 0, 2]]);
        let m = class_metrics(&cm, 1).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn parse_fixture_text() {
        let cm =
            ConfusionMatrix3::parse_csv("# counts\n3890,131,0\n362,6768,4\n0,2,3701\n").unwrap();
        assert_eq!(cm, reference());
        assert!(ConfusionMatrix3::parse_csv("1,2,3\n4,5,6\n").is_err());
    }

    #[test]
    fn pr_separable_scores() {
        let scores = [
            [0.9, 0.05, 0.05],
            [0.8, 0.1, 0.1],
            [0.1, 0.8, 0.1],
            [0.2, 0.1, 0.7],
        ];
        let labels = [0, 0, 1, 2];
        let curve = pr_curve(&scores, &labels, 0).unwrap();
        for p in curve
            .iter()
            .filter(|p| p.recall < 1.0 || p.threshold >= 0.8)
        {
            assert_eq!(p.precision, 1.0);
        }
        assert_eq!(curve.last().unwrap().recall, 1.0);
        let at_full: Vec<_> = curve.iter().filter(|p| p.recall == 1.0).collect();
        assert_eq!(at_full[0].precision, 1.0);
    }

    #[test]
    fn pr_absent_class() {
        let scores = [[0.5, 0.25, 0.25]];
        assert!(matches!(
            pr_curve(&scores, &[0], 2),
            Err(Error::UndefinedRecall(2))
        ));
        assert!(pr_curve(&[[0.5, 0.5, 0.5]], &[0], 0).is_err());
    }

    #[test]
    fn pr_random_scores_precision_is_prevalence() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let n = 20_000;
        let mut scores = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let a: f64 = rng.gen();
            let b: f64 = rng.gen::<f64>() * (1.0 - a);
            scores.push([a, b, 1.0 - a - b]);
            labels.push(if rng.gen::<f64>() < 0.25 { 1 } else { 0 });
        }
        let prevalence = labels.iter().filter(|&&l| l == 1).count() as f64 / n as f64;
        let curve = pr_curve(&scores, &labels, 1).unwrap();
        let last = curve.last().unwrap();
        assert_eq!(last.recall, 1.0);
        assert!((last.precision - prevalence).abs() < 1e-12);
        // Mid-curve precision also hovers around the prevalence.
        let mid = curve.iter().find(|p| p.recall >= 0.5).unwrap();
        assert!(
            (mid.precision - prevalence).abs() < 0.03,
            "{}",
            mid.precision
        );
    }

    proptest! {
        #[test]
        fn micro_recall_equals_accuracy(counts in proptest::array::uniform3(proptest::array::uniform3(0u64..50))) {
            let cm = ConfusionMatrix3::from_rows(counts);
            prop_assume!(cm.total() > 0);
            prop_assert!((micro_recall(&cm).unwrap() - accuracy(&cm).unwrap()).abs() < 1e-15);
        }

        #[test]
        fn metrics_invariant_under_permutation(
            pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..60),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let split = |v: &[(usize, usize)]| -> (Vec<usize>, Vec<usize>) { v.iter().copied().unzip() };
            let (t1, p1) = split(&pairs);
            let (t2, p2) = split(&shuffled);
            let a = MetricsReport::from_confusion(&confusion(&t1, &p1).unwrap()).unwrap();
            let b = MetricsReport::from_confusion(&confusion(&t2, &p2).unwrap()).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn pr_curve_shape(
            raw in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0usize..3), 1..80),
        ) {
            let scores: Vec<[f64; 3]> = raw.iter().map(|&(a, b, _)| {
                let b = b * (1.0 - a);
                [a, b, 1.0 - a - b]
            }).collect();
            let labels: Vec<usize> = raw.iter().map(|r| r.2).collect();
            for k in 0..3 {
                match pr_curve(&scores, &labels, k) {
                    Ok(curve) => {
                        prop_assert_eq!(curve.last().unwrap().recall, 1.0);
                        for w in curve.windows(2) {
                            prop_assert!(w[1].recall >= w[0].recall);
                            prop_assert!(w[1].threshold < w[0].threshold);
                        }
                        for p in &curve {
                            prop_assert!((0.0..=1.0).contains(&p.precision));
                        }
                    }
                    Err(e) => prop_assert!(matches!(e, Error::UndefinedRecall(_))),
                }
            }
        }
    }
}
