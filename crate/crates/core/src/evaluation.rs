//! Classification metrics: confusion matrix, accuracy, per-class and macro
//! precision/recall/F1, ROC curves and AUC.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[i][j]`: samples of true class `i` predicted as class `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|k| self.counts[k][k]).sum()
    }

    fn row_sum(&self, k: usize) -> u64 {
        self.counts[k].iter().sum()
    }

    fn col_sum(&self, k: usize) -> u64 {
        self.counts.iter().map(|row| row[k]).sum()
    }
}

pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch {
            what: "predictions",
            expected: y_true.len(),
            got: y_pred.len(),
        });
    }
    let mut counts = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= n_classes || p >= n_classes {
            return Err(Error::InvalidInput(format!(
                "label pair ({t}, {p}) out of range for {n_classes} classes"
            )));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// No sample was predicted as this class; precision reported as 0.
    pub precision_undefined: bool,
    /// No sample of this class was present; recall reported as 0.
    pub recall_undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn metrics_from_confusion(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 || cm.n_classes() == 0 {
        return Err(Error::InvalidInput("confusion matrix holds no samples".into()));
    }
    let per_class: Vec<ClassMetrics> = (0..cm.n_classes())
        .map(|k| {
            let tp = cm.counts[k][k];
            let support = cm.row_sum(k);
            let (precision, precision_undefined) = ratio(tp, cm.col_sum(k));
            let (recall, recall_undefined) = ratio(tp, support);
            ClassMetrics {
                precision,
                recall,
                f1: f1_score(precision, recall),
                support,
                precision_undefined,
                recall_undefined,
            }
        })
        .collect();
    let k = per_class.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k;
    Ok(MetricsReport {
        accuracy: cm.trace() as f64 / total as f64,
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        per_class,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Score cutoff: samples with `score >= threshold` are called positive.
    /// The first point uses `+inf`.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

fn count_classes(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            what: "labels",
            expected: scores.len(),
            got: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("scores contain NaN".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidInput(
            "ROC needs both positive and negative samples".into(),
        ));
    }
    Ok((pos, neg))
}

/// ROC curve over the distinct scores in descending order; tied scores share
/// one threshold. AUC by the trapezoidal rule.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    let (pos, neg) = count_classes(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let prev = points.last().expect("anchored at origin");
        let (fpr, tpr) = (fp as f64 / neg as f64, tp as f64 / pos as f64);
        auc += (fpr - prev.fpr) * (tpr + prev.tpr) / 2.0;
        points.push(RocPoint { threshold, fpr, tpr });
    }
    Ok(RocCurve { points, auc })
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Brute force over all pairs.
pub fn auc_mann_whitney(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = count_classes(scores, labels)?;
    let mut wins = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (pos as f64 * neg as f64))
}

/// One-vs-rest ROC curve per class from per-sample class probabilities.
/// Classes absent from (or filling) `labels` get `None`.
pub fn one_vs_rest_roc(
    probabilities: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
) -> Result<Vec<Option<RocCurve>>> {
    if probabilities.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            what: "labels",
            expected: probabilities.len(),
            got: labels.len(),
        });
    }
    (0..n_classes)
        .map(|k| {
            let scores: Vec<f64> = probabilities.iter().map(|p| p[k]).collect();
            let is_k: Vec<bool> = labels.iter().map(|&l| l == k).collect();
            if is_k.iter().all(|&b| b) || !is_k.iter().any(|&b| b) {
                return Ok(None);
            }
            roc_curve(&scores, &is_k).map(Some)
        })
        .collect()
}

/// Mean AUC over the classes whose one-vs-rest curve is defined.
pub fn macro_auc(curves: &[Option<RocCurve>]) -> Option<f64> {
    let defined: Vec<f64> = curves.iter().flatten().map(|c| c.auc).collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}
