//! Imbalance-aware classification metrics.
//!
//! Multi-class versions are one-vs-rest per class, then macro-averaged. A 0/0
//! precision or recall is reported as 0.

use crate::error::{Error, Result};

/// Confusion matrix with `matrix[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    matrix: Vec<Vec<usize>>,
}

impl ConfusionCounts {
    pub fn from_predictions(labels: &[usize], predictions: &[usize], num_classes: usize) -> Result<Self> {
        if labels.len() != predictions.len() {
            return Err(Error::Dimension(format!("{} labels for {} predictions", labels.len(), predictions.len())));
        }
        let mut matrix = vec![vec![0usize; num_classes]; num_classes];
        for (&y, &p) in labels.iter().zip(predictions) {
            if y >= num_classes || p >= num_classes {
                return Err(Error::Label { label: y.max(p) as i64, classes: num_classes });
            }
            matrix[y][p] += 1;
        }
        Ok(Self { matrix })
    }

    /// Binary view from t_p, N_p, t_n, N_n with class 1 positive.
    pub fn binary(tp: usize, n_pos: usize, tn: usize, n_neg: usize) -> Self {
        assert!(tp <= n_pos && tn <= n_neg);
        Self { matrix: vec![vec![tn, n_neg - tn], vec![n_pos - tp, tp]] }
    }

    pub fn num_classes(&self) -> usize {
        self.matrix.len()
    }

    pub fn total(&self) -> usize {
        self.matrix.iter().flatten().sum()
    }

    pub fn true_positives(&self, k: usize) -> usize {
        self.matrix[k][k]
    }

    pub fn false_negatives(&self, k: usize) -> usize {
        self.support(k) - self.matrix[k][k]
    }

    pub fn false_positives(&self, k: usize) -> usize {
        (0..self.num_classes()).map(|t| self.matrix[t][k]).sum::<usize>() - self.matrix[k][k]
    }

    pub fn true_negatives(&self, k: usize) -> usize {
        self.total() - self.support(k) - self.false_positives(k)
    }

    /// N_p for class k.
    pub fn support(&self, k: usize) -> usize {
        self.matrix[k].iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let hits: usize = (0..self.num_classes()).map(|k| self.matrix[k][k]).sum();
        ratio(hits, self.total())
    }

    pub fn recalls(&self) -> Vec<f64> {
        (0..self.num_classes()).map(|k| ratio(self.true_positives(k), self.support(k))).collect()
    }

    fn specificity(&self, k: usize) -> f64 {
        ratio(self.true_negatives(k), self.total() - self.support(k))
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Balanced classification accuracy 0.5·t_p/N_p + 0.5·t_n/N_n, macro over classes.
pub fn bca(counts: &ConfusionCounts) -> Result<f64> {
    let total = counts.total();
    let mut per_class = Vec::with_capacity(counts.num_classes());
    for k in 0..counts.num_classes() {
        let n_pos = counts.support(k);
        let n_neg = total - n_pos;
        if n_pos == 0 || n_neg == 0 {
            return Err(Error::UndefinedMetric(format!("class {k} has N_p = {n_pos}, N_n = {n_neg}")));
        }
        per_class.push(0.5 * counts.true_positives(k) as f64 / n_pos as f64 + 0.5 * counts.true_negatives(k) as f64 / n_neg as f64);
    }
    Ok(mean(&per_class))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionRecallF1 {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

pub fn precision_recall_f1(counts: &ConfusionCounts) -> PrecisionRecallF1 {
    let c = counts.num_classes();
    let precision: Vec<f64> =
        (0..c).map(|k| ratio(counts.true_positives(k), counts.true_positives(k) + counts.false_positives(k))).collect();
    let recall = counts.recalls();
    let f1: Vec<f64> = precision
        .iter()
        .zip(&recall)
        .map(|(p, r)| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
        .collect();
    PrecisionRecallF1 {
        macro_precision: mean(&precision),
        macro_recall: mean(&recall),
        macro_f1: mean(&f1),
        precision,
        recall,
        f1,
    }
}

/// Geometric mean of the per-class recalls.
pub fn g_mean(counts: &ConfusionCounts) -> f64 {
    let r = counts.recalls();
    if r.contains(&0.0) {
        return 0.0;
    }
    (r.iter().map(|v| v.ln()).sum::<f64>() / r.len() as f64).exp()
}

/// Index of balanced accuracy, (1 + α·(TPR − TNR))·TPR·TNR.
///
/// With two classes class 1 is the positive class. With more, the one-vs-rest
/// values are macro-averaged.
pub fn iba(counts: &ConfusionCounts, alpha: f64) -> f64 {
    let one = |tpr: f64, tnr: f64| (1.0 + alpha * (tpr - tnr)) * tpr * tnr;
    let r = counts.recalls();
    if counts.num_classes() == 2 {
        return one(r[1], r[0]);
    }
    let vals: Vec<f64> = (0..counts.num_classes()).map(|k| one(r[k], counts.specificity(k))).collect();
    mean(&vals)
}

pub const DEFAULT_IBA_ALPHA: f64 = 0.1;

/// Population standard deviation, accumulated relative to the first value.
pub fn per_class_stddev(values: &[f64]) -> f64 {
    let Some(&first) = values.first() else {
        return 0.0;
    };
    let n = values.len() as f64;
    let shift = values.iter().map(|v| v - first).sum::<f64>() / n;
    (values.iter().map(|v| (v - first - shift).powi(2)).sum::<f64>() / n).sqrt()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (ranks(a), ranks(b));
    let (ma, mb) = (mean(&ra), mean(&rb));
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}
