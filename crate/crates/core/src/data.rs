//! Datasets: synthetic Gaussian blobs, the minority-subsampling protocol,
//! CSV ingestion and the two-Gaussian boundary-bias experiment.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::margin_loss::{softmax_loss, ClassifierState};
use crate::numerics::{normal_pdf, simpson, DenseMatrix};
use crate::rng::{self, Stream};

/// Labelled feature matrix with cached class statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DenseMatrix,
    labels: Vec<usize>,
    num_classes: usize,
    class_counts: Vec<usize>,
    class_frequencies: Vec<f64>,
}

impl Dataset {
    pub fn new(features: DenseMatrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if features.rows() != labels.len() {
            return Err(Error::Dimension(format!("{} feature rows for {} labels", features.rows(), labels.len())));
        }
        let mut class_counts = vec![0usize; num_classes];
        for &y in &labels {
            if y >= num_classes {
                return Err(Error::Label { label: y as i64, classes: num_classes });
            }
            class_counts[y] += 1;
        }
        let total = labels.len() as f64;
        let class_frequencies = class_counts.iter().map(|&c| c as f64 / total).collect();
        Ok(Self { features, labels, num_classes, class_counts, class_frequencies })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    /// Normalised class frequencies τ_k.
    pub fn class_frequencies(&self) -> &[f64] {
        &self.class_frequencies
    }

    pub fn sample(&self, i: usize) -> (&[f64], usize) {
        (self.features.row(i), self.labels[i])
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
            labels.push(self.labels[i]);
        }
        Self::new(DenseMatrix::from_vec(indices.len(), d, data)?, labels, self.num_classes)
    }
}

/// One isotropic Gaussian class.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobSpec {
    pub mean: Vec<f64>,
    pub std: f64,
    pub count: usize,
}

/// Samples every blob in class order; class k is `specs[k]`.
pub fn gaussian_blobs(specs: &[BlobSpec], seed: u64) -> Result<Dataset> {
    gaussian_blobs_from(specs, &mut rng::stream(seed, Stream::Data))
}

/// As [`gaussian_blobs`], drawing from a caller-supplied generator.
pub fn gaussian_blobs_from<R: Rng + ?Sized>(specs: &[BlobSpec], rng: &mut R) -> Result<Dataset> {
    let d = specs.first().map_or(0, |s| s.mean.len());
    if specs.iter().any(|s| s.mean.len() != d) {
        return Err(Error::Dimension("blob means of different dimensions".into()));
    }
    if let Some(s) = specs.iter().find(|s| !(s.std > 0.0) || !s.std.is_finite()) {
        return Err(Error::Parameter(format!("blob std {} must be positive", s.std)));
    }
    let total: usize = specs.iter().map(|s| s.count).sum();
    let mut data = Vec::with_capacity(total * d);
    let mut labels = Vec::with_capacity(total);
    for (k, spec) in specs.iter().enumerate() {
        for _ in 0..spec.count {
            for &m in &spec.mean {
                let z: f64 = rng.sample(StandardNormal);
                data.push(m + spec.std * z);
            }
            labels.push(k);
        }
    }
    Dataset::new(DenseMatrix::from_vec(total, d, data)?, labels, specs.len())
}

/// Class means on a circle of `radius`, counts `round(head · decay^k)`.
pub fn long_tail_specs(classes: usize, head: usize, decay: f64, radius: f64, std: f64) -> Vec<BlobSpec> {
    (0..classes)
        .map(|k| {
            let angle = 2.0 * PI * k as f64 / classes as f64;
            BlobSpec {
                mean: vec![radius * angle.cos(), radius * angle.sin()],
                std,
                count: (head as f64 * decay.powi(k as i32)).round() as usize,
            }
        })
        .collect()
}

/// Keeps ⌈(1 − drop)·n_k⌉ uniformly chosen samples of every listed class.
pub fn imbalance_subsample(ds: &Dataset, drop_fraction: f64, classes: &[usize], seed: u64) -> Result<Dataset> {
    if !(0.0..1.0).contains(&drop_fraction) {
        return Err(Error::Parameter(format!("drop fraction {drop_fraction} outside [0, 1)")));
    }
    if let Some(&k) = classes.iter().find(|&&k| k >= ds.num_classes()) {
        return Err(Error::Label { label: k as i64, classes: ds.num_classes() });
    }
    let mut rng = rng::stream(seed, Stream::Data);
    let mut keep = vec![true; ds.len()];
    for k in 0..ds.num_classes() {
        if !classes.contains(&k) {
            continue;
        }
        let members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == k).collect();
        // the epsilon absorbs products like 0.1 · 30 = 3.0000000000000004
        let retain = (((1.0 - drop_fraction) * members.len() as f64) - 1e-9).ceil().max(0.0) as usize;
        let mut kept = vec![false; members.len()];
        for j in index::sample(&mut rng, members.len(), retain.min(members.len())) {
            kept[j] = true;
        }
        for (&i, &k) in members.iter().zip(&kept) {
            keep[i] = k;
        }
    }
    let indices: Vec<usize> = (0..ds.len()).filter(|&i| keep[i]).collect();
    ds.subset(&indices)
}

/// Writes `f0,…,f{d−1},label` with 17 significant digits per value.
pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    let mut header: Vec<String> = (0..ds.dim()).map(|i| format!("f{i}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(csv_error)?;
    for i in 0..ds.len() {
        let (x, y) = ds.sample(i);
        let mut rec: Vec<String> = x.iter().map(|v| format!("{v:.16e}")).collect();
        rec.push(y.to_string());
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset; the class count is one past the largest label.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    read_csv(path, None)
}

/// Reads a dataset whose labels must lie below `num_classes`.
pub fn load_csv_with_classes(path: &Path, num_classes: usize) -> Result<Dataset> {
    read_csv(path, Some(num_classes))
}

fn read_csv(path: &Path, num_classes: Option<usize>) -> Result<Dataset> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_path(path).map_err(csv_error)?;
    let mut records = r.records();
    let header = match records.next() {
        None => return Err(Error::EmptyDataset),
        Some(h) => h.map_err(csv_error)?,
    };
    let d = header.len().saturating_sub(1);
    let expected: Vec<String> = (0..d).map(|i| format!("f{i}")).chain(std::iter::once("label".into())).collect();
    if header.len() < 2 || header.iter().zip(&expected).any(|(a, b)| a.trim() != b) {
        return Err(Error::Parse { line: 1, message: format!("header must be {}", expected.join(",")) });
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for rec in records {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != d + 1 {
            return Err(Error::Parse { line, message: format!("expected {} fields, found {}", d + 1, rec.len()) });
        }
        for field in rec.iter().take(d) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Parse { line, message: format!("invalid number {field:?}") })?;
            if !v.is_finite() {
                return Err(Error::Parse { line, message: format!("non-finite value {field:?}") });
            }
            data.push(v);
        }
        let raw = rec[d].trim();
        let label: i64 = raw.parse().map_err(|_| Error::Parse { line, message: format!("invalid label {raw:?}") })?;
        if label < 0 || num_classes.is_some_and(|c| label as usize >= c) {
            return Err(Error::Label { label, classes: num_classes.unwrap_or(0) });
        }
        labels.push(label as usize);
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let c = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    Dataset::new(DenseMatrix::from_vec(labels.len(), d, data)?, labels, c)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse { line, message: format!("{other:?}") },
    }
}

/// Outcome of training a linear softmax boundary between two 1-D Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasReport {
    pub imbalance_ratio: f64,
    pub majority_mean: f64,
    pub minority_mean: f64,
    pub majority_count: usize,
    pub minority_count: usize,
    /// Threshold of the learned boundary.
    pub learned_threshold: f64,
    /// Equal-prior optimum: the midpoint of the means.
    pub optimal_threshold: f64,
    /// Bayes threshold under the training priors.
    pub prior_threshold: f64,
    /// Balanced-test error of the learned and optimal thresholds.
    pub learned_balanced_error: f64,
    pub optimal_balanced_error: f64,
}

impl BiasReport {
    pub fn offset(&self) -> f64 {
        self.learned_threshold - self.optimal_threshold
    }

    /// True when the learned threshold moved into the minority side, shrinking its region.
    pub fn toward_minority(&self) -> bool {
        self.offset() * (self.minority_mean - self.optimal_threshold) > 0.0
    }
}

const BIAS_MAJORITY_COUNT: usize = 2000;
const BIAS_STEPS: usize = 3000;
const BIAS_LR: f64 = 1.0;

/// Trains a bias-free two-class softmax classifier on `[x, 1]` for unit-variance
/// Gaussians at −1 (majority) and +1 (minority, `ratio` times rarer).
pub fn boundary_bias_demo(imbalance_ratio: f64, seed: u64) -> Result<BiasReport> {
    if !(imbalance_ratio >= 1.0) || !imbalance_ratio.is_finite() {
        return Err(Error::Parameter(format!("imbalance ratio {imbalance_ratio} must be ≥ 1")));
    }
    let (mu_a, mu_b) = (-1.0, 1.0);
    let n_a = BIAS_MAJORITY_COUNT;
    let n_b = ((n_a as f64 / imbalance_ratio).round() as usize).max(1);
    let blobs = gaussian_blobs(
        &[
            BlobSpec { mean: vec![mu_a], std: 1.0, count: n_a },
            BlobSpec { mean: vec![mu_b], std: 1.0, count: n_b },
        ],
        seed,
    )?;
    let xs: Vec<[f64; 2]> = (0..blobs.len()).map(|i| [blobs.features().get(i, 0), 1.0]).collect();

    let mut state = ClassifierState::new(DenseMatrix::zeros(2, 2))?;
    let n = xs.len() as f64;
    for _ in 0..BIAS_STEPS {
        let mut grad = DenseMatrix::zeros(2, 2);
        for (x, &y) in xs.iter().zip(blobs.labels()) {
            grad.add_scaled(&softmax_loss(&state, x, y)?.grad_weights, 1.0 / n);
        }
        state.weights_mut().add_scaled(&grad, -BIAS_LR);
    }
    let w = state.weights();
    let slope = w.get(1, 0) - w.get(0, 0);
    let offset = w.get(1, 1) - w.get(0, 1);
    if slope.abs() < 1e-12 {
        return Err(Error::DegenerateNorm("learned boundary has no slope".into()));
    }
    let learned = -offset / slope;
    let optimal = 0.5 * (mu_a + mu_b);
    let prior = optimal + (n_a as f64 / n_b as f64).ln() / (mu_b - mu_a);
    Ok(BiasReport {
        imbalance_ratio,
        majority_mean: mu_a,
        minority_mean: mu_b,
        majority_count: n_a,
        minority_count: n_b,
        learned_threshold: learned,
        optimal_threshold: optimal,
        prior_threshold: prior,
        learned_balanced_error: balanced_error(learned, mu_a, mu_b),
        optimal_balanced_error: balanced_error(optimal, mu_a, mu_b),
    })
}

/// ½·P_A(x > t) + ½·P_B(x < t) for unit-variance Gaussians, by Simpson quadrature.
pub fn balanced_error(threshold: f64, majority_mean: f64, minority_mean: f64) -> f64 {
    const TAIL: f64 = 12.0;
    const INTERVALS: usize = 20_000;
    let upper = (majority_mean + TAIL).max(threshold);
    let lower = (minority_mean - TAIL).min(threshold);
    let a = simpson(|x| normal_pdf(x - majority_mean), threshold, upper, INTERVALS);
    let b = simpson(|x| normal_pdf(x - minority_mean), lower, threshold, INTERVALS);
    0.5 * a + 0.5 * b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::normal_cdf;

    fn specs(counts: &[usize]) -> Vec<BlobSpec> {
        counts
            .iter()
            .enumerate()
            .map(|(k, &c)| BlobSpec { mean: vec![k as f64, -(k as f64)], std: 1.0, count: c })
            .collect()
    }

    #[test]
    fn absent_class_has_zero_frequency() {
        let ds = gaussian_blobs(&specs(&[10, 0, 5]), 1).unwrap();
        assert_eq!(ds.class_counts(), &[10, 0, 5]);
        assert_eq!(ds.class_frequencies()[1], 0.0);
        assert!((ds.class_frequencies().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(matches!(gaussian_blobs(&specs(&[0, 0]), 1), Err(Error::EmptyDataset)));
    }

    #[test]
    fn tiny_std_collapses_to_mean() {
        let ds = gaussian_blobs(&[BlobSpec { mean: vec![2.0, -3.0], std: 1e-9, count: 20 }], 2).unwrap();
        for i in 0..ds.len() {
            assert!((ds.features().get(i, 0) - 2.0).abs() < 1e-7);
            assert!((ds.features().get(i, 1) + 3.0).abs() < 1e-7);
        }
        assert!(gaussian_blobs(&[BlobSpec { mean: vec![0.0], std: 0.0, count: 1 }], 2).is_err());
    }

    #[test]
    fn sample_mean_converges() {
        // σ/√n = 0.01, so 0.05 is a 5σ bound.
        let ds = gaussian_blobs(&[BlobSpec { mean: vec![3.0, -1.0], std: 1.0, count: 10_000 }], 3).unwrap();
        for (j, want) in [3.0, -1.0].iter().enumerate() {
            let m = (0..ds.len()).map(|i| ds.features().get(i, j)).sum::<f64>() / ds.len() as f64;
            assert!((m - want).abs() < 0.05);
        }
    }

    #[test]
    fn generation_is_seeded() {
        assert_eq!(gaussian_blobs(&specs(&[5, 5]), 9).unwrap(), gaussian_blobs(&specs(&[5, 5]), 9).unwrap());
        assert_ne!(gaussian_blobs(&specs(&[5, 5]), 9).unwrap(), gaussian_blobs(&specs(&[5, 5]), 10).unwrap());
    }

    #[test]
    fn long_tail_counts() {
        let s = long_tail_specs(10, 1000, 0.5, 4.0, 1.0);
        let counts: Vec<usize> = s.iter().map(|b| b.count).collect();
        assert_eq!(counts, vec![1000, 500, 250, 125, 63, 31, 16, 8, 4, 2]);
    }

    #[test]
    fn subsample_examples() {
        let ds = gaussian_blobs(&specs(&[100, 100]), 4).unwrap();
        assert_eq!(imbalance_subsample(&ds, 0.0, &[0, 1], 1).unwrap(), ds);
        let sub = imbalance_subsample(&ds, 0.9, &[1], 1).unwrap();
        assert_eq!(sub.class_counts(), &[100, 10]);
        assert!((sub.class_frequencies().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(sub, imbalance_subsample(&ds, 0.9, &[1], 1).unwrap());
        assert!(matches!(imbalance_subsample(&ds, 0.5, &[2], 1), Err(Error::Label { .. })));
        assert!(imbalance_subsample(&ds, 1.0, &[1], 1).is_err());

        let odd = gaussian_blobs(&specs(&[30, 7]), 4).unwrap();
        let sub = imbalance_subsample(&odd, 0.9, &[0, 1], 2).unwrap();
        assert_eq!(sub.class_counts(), &[3, 1]);
    }

    #[test]
    fn subsample_keeps_order() {
        let ds = gaussian_blobs(&specs(&[50, 50]), 5).unwrap();
        let sub = imbalance_subsample(&ds, 0.5, &[0], 3).unwrap();
        // every retained row appears in the original in the same relative order
        let mut cursor = 0;
        for i in 0..sub.len() {
            while ds.features().row(cursor) != sub.features().row(i) {
                cursor += 1;
            }
        }
        assert!(cursor < ds.len());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        let ds = gaussian_blobs(&specs(&[7, 3, 4]), 6).unwrap();
        save_csv(&ds, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("f0,f1,label\n"));
        assert_eq!(load_csv(&path).unwrap(), ds);

        std::fs::write(&path, "").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::EmptyDataset)));
        std::fs::write(&path, "f0,f1,label\n").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::EmptyDataset)));
        std::fs::write(&path, "x,y,label\n1,2,0\n").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Parse { line: 1, .. })));
        std::fs::write(&path, "f0,label\n1.0,0\nabc,1\n").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Parse { line: 3, .. })));
        std::fs::write(&path, "f0,label\n1.0,0\n2.0\n").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Parse { line: 3, .. })));
        std::fs::write(&path, "f0,label\n1.0,-1\n").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Label { .. })));
        std::fs::write(&path, "f0,label\n1.0,4\n").unwrap();
        assert!(matches!(load_csv_with_classes(&path, 3), Err(Error::Label { .. })));
    }

    #[test]
    fn balanced_error_matches_closed_form() {
        for t in [-1.0, 0.0, 0.4, 1.15] {
            let closed = 0.5 * (1.0 - normal_cdf(t + 1.0)) + 0.5 * normal_cdf(t - 1.0);
            assert!((balanced_error(t, -1.0, 1.0) - closed).abs() < 1e-10);
        }
    }

    #[test]
    fn balanced_classes_have_no_offset() {
        let r = boundary_bias_demo(1.0, 1).unwrap();
        assert!(r.offset().abs() < 0.1, "{r:?}");
    }

    #[test]
    fn imbalance_moves_threshold_toward_minority() {
        let r = boundary_bias_demo(10.0, 2).unwrap();
        assert!(r.toward_minority(), "{r:?}");
        assert!(r.learned_balanced_error > r.optimal_balanced_error);
        assert!(boundary_bias_demo(0.5, 2).is_err());
    }
}
