//! Monte-Carlo dropout ensembles and the uncertainty quantities derived from them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::margin_loss::ClassifierState;
use crate::numerics::{dot_unchecked, erf, DenseMatrix, DenseVector};
use crate::rng::{self, Stream};

/// Size and dropout behaviour of the Monte-Carlo ensemble.
///
/// `keep_prob` is the probability that a unit stays active. Kept activations
/// are scaled by `1/keep_prob`, so `keep_prob → 1` recovers the deterministic
/// network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_passes: usize,
    pub keep_prob: f64,
    /// Model precision τ; the covariance floor is τ⁻¹.
    pub precision: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { n_passes: 10, keep_prob: 0.5, precision: 100.0 }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_passes < 2 {
            return Err(Error::Config(format!("{} ensemble passes; need at least 2", self.n_passes)));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::Config(format!("keep probability {} outside (0, 1]", self.keep_prob)));
        }
        if !(self.precision > 0.0) || !self.precision.is_finite() {
            return Err(Error::Config(format!("precision {} must be positive", self.precision)));
        }
        Ok(())
    }
}

/// Bernoulli keep/drop decisions for every hidden unit of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub layers: Vec<Vec<bool>>,
    pub keep_prob: f64,
}

impl DropoutMask {
    pub fn all_keep(widths: &[usize]) -> Self {
        Self { layers: widths.iter().map(|&w| vec![true; w]).collect(), keep_prob: 1.0 }
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R, widths: &[usize], keep_prob: f64) -> Self {
        let layers = widths
            .iter()
            .map(|&w| (0..w).map(|_| rng.random::<f64>() < keep_prob).collect())
            .collect();
        Self { layers, keep_prob }
    }

    /// Multiplier for unit `unit` of hidden layer `layer`: `1/p` if kept, else 0.
    #[inline]
    pub fn factor(&self, layer: usize, unit: usize) -> f64 {
        if self.layers[layer][unit] {
            1.0 / self.keep_prob
        } else {
            0.0
        }
    }

    pub fn kept_fraction(&self) -> f64 {
        let total: usize = self.layers.iter().map(Vec::len).sum();
        let kept: usize = self.layers.iter().map(|l| l.iter().filter(|k| **k).count()).sum();
        kept as f64 / total.max(1) as f64
    }
}

/// `cfg.n_passes` independent masks, reproducible from `seed`.
pub fn sample_dropout_masks(cfg: &EnsembleConfig, widths: &[usize], seed: u64) -> Result<Vec<DropoutMask>> {
    if widths.contains(&0) {
        return Err(Error::Config("layer widths must be positive".into()));
    }
    let mut rng = rng::stream(seed, Stream::Dropout);
    Ok((0..cfg.n_passes).map(|_| DropoutMask::sample(&mut rng, widths, cfg.keep_prob)).collect())
}

fn check_stack(outputs: &[Vec<f64>], min: usize) -> Result<usize> {
    if outputs.len() < min.max(1) {
        return Err(if outputs.is_empty() {
            Error::Dimension("empty output stack".into())
        } else {
            Error::Config(format!("{} passes; need at least {min}", outputs.len()))
        });
    }
    let dim = outputs[0].len();
    if outputs.iter().any(|o| o.len() != dim) {
        return Err(Error::Dimension("ragged output stack".into()));
    }
    Ok(dim)
}

/// Mean relative to the first member, summed in pass order.
///
/// Shifting by the first output makes the deviations of identical passes
/// exactly zero.
fn shifted_mean(outputs: &[Vec<f64>]) -> Vec<f64> {
    let n = outputs.len() as f64;
    let first = &outputs[0];
    let mut acc = vec![0.0; first.len()];
    for o in &outputs[1..] {
        for ((a, v), f) in acc.iter_mut().zip(o).zip(first) {
            *a += v - f;
        }
    }
    first.iter().zip(&acc).map(|(f, a)| f + a / n).collect()
}

/// First-moment estimate (1/N) Σ ŷ_i.
pub fn mc_mean(outputs: &[Vec<f64>]) -> Result<DenseVector> {
    check_stack(outputs, 1)?;
    Ok(shifted_mean(outputs).into())
}

/// Predictive mean and covariance of one input's ensemble outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyEstimate {
    pub mean: DenseVector,
    /// τ⁻¹I + (1/N) Σ ŷ ŷᵀ − m mᵀ
    pub covariance: DenseMatrix,
    /// Mean diagonal entry.
    pub scalar: f64,
}

impl UncertaintyEstimate {
    pub fn class_variance(&self, class: usize) -> f64 {
        self.covariance.get(class, class)
    }
}

/// Second-moment uncertainty of an output stack.
pub fn mc_uncertainty(outputs: &[Vec<f64>], cfg: &EnsembleConfig) -> Result<UncertaintyEstimate> {
    let c = check_stack(outputs, 2)?;
    let n = outputs.len() as f64;
    let mean = shifted_mean(outputs);
    let mut covariance = DenseMatrix::zeros(c, c);
    let mut dev = vec![0.0; c];
    for o in outputs {
        for ((d, v), m) in dev.iter_mut().zip(o).zip(&mean) {
            *d = v - m;
        }
        covariance.add_outer(&dev, &dev, 1.0 / n);
    }
    let floor = 1.0 / cfg.precision;
    for k in 0..c {
        covariance.set(k, k, covariance.get(k, k) + floor);
    }
    let scalar = (0..c).map(|k| covariance.get(k, k)).sum::<f64>() / c.max(1) as f64;
    Ok(UncertaintyEstimate { mean: mean.into(), covariance, scalar })
}

/// Which per-sample scalar is averaged into the class uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UncertaintySummary {
    /// Covariance entry of the sample's own class.
    TrueClass,
    /// Mean of the covariance diagonal ([`UncertaintyEstimate::scalar`]).
    MeanDiagonal,
}

impl UncertaintySummary {
    pub fn name(self) -> &'static str {
        match self {
            UncertaintySummary::TrueClass => "true-class",
            UncertaintySummary::MeanDiagonal => "mean-diagonal",
        }
    }
}

impl std::fmt::Display for UncertaintySummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for UncertaintySummary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "true-class" => Ok(UncertaintySummary::TrueClass),
            "mean-diagonal" => Ok(UncertaintySummary::MeanDiagonal),
            _ => Err(Error::Config(format!("unknown uncertainty summary '{s}'"))),
        }
    }
}

/// Per-class mean of each sample's true-class variance.
///
/// A class without samples gets the mean over all samples.
pub fn class_uncertainty(estimates: &[UncertaintyEstimate], labels: &[usize], num_classes: usize) -> Result<Vec<f64>> {
    class_uncertainty_by(estimates, labels, num_classes, UncertaintySummary::TrueClass)
}

pub fn class_uncertainty_by(
    estimates: &[UncertaintyEstimate],
    labels: &[usize],
    num_classes: usize,
    summary: UncertaintySummary,
) -> Result<Vec<f64>> {
    if estimates.len() != labels.len() {
        return Err(Error::Dimension(format!("{} estimates for {} labels", estimates.len(), labels.len())));
    }
    let mut sums = vec![0.0; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (e, &y) in estimates.iter().zip(labels) {
        if y >= num_classes || y >= e.covariance.rows() {
            return Err(Error::Label { label: y as i64, classes: num_classes });
        }
        sums[y] += match summary {
            UncertaintySummary::TrueClass => e.class_variance(y),
            UncertaintySummary::MeanDiagonal => e.scalar,
        };
        counts[y] += 1;
    }
    let total: usize = counts.iter().sum();
    let global = if total == 0 { 0.0 } else { sums.iter().sum::<f64>() / total as f64 };
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| if n == 0 { global } else { s / n as f64 })
        .collect())
}

/// Per-dimension mean and biased (1/N) variance of a feature stack.
pub fn sample_feature_moments(stack: &[Vec<f64>]) -> Result<(DenseVector, DenseVector)> {
    check_stack(stack, 2)?;
    let n = stack.len() as f64;
    let mean = shifted_mean(stack);
    let mut var = vec![0.0; mean.len()];
    for s in stack {
        for ((v, x), m) in var.iter_mut().zip(s).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    Ok((mean.into(), var.into()))
}

/// Mean and variance of E(f) = (w_j − w_y)·f under f ~ N(μ_f, diag σ_f).
pub fn error_moments(w_j: &[f64], w_y: &[f64], mu_f: &[f64], sigma_f: &[f64]) -> Result<(f64, f64)> {
    let d = mu_f.len();
    if w_j.len() != d || w_y.len() != d || sigma_f.len() != d {
        return Err(Error::Dimension("error moments need equal dimensions".into()));
    }
    let mut mu = 0.0;
    let mut var = 0.0;
    for k in 0..d {
        let diff = w_j[k] - w_y[k];
        mu += diff * mu_f[k];
        var += diff * diff * sigma_f[k];
    }
    Ok((mu, var.max(0.0)))
}

/// P(E > 0) = ½(1 + erf(μ_E / √(2σ_E²))); a step function when σ_E² = 0.
pub fn misclassification_ccdf(mu_e: f64, var_e: f64) -> f64 {
    if var_e <= 0.0 {
        return if mu_e > 0.0 {
            1.0
        } else if mu_e < 0.0 {
            0.0
        } else {
            0.5
        };
    }
    (0.5 * (1.0 + erf(mu_e / (2.0 * var_e).sqrt()))).clamp(0.0, 1.0)
}

/// The strongest competing class for the mean feature; ties go to the lowest index.
pub fn rival_class(state: &ClassifierState, mu_f: &[f64], y: usize) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (j, w) in state.weights().iter_rows().enumerate() {
        if j == y {
            continue;
        }
        let score = dot_unchecked(w, mu_f);
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((j, score));
        }
    }
    best.map_or(0, |(j, _)| j)
}

/// Misclassification probability of one sample from its ensemble features.
pub fn sample_ccdf(state: &ClassifierState, feature_stack: &[Vec<f64>], y: usize) -> Result<f64> {
    let (mu, sigma) = sample_feature_moments(feature_stack)?;
    let j = rival_class(state, &mu, y);
    let w = state.weights();
    let (mu_e, var_e) = error_moments(w.row(j), w.row(y), &mu, &sigma)?;
    Ok(misclassification_ccdf(mu_e, var_e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn masks_examples() {
        let cfg = EnsembleConfig { keep_prob: 1.0 - 1e-9, ..Default::default() };
        let masks = sample_dropout_masks(&cfg, &[16, 8], 1).unwrap();
        assert_eq!(masks.len(), 10);
        assert!(masks.iter().all(|m| m.layers.iter().flatten().all(|k| *k)));

        let cfg = EnsembleConfig::default();
        assert_eq!(sample_dropout_masks(&cfg, &[5, 7], 3).unwrap(), sample_dropout_masks(&cfg, &[5, 7], 3).unwrap());
        assert_ne!(sample_dropout_masks(&cfg, &[5, 7], 3).unwrap(), sample_dropout_masks(&cfg, &[5, 7], 4).unwrap());
        assert!(sample_dropout_masks(&cfg, &[0], 3).is_err());
    }

    #[test]
    fn keep_fraction_concentrates() {
        // 10⁵ Bernoulli(0.5) draws: σ ≈ 0.0016, so ±0.01 is > 6σ.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = DropoutMask::sample(&mut rng, &[100_000], 0.5);
        assert!((m.kept_fraction() - 0.5).abs() < 0.01);
    }

    #[test]
    fn mean_examples() {
        let v = vec![1.5, -2.0, 0.1];
        assert_eq!(&*mc_mean(&[v.clone(), v.clone(), v.clone()]).unwrap(), v.as_slice());
        assert_eq!(&*mc_mean(&[vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap(), &[1.0, 1.0]);
        assert!(matches!(mc_mean(&[]), Err(Error::Dimension(_))));
    }

    #[test]
    fn uncertainty_examples() {
        let cfg = EnsembleConfig::default();
        let same = vec![vec![0.1, 0.7, -3.3]; 10];
        let u = mc_uncertainty(&same, &cfg).unwrap();
        let mut floor = DenseMatrix::identity(3);
        floor.scale(0.01);
        assert_eq!(u.covariance, floor);

        let cfg1 = EnsembleConfig { precision: 1.0, ..cfg };
        let u = mc_uncertainty(&[vec![1.0, 0.0], vec![-1.0, 0.0]], &cfg1).unwrap();
        assert_eq!(u.class_variance(0), 2.0);
        assert_eq!(u.class_variance(1), 1.0);
        assert_eq!(u.covariance.get(0, 1), 0.0);

        assert!(matches!(mc_uncertainty(&[vec![1.0]], &cfg), Err(Error::Config(_))));
    }

    /// Smallest eigenvalue of a symmetric 2x2 or 3x3 matrix via Jacobi sweeps.
    fn min_eigenvalue(m: &DenseMatrix) -> f64 {
        let n = m.rows();
        let mut a = m.clone();
        for _ in 0..100 {
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a.get(p, q);
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a.get(k, p);
                        let akq = a.get(k, q);
                        a.set(k, p, c * akp - s * akq);
                        a.set(k, q, s * akp + c * akq);
                    }
                    for k in 0..n {
                        let apk = a.get(p, k);
                        let aqk = a.get(q, k);
                        a.set(p, k, c * apk - s * aqk);
                        a.set(q, k, s * apk + c * aqk);
                    }
                }
            }
        }
        (0..n).map(|i| a.get(i, i)).fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn covariance_minus_floor_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let cfg = EnsembleConfig::default();
        for _ in 0..100 {
            let stack: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let mut u = mc_uncertainty(&stack, &cfg).unwrap().covariance;
            for k in 0..3 {
                u.set(k, k, u.get(k, k) - 0.01);
            }
            assert!(min_eigenvalue(&u) > -1e-12);
        }
    }

    #[test]
    fn class_uncertainty_examples() {
        let cfg = EnsembleConfig::default();
        let flat = mc_uncertainty(&vec![vec![0.0, 0.0]; 4], &cfg).unwrap();
        let u = class_uncertainty(&[flat.clone(), flat.clone()], &[0, 1], 2).unwrap();
        assert_eq!(u, vec![0.01, 0.01]);

        let wide = mc_uncertainty(&[vec![0.0, 2.0], vec![0.0, -2.0]], &cfg).unwrap();
        let narrow = mc_uncertainty(&[vec![1.0, 1.0], vec![-1.0, -1.0]], &cfg).unwrap();
        let u = class_uncertainty(&[narrow.clone(), wide.clone()], &[0, 1], 3).unwrap();
        assert!(u[1] > u[0]);
        // absent class gets the global mean
        assert!((u[2] - (u[0] + u[1]) / 2.0).abs() < 1e-15);
        let swapped = class_uncertainty(&[wide, narrow], &[1, 0], 3).unwrap();
        assert_eq!(u, swapped);
    }

    #[test]
    fn moments_examples() {
        let (mu, var) = sample_feature_moments(&vec![vec![0.3, -1.0]; 6]).unwrap();
        assert_eq!(&*mu, &[0.3, -1.0]);
        assert_eq!(&*var, &[0.0, 0.0]);
        let (mu, var) = sample_feature_moments(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!((mu[0], var[0]), (1.0, 1.0));
        assert!(matches!(sample_feature_moments(&[vec![1.0]]), Err(Error::Config(_))));
    }

    #[test]
    fn error_moment_examples() {
        assert_eq!(error_moments(&[1.0, 2.0], &[1.0, 2.0], &[3.0, 4.0], &[1.0, 1.0]).unwrap(), (0.0, 0.0));
        let (_, v) = error_moments(&[1.0, 0.0], &[0.0, 0.0], &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(v, 1.0);
        assert!(error_moments(&[1.0], &[1.0, 2.0], &[0.0, 0.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn ccdf_examples() {
        assert_eq!(misclassification_ccdf(0.0, 1.0), 0.5);
        assert!(misclassification_ccdf(-10.0, 1.0) < 1e-12);
        // Φ(1) by Simpson quadrature of the density
        let phi1 = crate::numerics::simpson(crate::numerics::normal_pdf, -12.0, 1.0, 4000);
        assert!((misclassification_ccdf(1.0, 1.0) - phi1).abs() < 1e-12);
        assert_eq!(misclassification_ccdf(0.2, 0.0), 1.0);
        assert_eq!(misclassification_ccdf(-0.2, 0.0), 0.0);
        assert_eq!(misclassification_ccdf(0.0, 0.0), 0.5);
    }

    #[test]
    fn ccdf_tends_to_step() {
        for mu in [-0.5, -0.1, 0.1, 0.5] {
            let v = misclassification_ccdf(mu, 1e-8);
            assert!((v - if mu > 0.0 { 1.0 } else { 0.0 }).abs() < 1e-12);
        }
    }

    #[test]
    fn rival_examples() {
        let two = ClassifierState::new(DenseMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap()).unwrap();
        assert_eq!(rival_class(&two, &[1.0], 1), 0);
        let three = ClassifierState::new(DenseMatrix::from_rows(&[vec![5.0], vec![1.0], vec![3.0]]).unwrap()).unwrap();
        assert_eq!(rival_class(&three, &[1.0], 0), 2);
        let tie = ClassifierState::new(DenseMatrix::from_rows(&[vec![5.0], vec![3.0], vec![3.0]]).unwrap()).unwrap();
        assert_eq!(rival_class(&tie, &[1.0], 0), 1);
    }

    proptest! {
        #[test]
        fn mean_matches_naive(stack in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 1..20)) {
            let m = mc_mean(&stack).unwrap();
            for k in 0..3 {
                let naive = stack.iter().map(|s| s[k]).sum::<f64>() / stack.len() as f64;
                prop_assert!((m[k] - naive).abs() < 1e-12);
            }
        }

        #[test]
        fn diagonal_at_least_floor(stack in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 4), 2..12)) {
            let u = mc_uncertainty(&stack, &EnsembleConfig::default()).unwrap();
            for k in 0..4 {
                prop_assert!(u.class_variance(k) >= 0.01);
            }
            prop_assert!(u.scalar >= 0.01);
        }

        #[test]
        fn moments_match_naive(stack in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 2), 2..20)) {
            let (mu, var) = sample_feature_moments(&stack).unwrap();
            let n = stack.len() as f64;
            for k in 0..2 {
                let m = stack.iter().map(|s| s[k]).sum::<f64>() / n;
                let v = stack.iter().map(|s| (s[k] - m).powi(2)).sum::<f64>() / n;
                prop_assert!((mu[k] - m).abs() < 1e-12);
                prop_assert!((var[k] - v).abs() < 1e-12);
            }
        }

        #[test]
        fn error_moments_match_quadratic_form(
            wj in prop::collection::vec(-3.0f64..3.0, 3),
            wy in prop::collection::vec(-3.0f64..3.0, 3),
            mu in prop::collection::vec(-3.0f64..3.0, 3),
            sig in prop::collection::vec(0.0f64..3.0, 3),
        ) {
            let (m, v) = error_moments(&wj, &wy, &mu, &sig).unwrap();
            let diff: Vec<f64> = wj.iter().zip(&wy).map(|(a, b)| a - b).collect();
            let mut sigma = DenseMatrix::zeros(3, 3);
            for k in 0..3 { sigma.set(k, k, sig[k]); }
            let q: f64 = (0..3).map(|a| (0..3).map(|b| diff[a] * sigma.get(a, b) * diff[b]).sum::<f64>()).sum();
            let lin: f64 = diff.iter().zip(&mu).map(|(a, b)| a * b).sum();
            prop_assert!((m - lin).abs() < 1e-12);
            prop_assert!((v - q).abs() < 1e-12);
        }

        #[test]
        fn ccdf_monotone(a in -5.0f64..5.0, b in -5.0f64..5.0, var in 1e-6f64..10.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(misclassification_ccdf(lo, var) <= misclassification_ccdf(hi, var));
        }
    }
}
