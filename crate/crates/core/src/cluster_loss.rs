//! Intra-class clustering with a cluster-sample margin, plus an inter-class
//! margin on the centres with a diversity regulariser.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// Class centres and the margin hyper-parameters.
///
/// The cluster-sample margin γ is coupled to the separation λ by γ = λ/s, so
/// two samples of different classes stay at least λ(s − 2)/s apart once both
/// hinges are satisfied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterState {
    pub centers: DenseMatrix,
    pub gamma: f64,
    pub lambda: f64,
    pub s: f64,
    pub alpha: f64,
}

impl ClusterState {
    pub const DEFAULT_LAMBDA: f64 = 10.0;
    pub const DEFAULT_SCALE: f64 = 4.0;
    pub const DEFAULT_ALPHA: f64 = 0.5;

    /// Builds a state with γ = λ/s.
    pub fn coupled(centers: DenseMatrix, lambda: f64, s: f64, alpha: f64) -> Result<Self> {
        if !(s > 2.0) || !s.is_finite() {
            return Err(Error::Config(format!("scale s = {s} must exceed 2")));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!("separation λ = {lambda} must be positive")));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Config(format!("centre rate α = {alpha} outside (0, 1]")));
        }
        if !centers.is_finite() {
            return Err(Error::NonFinite("cluster centres".into()));
        }
        Ok(Self { centers, gamma: lambda / s, lambda, s, alpha })
    }

    pub fn num_classes(&self) -> usize {
        self.centers.rows()
    }

    pub fn dim(&self) -> usize {
        self.centers.cols()
    }

    fn check_batch(&self, features: &DenseMatrix, labels: &[usize]) -> Result<()> {
        if features.rows() != labels.len() {
            return Err(Error::Dimension(format!("{} feature rows for {} labels", features.rows(), labels.len())));
        }
        if features.rows() > 0 && features.cols() != self.dim() {
            return Err(Error::Dimension(format!("features of width {} for centres of width {}", features.cols(), self.dim())));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= self.num_classes()) {
            return Err(Error::Label { label: y as i64, classes: self.num_classes() });
        }
        Ok(())
    }

    fn check_pairs(&self) -> Result<()> {
        if self.num_classes() < 2 {
            return Err(Error::Config(format!("{} centres; need at least 2", self.num_classes())));
        }
        Ok(())
    }
}

/// Σ_i max{0, ½‖r_i − c_{y_i}‖² − γ} and its gradient in the features.
pub fn clustering_loss(state: &ClusterState, features: &DenseMatrix, labels: &[usize]) -> Result<(f64, DenseMatrix)> {
    state.check_batch(features, labels)?;
    let mut value = 0.0;
    let mut grad = DenseMatrix::zeros(features.rows(), state.dim());
    for (i, &y) in labels.iter().enumerate() {
        let r = features.row(i);
        let c = state.centers.row(y);
        let half_sq: f64 = 0.5 * r.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        if half_sq > state.gamma {
            value += half_sq - state.gamma;
            for ((g, a), b) in grad.row_mut(i).iter_mut().zip(r).zip(c) {
                *g = a - b;
            }
        }
    }
    Ok((value, grad))
}

/// Hinge activity per sample, for keeping finite differences off the kink.
pub fn clustering_active_set(state: &ClusterState, features: &DenseMatrix, labels: &[usize]) -> Vec<i64> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let d: f64 = features.row(i).iter().zip(state.centers.row(y)).map(|(a, b)| (a - b) * (a - b)).sum();
            (0.5 * d > state.gamma) as i64
        })
        .collect()
}

/// Moving-average centre update: c_k ← c_k − α·Σ(c_k − r_i)/(1 + n_k).
pub fn update_centers(state: &ClusterState, features: &DenseMatrix, labels: &[usize]) -> Result<ClusterState> {
    state.check_batch(features, labels)?;
    let (c, d) = (state.num_classes(), state.dim());
    let mut numer = DenseMatrix::zeros(c, d);
    let mut counts = vec![0usize; c];
    // sample-index order keeps the sums bit-reproducible
    for (i, &y) in labels.iter().enumerate() {
        counts[y] += 1;
        let center = state.centers.row(y);
        for ((n, ck), r) in numer.row_mut(y).iter_mut().zip(center).zip(features.row(i)) {
            *n += ck - r;
        }
    }
    let mut next = state.clone();
    for (k, &count) in counts.iter().enumerate().take(c) {
        if count == 0 {
            continue;
        }
        let denom = 1.0 + count as f64;
        for (ck, n) in next.centers.row_mut(k).iter_mut().zip(numer.row(k)) {
            *ck -= state.alpha * n / denom;
        }
    }
    Ok(next)
}

fn pair_distances(centers: &DenseMatrix) -> Vec<(usize, usize, f64)> {
    let c = centers.rows();
    let mut out = Vec::with_capacity(c * (c - 1) / 2);
    for j in 0..c {
        for k in j + 1..c {
            let d: f64 = centers.row(j).iter().zip(centers.row(k)).map(|(a, b)| (a - b) * (a - b)).sum();
            out.push((j, k, d.sqrt()));
        }
    }
    out
}

/// Adds `scale · ∂d(c_j, c_k)/∂c` to `grad`; zero subgradient at coincident centres.
fn add_distance_grad(grad: &mut DenseMatrix, centers: &DenseMatrix, j: usize, k: usize, d: f64, scale: f64) {
    if d == 0.0 {
        return;
    }
    for t in 0..centers.cols() {
        let u = (centers.get(j, t) - centers.get(k, t)) / d;
        grad.set(j, t, grad.get(j, t) + scale * u);
        grad.set(k, t, grad.get(k, t) - scale * u);
    }
}

/// Variance of the pairwise centre distances, normalised by the pair count.
pub fn diversity_regularizer(state: &ClusterState) -> Result<(f64, DenseMatrix)> {
    state.check_pairs()?;
    let pairs = pair_distances(&state.centers);
    let n = pairs.len() as f64;
    let mean = pairs.iter().map(|p| p.2).sum::<f64>() / n;
    let value = pairs.iter().map(|p| (p.2 - mean) * (p.2 - mean)).sum::<f64>() / n;
    // Σ(d − μ) = 0, so μ's own dependence on the centres drops out.
    let mut grad = DenseMatrix::zeros(state.num_classes(), state.dim());
    for &(j, k, d) in &pairs {
        add_distance_grad(&mut grad, &state.centers, j, k, d, 2.0 * (d - mean) / n);
    }
    Ok((value, grad))
}

/// Σ_{j<k} max{0, λ − d(c_j, c_k)} + R(c).
pub fn inter_class_margin_loss(state: &ClusterState) -> Result<(f64, DenseMatrix)> {
    let (mut value, mut grad) = diversity_regularizer(state)?;
    for (j, k, d) in pair_distances(&state.centers) {
        if d < state.lambda {
            value += state.lambda - d;
            add_distance_grad(&mut grad, &state.centers, j, k, d, -1.0);
        }
    }
    Ok((value, grad))
}

/// Which centre pairs sit inside the separation margin.
pub fn margin_active_set(state: &ClusterState) -> Vec<i64> {
    pair_distances(&state.centers).into_iter().map(|(_, _, d)| (d < state.lambda) as i64).collect()
}

/// Sum of the clustering and inter-class objectives.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridLoss {
    pub value: f64,
    pub grad_features: DenseMatrix,
    /// Full derivative in the centres, including the clustering term.
    pub grad_centers: DenseMatrix,
}

pub fn hybrid_loss(state: &ClusterState, features: &DenseMatrix, labels: &[usize]) -> Result<HybridLoss> {
    let (cl, grad_features) = clustering_loss(state, features, labels)?;
    let (mm, mut grad_centers) = inter_class_margin_loss(state)?;
    for (i, &y) in labels.iter().enumerate() {
        for (g, v) in grad_centers.row_mut(y).iter_mut().zip(grad_features.row(i)) {
            *g -= v;
        }
    }
    Ok(HybridLoss { value: cl + mm, grad_features, grad_centers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{self, CheckOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn state(centers: Vec<Vec<f64>>, gamma: f64) -> ClusterState {
        let mut s = ClusterState::coupled(DenseMatrix::from_rows(&centers).unwrap(), 10.0, 4.0, 0.5).unwrap();
        s.gamma = gamma;
        s
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DenseMatrix {
        DenseMatrix::from_vec(r, c, (0..r * c).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
    }

    #[test]
    fn coupled_constructor() {
        let s = ClusterState::coupled(DenseMatrix::zeros(3, 2), 10.0, 4.0, 0.5).unwrap();
        assert_eq!(s.gamma, 2.5);
        assert!(ClusterState::coupled(DenseMatrix::zeros(3, 2), 10.0, 2.0, 0.5).is_err());
        assert!(ClusterState::coupled(DenseMatrix::zeros(3, 2), 10.0, 4.0, 0.0).is_err());
        assert!(ClusterState::coupled(DenseMatrix::zeros(3, 2), -1.0, 4.0, 0.5).is_err());
    }

    #[test]
    fn clustering_examples() {
        let s = state(vec![vec![1.0, 2.0], vec![0.0, 0.0]], 0.0);
        let at_center = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(clustering_loss(&s, &at_center, &[0, 1]).unwrap().0, 0.0);

        let one = DenseMatrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        let s = state(vec![vec![0.0, 0.0], vec![9.0, 9.0]], 0.0);
        let (v, g) = clustering_loss(&s, &one, &[0]).unwrap();
        assert_eq!(v, 12.5);
        assert_eq!(g.row(0), &[3.0, 4.0]);
        let s = state(vec![vec![0.0, 0.0], vec![9.0, 9.0]], 13.0);
        let (v, g) = clustering_loss(&s, &one, &[0]).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn batch_errors() {
        let s = state(vec![vec![0.0, 0.0], vec![1.0, 1.0]], 0.0);
        let f = DenseMatrix::zeros(2, 2);
        assert!(matches!(clustering_loss(&s, &f, &[0]), Err(Error::Dimension(_))));
        assert!(matches!(clustering_loss(&s, &DenseMatrix::zeros(1, 3), &[0]), Err(Error::Dimension(_))));
        assert!(matches!(clustering_loss(&s, &DenseMatrix::zeros(1, 2), &[5]), Err(Error::Label { .. })));
        let single = ClusterState::coupled(DenseMatrix::zeros(1, 2), 10.0, 4.0, 0.5).unwrap();
        assert!(matches!(diversity_regularizer(&single), Err(Error::Config(_))));
        assert!(matches!(inter_class_margin_loss(&single), Err(Error::Config(_))));
    }

    #[test]
    fn center_loss_limit() {
        // the gap per active sample is γ = λ/s
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let centers = random_matrix(&mut rng, 3, 4, 1.0);
            let s = ClusterState::coupled(centers, 0.5, 1e9, 0.5).unwrap();
            let feats = random_matrix(&mut rng, 16, 4, 2.0);
            let labels: Vec<usize> = (0..16).map(|_| rng.random_range(0..3)).collect();
            for (i, &y) in labels.iter().enumerate() {
                let row = DenseMatrix::from_rows(&[feats.row(i).to_vec()]).unwrap();
                let (v, _) = clustering_loss(&s, &row, &[y]).unwrap();
                let center_loss = 0.5 * feats.row(i).iter().zip(s.centers.row(y)).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                assert!((v - center_loss).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn update_examples() {
        let s = state(vec![vec![0.0, 0.0], vec![4.0, 2.0]], 0.0);
        let feats = DenseMatrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let next = update_centers(&s, &feats, &[0]).unwrap();
        assert_eq!(next.centers.row(1), &[4.0, 2.0]);

        let mut s1 = s.clone();
        s1.alpha = 1.0;
        let next = update_centers(&s1, &DenseMatrix::from_rows(&[vec![2.0, -2.0]]).unwrap(), &[1]).unwrap();
        assert_eq!(next.centers.row(1), &[3.0, 0.0]);

        let same = DenseMatrix::from_rows(&[vec![4.0, 2.0], vec![4.0, 2.0]]).unwrap();
        let next = update_centers(&s, &same, &[1, 1]).unwrap();
        assert_eq!(next.centers.row(1), &[4.0, 2.0]);
    }

    #[test]
    fn update_is_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = ClusterState::coupled(random_matrix(&mut rng, 3, 2, 1.0), 10.0, 4.0, 0.5).unwrap();
        let feats = random_matrix(&mut rng, 12, 2, 1.0);
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let a = update_centers(&s, &feats, &labels).unwrap();
        let order: Vec<usize> = (0..12).rev().collect();
        let perm_rows: Vec<Vec<f64>> = order.iter().map(|&i| feats.row(i).to_vec()).collect();
        let perm_labels: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
        let b = update_centers(&s, &DenseMatrix::from_rows(&perm_rows).unwrap(), &perm_labels).unwrap();
        for (x, y) in a.centers.as_slice().iter().zip(b.centers.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn diversity_examples() {
        let two = state(vec![vec![0.0, 0.0], vec![3.0, 1.0]], 0.0);
        assert_eq!(diversity_regularizer(&two).unwrap().0, 0.0);
        let h = 3f64.sqrt() / 2.0;
        let tri = state(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.5, h]], 0.0);
        assert!(diversity_regularizer(&tri).unwrap().0 < 1e-30);
        let line = state(vec![vec![0.0], vec![1.0], vec![3.0]], 0.0);
        // distances {1, 2, 3}: mean 2, variance (1 + 0 + 1)/3
        let brute = [1.0f64, 2.0, 3.0].iter().map(|d| (d - 2.0).powi(2)).sum::<f64>() / 3.0;
        assert!((diversity_regularizer(&line).unwrap().0 - brute).abs() < 1e-12);
        assert!((brute - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn diversity_rigid_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let base = random_matrix(&mut rng, 5, 2, 2.0);
        let s = ClusterState::coupled(base.clone(), 10.0, 4.0, 0.5).unwrap();
        let r0 = diversity_regularizer(&s).unwrap().0;
        let (sin, cos) = 0.73f64.sin_cos();
        let moved: Vec<Vec<f64>> = base
            .iter_rows()
            .map(|r| vec![cos * r[0] - sin * r[1] + 4.0, sin * r[0] + cos * r[1] - 1.5])
            .collect();
        let s2 = ClusterState::coupled(DenseMatrix::from_rows(&moved).unwrap(), 10.0, 4.0, 0.5).unwrap();
        assert!((diversity_regularizer(&s2).unwrap().0 - r0).abs() < 1e-9);
    }

    #[test]
    fn margin_examples() {
        let h = 3f64.sqrt() / 2.0;
        let far = state(vec![vec![0.0, 0.0], vec![12.0, 0.0], vec![6.0, 12.0 * h]], 0.0);
        assert!(inter_class_margin_loss(&far).unwrap().0.abs() < 1e-12);
        let close = state(vec![vec![0.0, 0.0], vec![5.0, 0.0]], 0.0);
        assert!((inter_class_margin_loss(&close).unwrap().0 - 5.0).abs() < 1e-12);
        let coincident = state(vec![vec![1.0, 1.0], vec![1.0, 1.0]], 0.0);
        let (v, g) = inter_class_margin_loss(&coincident).unwrap();
        assert_eq!(v, 10.0);
        assert!(g.as_slice().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn hybrid_is_additive() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let s = ClusterState::coupled(random_matrix(&mut rng, 4, 3, 3.0), 10.0, 4.0, 0.5).unwrap();
        let feats = random_matrix(&mut rng, 10, 3, 3.0);
        let labels: Vec<usize> = (0..10).map(|_| rng.random_range(0..4)).collect();
        let h = hybrid_loss(&s, &feats, &labels).unwrap();
        let sum = clustering_loss(&s, &feats, &labels).unwrap().0 + inter_class_margin_loss(&s).unwrap().0;
        assert!((h.value - sum).abs() < 1e-12);

        let zero = state(vec![vec![0.0, 0.0], vec![20.0, 0.0]], 2.5);
        let at = DenseMatrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert_eq!(hybrid_loss(&zero, &at, &[0]).unwrap().value, 0.0);
    }

    #[test]
    fn margin_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..100 {
            let s = ClusterState::coupled(random_matrix(&mut rng, 4, 3, 4.0), 10.0, 4.0, 0.5).unwrap();
            let (_, g) = inter_class_margin_loss(&s).unwrap();
            let f = |p: &[f64]| {
                let mut t = s.clone();
                t.centers.as_mut_slice().copy_from_slice(p);
                inter_class_margin_loss(&t).unwrap().0
            };
            let seg = |p: &[f64]| {
                let mut t = s.clone();
                t.centers.as_mut_slice().copy_from_slice(p);
                margin_active_set(&t)
            };
            let r = gradcheck::check_excluding(&f, g.as_slice(), s.centers.as_slice(), &CheckOptions::default(), &seg);
            assert!(r.passed, "{r}");
        }
    }

    #[test]
    fn hybrid_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..100 {
            let s = ClusterState::coupled(random_matrix(&mut rng, 3, 2, 4.0), 10.0, 4.0, 0.5).unwrap();
            let feats = random_matrix(&mut rng, 6, 2, 4.0);
            let labels: Vec<usize> = (0..6).map(|_| rng.random_range(0..3)).collect();
            let h = hybrid_loss(&s, &feats, &labels).unwrap();
            let nf = feats.as_slice().len();
            let unpack = |p: &[f64]| {
                let mut t = s.clone();
                t.centers.as_mut_slice().copy_from_slice(&p[nf..]);
                (t, DenseMatrix::from_vec(feats.rows(), feats.cols(), p[..nf].to_vec()).unwrap())
            };
            let f = |p: &[f64]| {
                let (t, x) = unpack(p);
                hybrid_loss(&t, &x, &labels).unwrap().value
            };
            let seg = |p: &[f64]| {
                let (t, x) = unpack(p);
                let mut v = margin_active_set(&t);
                v.extend(clustering_active_set(&t, &x, &labels));
                v
            };
            let mut params = feats.as_slice().to_vec();
            params.extend_from_slice(s.centers.as_slice());
            let mut analytic = h.grad_features.as_slice().to_vec();
            analytic.extend_from_slice(h.grad_centers.as_slice());
            let r = gradcheck::check_excluding(&f, &analytic, &params, &CheckOptions::default(), &seg);
            assert!(r.passed, "{r}");
        }
    }
}
