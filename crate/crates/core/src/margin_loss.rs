//! Softmax-family losses over class-representative vectors.
//!
//! Every loss here is the cross-entropy of a logit vector `z`, where the
//! non-target logits are plain inner products `w_j·f` and the target logit
//! may be replaced by an angular transform `‖w_y‖‖f‖·φ(cos α_y)`. Gradients
//! are assembled from the per-logit partial derivatives, so each variant only
//! has to supply `φ` and `φ'`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{chebyshev_t_with_derivative, dot_unchecked, norm, softmax, stable_log_sum_exp, DenseMatrix, DenseVector};

/// Largest supported angular margin.
pub const M_MAX: u32 = 6;

/// Feature or weight norms below this are rejected.
pub const DEGENERATE_NORM: f64 = 1e-10;

// cos α is pulled this far inside [−1, 1] before taking arccos.
const COS_CLAMP: f64 = 1e-12;

/// Final-layer classifier: one class-representative row per class, no bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierState {
    weights: DenseMatrix,
    margins: Vec<u32>,
    class_uncertainty: Vec<f64>,
}

impl ClassifierState {
    /// Unit margins and zero uncertainty for every class.
    pub fn new(weights: DenseMatrix) -> Result<Self> {
        let c = weights.rows();
        Self::with_margins(weights, vec![1; c], vec![0.0; c])
    }

    pub fn with_margins(weights: DenseMatrix, margins: Vec<u32>, class_uncertainty: Vec<f64>) -> Result<Self> {
        if weights.rows() < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", weights.rows())));
        }
        if !weights.is_finite() {
            return Err(Error::NonFinite("classifier weights".into()));
        }
        let mut state = Self { weights, margins: Vec::new(), class_uncertainty: Vec::new() };
        state.set_margins(margins)?;
        state.set_class_uncertainty(class_uncertainty)?;
        Ok(state)
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &DenseMatrix {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut DenseMatrix {
        &mut self.weights
    }

    pub fn margins(&self) -> &[u32] {
        &self.margins
    }

    pub fn class_uncertainty(&self) -> &[f64] {
        &self.class_uncertainty
    }

    pub fn set_margins(&mut self, margins: Vec<u32>) -> Result<()> {
        if margins.len() != self.num_classes() {
            return Err(Error::Dimension(format!("{} margins for {} classes", margins.len(), self.num_classes())));
        }
        if let Some(m) = margins.iter().find(|m| !(1..=M_MAX).contains(*m)) {
            return Err(Error::Parameter(format!("margin {m} outside 1..={M_MAX}")));
        }
        self.margins = margins;
        Ok(())
    }

    pub fn set_class_uncertainty(&mut self, u: Vec<f64>) -> Result<()> {
        if u.len() != self.num_classes() {
            return Err(Error::Dimension(format!("{} uncertainties for {} classes", u.len(), self.num_classes())));
        }
        if u.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Parameter("class uncertainty must be finite and nonnegative".into()));
        }
        self.class_uncertainty = u;
        Ok(())
    }

    /// Sets uncertainties and derives each class margin from them, capped at `cap`.
    pub fn refresh_margins(&mut self, u: Vec<f64>, cap: u32) -> Result<()> {
        let cap = cap.clamp(1, M_MAX);
        let margins = u.iter().map(|&v| class_margin_from_uncertainty(v).min(cap)).collect();
        self.set_class_uncertainty(u)?;
        self.set_margins(margins)
    }

    pub fn logits(&self, f: &[f64]) -> Vec<f64> {
        self.weights.iter_rows().map(|w| dot_unchecked(w, f)).collect()
    }
}

/// Loss value with gradients for the classifier rows and the input feature.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad_weights: DenseMatrix,
    pub grad_feature: DenseVector,
}

/// ψ(α) = (−1)^r cos(mα) − 2r on the segment α ∈ [rπ/m, (r+1)π/m].
pub fn psi(alpha: f64, m: u32) -> Result<f64> {
    check_margin(m)?;
    if !(0.0..=PI).contains(&alpha) {
        return Err(Error::Domain(format!("α = {alpha} outside [0, π]")));
    }
    let r = segment_of_angle(alpha, m);
    Ok(sign(r) * (m as f64 * alpha).cos() - 2.0 * r as f64)
}

/// max(1, ⌊u/2⌋), clamped to [`M_MAX`].
pub fn class_margin_from_uncertainty(u: f64) -> u32 {
    if !(u >= 0.0) {
        return 1;
    }
    let m = (0.5 * u).floor();
    if m >= M_MAX as f64 {
        M_MAX
    } else {
        (m as u32).max(1)
    }
}

/// Segment index r of ψ for the target class; used to keep finite differences off the kinks.
pub fn segment_index(state: &ClassifierState, f: &[f64], y: usize, m: u32) -> Result<u32> {
    check_inputs(state, f, y)?;
    let w = state.weights.row(y);
    let (nw, nf) = (norm(w), norm(f));
    if nw < DEGENERATE_NORM || nf < DEGENERATE_NORM {
        return Err(Error::DegenerateNorm("segment of a zero vector".into()));
    }
    Ok(segment_of_cos(dot_unchecked(w, f) / (nw * nf), m))
}

pub fn softmax_loss(state: &ClassifierState, f: &[f64], y: usize) -> Result<LossResult> {
    check_inputs(state, f, y)?;
    let c = state.num_classes();
    let logits = state.logits(f);
    let value = stable_log_sum_exp(&logits)? - logits[y];
    let mut dz = softmax(&logits);
    dz[y] -= 1.0;

    let mut grad_weights = DenseMatrix::zeros(c, f.len());
    grad_weights.add_outer(&dz, f, 1.0);
    let grad_feature = state.weights.transpose_matvec(&dz)?;
    Ok(LossResult { value, grad_weights, grad_feature: grad_feature.into() })
}

pub fn large_margin_softmax_loss(state: &ClassifierState, f: &[f64], y: usize, m: u32) -> Result<LossResult> {
    uncertainty_weighted_margin_loss(state, f, y, m, 1.0)
}

/// Margin loss whose target term is `ccdf · ((−1)^r cos(mα_y) − 2r)`.
///
/// `ccdf` is a per-step constant; no gradient flows into it.
pub fn uncertainty_weighted_margin_loss(
    state: &ClassifierState,
    f: &[f64],
    y: usize,
    m: u32,
    ccdf: f64,
) -> Result<LossResult> {
    check_margin(m)?;
    if !(0.0..=1.0).contains(&ccdf) {
        return Err(Error::Parameter(format!("ccdf = {ccdf} outside [0, 1]")));
    }
    let target = move |cos: f64| {
        let r = segment_of_cos(cos, m);
        let (t, dt) = chebyshev_t_with_derivative(cos, m);
        let s = sign(r);
        (ccdf * (s * t - 2.0 * r as f64), ccdf * s * dt)
    };
    transformed_loss(state, f, y, Some(&target), None)
}

/// Direct angular re-mapping of the cosine similarity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AngularVariant {
    /// Geodesic-like re-scaling, `a = 2` by default.
    Scaled(f64),
    /// Half-angle re-mapping, `a = 3` by default.
    HalfAngle(f64),
}

impl AngularVariant {
    pub fn eval(self, cos_theta: f64) -> f64 {
        match self {
            AngularVariant::Scaled(a) => angular_variant_i(cos_theta, a),
            AngularVariant::HalfAngle(a) => angular_variant_ii(cos_theta, a),
        }
    }

    fn eval_with_derivative(self, c: f64) -> (f64, f64) {
        match self {
            AngularVariant::Scaled(a) => {
                let denom = a * (1.0 + (1.0 - c * c) * a);
                let k = ((1.0 + a) / denom).sqrt();
                // d/dc [√(1+a) · c · D^{-1/2}] = √(1+a) · (a + a²) · D^{-3/2}
                let d = (1.0 + a).sqrt() * (a + a * a) / (denom * denom.sqrt());
                (k * c, d)
            }
            AngularVariant::HalfAngle(a) => {
                let s = ((1.0 + c).max(0.0) / 2.0).sqrt();
                let d = if s < 1e-8 { a * a / 4.0 } else { a * (a * s).sin() / (4.0 * s) };
                (-(a * s).cos(), d)
            }
        }
    }
}

/// √((1+a)/(a(1+(1−cos²θ)a))) · cos θ
pub fn angular_variant_i(cos_theta: f64, a: f64) -> f64 {
    ((1.0 + a) / (a * (1.0 + (1.0 - cos_theta * cos_theta) * a))).sqrt() * cos_theta
}

/// −cos(a·√((1+cos θ)/2))
pub fn angular_variant_ii(cos_theta: f64, a: f64) -> f64 {
    -(a * ((1.0 + cos_theta).max(0.0) / 2.0).sqrt()).cos()
}

/// Softmax over `‖w_j‖‖f‖·φ(cos θ_j)` for every class.
pub fn angular_variant_loss(state: &ClassifierState, f: &[f64], y: usize, variant: AngularVariant) -> Result<LossResult> {
    let phi = move |c: f64| variant.eval_with_derivative(c);
    transformed_loss(state, f, y, Some(&phi), Some(&phi))
}

type Transform<'a> = &'a dyn Fn(f64) -> (f64, f64);

/// Cross-entropy where the target logit uses `target` and the others use
/// `others` (plain inner product when `None`).
fn transformed_loss(
    state: &ClassifierState,
    f: &[f64],
    y: usize,
    target: Option<Transform<'_>>,
    others: Option<Transform<'_>>,
) -> Result<LossResult> {
    check_inputs(state, f, y)?;
    let nf = norm(f);
    if nf < DEGENERATE_NORM {
        return Err(Error::DegenerateNorm(format!("‖f‖ = {nf:e}")));
    }
    let c = state.num_classes();
    let d = f.len();
    let mut logits = Vec::with_capacity(c);
    // (∂z_j/∂w_j, ∂z_j/∂f)
    let mut partials: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(c);

    for (j, w) in state.weights.iter_rows().enumerate() {
        let nw = norm(w);
        if nw < DEGENERATE_NORM {
            return Err(Error::DegenerateNorm(format!("‖w_{j}‖ = {nw:e}")));
        }
        let transform = if j == y { target } else { others };
        match transform {
            None => {
                logits.push(dot_unchecked(w, f));
                partials.push((f.to_vec(), w.to_vec()));
            }
            Some(phi) => {
                let cos = dot_unchecked(w, f) / (nw * nf);
                let (p, dp) = phi(cos);
                logits.push(nw * nf * p);
                // z = ‖w‖‖f‖φ(c):  ∂z/∂w = φ'·f + (‖f‖/‖w‖)(φ − cφ')·w, symmetric in f.
                let radial = p - cos * dp;
                let gw = (0..d).map(|k| dp * f[k] + nf / nw * radial * w[k]).collect();
                let gf = (0..d).map(|k| dp * w[k] + nw / nf * radial * f[k]).collect();
                partials.push((gw, gf));
            }
        }
    }

    let value = stable_log_sum_exp(&logits)? - logits[y];
    let mut dz = softmax(&logits);
    dz[y] -= 1.0;

    let mut grad_weights = DenseMatrix::zeros(c, d);
    let mut grad_feature = vec![0.0; d];
    for (j, (gw, gf)) in partials.iter().enumerate() {
        for (g, v) in grad_weights.row_mut(j).iter_mut().zip(gw) {
            *g = dz[j] * v;
        }
        for (g, v) in grad_feature.iter_mut().zip(gf) {
            *g += dz[j] * v;
        }
    }
    Ok(LossResult { value, grad_weights, grad_feature: grad_feature.into() })
}

fn check_inputs(state: &ClassifierState, f: &[f64], y: usize) -> Result<()> {
    if y >= state.num_classes() {
        return Err(Error::Label { label: y as i64, classes: state.num_classes() });
    }
    if f.len() != state.dim() {
        return Err(Error::Dimension(format!("feature of length {} for classifier of dimension {}", f.len(), state.dim())));
    }
    Ok(())
}

fn check_margin(m: u32) -> Result<()> {
    if (1..=M_MAX).contains(&m) {
        Ok(())
    } else {
        Err(Error::Parameter(format!("margin {m} outside 1..={M_MAX}")))
    }
}

#[inline]
fn sign(r: u32) -> f64 {
    if r.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

fn segment_of_angle(alpha: f64, m: u32) -> u32 {
    ((m as f64 * alpha / PI).floor() as u32).min(m - 1)
}

fn segment_of_cos(cos: f64, m: u32) -> u32 {
    let clamped = cos.clamp(-1.0 + COS_CLAMP, 1.0 - COS_CLAMP);
    segment_of_angle(clamped.acos(), m)
}
