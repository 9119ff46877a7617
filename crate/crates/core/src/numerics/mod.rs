//! Dense containers and scalar kernels shared by every loss.

mod chebyshev;
mod dense;
mod special;

pub use chebyshev::{chebyshev_t, chebyshev_t_with_derivative, cos_m_theta};
pub use dense::{DenseMatrix, DenseVector};
pub use special::{erf, erfc, normal_cdf, normal_pdf, simpson};

use crate::error::{Error, Result};

/// Inner product of two equal-length slices.
pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("dot of lengths {} and {}", a.len(), b.len())));
    }
    Ok(dot_unchecked(a, b))
}

#[inline]
pub(crate) fn dot_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot_unchecked(a, a).sqrt()
}

/// `log Σ exp(v_i)` with the maximum shifted out.
pub fn stable_log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Dimension("log-sum-exp of an empty vector".into()));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Softmax probabilities computed with the same max shift as [`stable_log_sum_exp`].
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
