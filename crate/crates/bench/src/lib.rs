//! Deterministic inputs shared by the benchmarks.

use umargin_core::{ClassifierState, DenseMatrix};

/// Smooth pseudo-random values in [−1, 1], no RNG needed.
pub fn wave(n: usize, phase: f64) -> Vec<f64> {
    (0..n).map(|i| (1.7 * i as f64 + phase).sin()).collect()
}

pub fn classifier(classes: usize, dim: usize) -> ClassifierState {
    let w = DenseMatrix::from_vec(classes, dim, wave(classes * dim, 0.3)).expect("finite weights");
    ClassifierState::new(w).expect("at least two classes")
}
