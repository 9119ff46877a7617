use crate::cluster_loss::{clustering_loss, ClusterState};
use crate::error::Result;
use crate::margin_loss::{
    angular_variant_loss, large_margin_softmax_loss, softmax_loss, uncertainty_weighted_margin_loss, AngularVariant,
    LossResult,
};
use crate::numerics::DenseMatrix;
use crate::uncertainty::DropoutMask;

use super::model::{backward, forward, ForwardCache, MlpModel, ModelGradients};

/// The per-sample loss applied on top of the penultimate feature.
#[derive(Debug, Clone, Copy)]
pub enum SampleObjective<'a> {
    Softmax,
    LargeMargin { m: u32 },
    Weighted { m: u32, ccdf: f64 },
    Angular(AngularVariant),
    /// Softmax plus `weight ×` the clustering loss of this one sample.
    Cluster { state: &'a ClusterState, weight: f64 },
}

pub fn sample_loss(model: &MlpModel, cache: &ForwardCache, y: usize, objective: SampleObjective<'_>) -> Result<LossResult> {
    let state = &model.classifier;
    let f = &cache.feature;
    match objective {
        SampleObjective::Softmax => softmax_loss(state, f, y),
        SampleObjective::LargeMargin { m } => large_margin_softmax_loss(state, f, y, m),
        SampleObjective::Weighted { m, ccdf } => uncertainty_weighted_margin_loss(state, f, y, m, ccdf),
        SampleObjective::Angular(v) => angular_variant_loss(state, f, y, v),
        SampleObjective::Cluster { state: clusters, weight } => {
            let mut r = softmax_loss(state, f, y)?;
            let row = DenseMatrix::from_vec(1, f.len(), f.clone())?;
            let (v, g) = clustering_loss(clusters, &row, &[y])?;
            r.value += weight * v;
            for (a, b) in r.grad_feature.iter_mut().zip(g.row(0)) {
                *a += weight * b;
            }
            Ok(r)
        }
    }
}

/// Forward, per-sample loss and backward for one input under a fixed mask.
pub fn loss_and_gradients(
    model: &MlpModel,
    x: &[f64],
    y: usize,
    mask: Option<&DropoutMask>,
    objective: SampleObjective<'_>,
) -> Result<(f64, ModelGradients)> {
    let cache = forward(model, x, mask)?;
    let loss = sample_loss(model, &cache, y, objective)?;
    let grads = backward(model, &cache, &loss)?;
    Ok((loss.value, grads))
}
