//! Uncertainty-driven max-margin learning for class-imbalanced classification.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: dense containers, the error function, Chebyshev evaluation
//!   of `cos(m·α)` and a stable log-sum-exp.
//! - [`margin_loss`]: softmax, the angular-margin softmax built on ψ(·), the
//!   misclassification-weighted variant and the two direct angular variants.
//! - [`cluster_loss`]: clustering loss with a cluster-sample margin, moving
//!   average centre updates and the inter-class margin loss.
//! - [`uncertainty`]: Monte-Carlo dropout ensembles, class-level uncertainty
//!   and the per-sample misclassification probability.
//! - [`network`]: a small ReLU/dropout MLP with manual backprop and the
//!   softmax → UMM → UMM+SUM curriculum trainer.
//! - [`data`], [`metrics`], [`gradcheck`]: datasets, imbalance-aware metrics
//!   and the finite-difference oracle.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cluster_loss;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod margin_loss;
pub mod metrics;
pub mod network;
pub mod numerics;
pub mod rng;
pub mod uncertainty;

pub use cluster_loss::ClusterState;
pub use data::{BlobSpec, Dataset};
pub use error::{Error, Result};
pub use margin_loss::{ClassifierState, LossResult, M_MAX};
pub use metrics::ConfusionCounts;
pub use network::{LossKind, MlpModel, TrainConfig};
pub use numerics::{DenseMatrix, DenseVector};
pub use uncertainty::{EnsembleConfig, UncertaintyEstimate, UncertaintySummary};
