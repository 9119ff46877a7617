//! Dense ReLU network with dropout, manual backprop and the curriculum trainer.

mod model;
mod objective;
mod train;

pub use model::{backward, forward, sgd_step, DenseLayer, ForwardCache, MlpModel, ModelGradients};
pub use objective::{loss_and_gradients, sample_loss, SampleObjective};
pub use train::{
    ensemble_class_uncertainty, evaluate, train, train_with_eval, CenterInit, ClusterConfig, EpochRecord, Evaluation,
    LossKind, Phase, TrainConfig, TrainOutput,
};
