use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cluster_loss::{inter_class_margin_loss, update_centers, ClusterState};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::margin_loss::{AngularVariant, M_MAX};
use crate::metrics::{bca, g_mean, ConfusionCounts};
use crate::numerics::{argmax, DenseMatrix};
use crate::rng::{self, Stream};
use crate::uncertainty::{class_uncertainty_by, mc_uncertainty, sample_ccdf, DropoutMask, EnsembleConfig, UncertaintySummary};

use super::model::{backward, forward, sgd_step, MlpModel, ModelGradients};
use super::objective::{sample_loss, SampleObjective};

const DIVERGENCE_LIMIT: f64 = 1e6;

/// Which loss drives phases 2 and 3 of the curriculum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    Softmax,
    LargeMargin,
    UncertaintyWeighted,
    HybridCluster,
    AngularI,
    AngularII,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::Softmax,
        LossKind::LargeMargin,
        LossKind::UncertaintyWeighted,
        LossKind::HybridCluster,
        LossKind::AngularI,
        LossKind::AngularII,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Softmax => "softmax",
            LossKind::LargeMargin => "large-margin",
            LossKind::UncertaintyWeighted => "uncertainty-weighted",
            LossKind::HybridCluster => "hybrid-cluster",
            LossKind::AngularI => "angular-i",
            LossKind::AngularII => "angular-ii",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Softmax,
    Umm,
    Sum,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Softmax => "softmax",
            Phase::Umm => "umm",
            Phase::Sum => "sum",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CenterInit {
    /// Class means of the deterministic features at the end of phase 1.
    Means,
    /// Standard normal draws from the centres stream.
    Random,
}

impl FromStr for CenterInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "means" => Ok(CenterInit::Means),
            "random" => Ok(CenterInit::Random),
            _ => Err(Error::Config(format!("unknown centre init '{s}'"))),
        }
    }
}

impl fmt::Display for CenterInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CenterInit::Means => "means",
            CenterInit::Random => "random",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub lambda: f64,
    pub s: f64,
    pub alpha: f64,
    /// Weight of the clustering term added to softmax.
    pub weight: f64,
    /// Step size for the inter-class margin gradient on the centres.
    pub center_lr: f64,
    pub init: CenterInit,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            lambda: ClusterState::DEFAULT_LAMBDA,
            s: ClusterState::DEFAULT_SCALE,
            alpha: ClusterState::DEFAULT_ALPHA,
            weight: 0.1,
            center_lr: 0.01,
            init: CenterInit::Means,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub softmax_epochs: usize,
    pub umm_epochs: usize,
    pub sum_epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Also sets the keep probability of training-time dropout.
    pub ensemble: EnsembleConfig,
    pub loss: LossKind,
    pub seed: u64,
    /// Cap on class margins; the fixed margin of the large-margin loss.
    pub max_margin: u32,
    pub cluster: ClusterConfig,
    pub angular_a_i: f64,
    pub angular_a_ii: f64,
    pub uncertainty_summary: UncertaintySummary,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            softmax_epochs: 30,
            umm_epochs: 20,
            sum_epochs: 10,
            learning_rate: 0.05,
            weight_decay: 5e-4,
            batch_size: 32,
            ensemble: EnsembleConfig::default(),
            loss: LossKind::UncertaintyWeighted,
            seed: 0,
            max_margin: 3,
            cluster: ClusterConfig::default(),
            angular_a_i: 2.0,
            angular_a_ii: 3.0,
            uncertainty_summary: UncertaintySummary::TrueClass,
        }
    }
}

impl TrainConfig {
    pub fn total_epochs(&self) -> usize {
        self.softmax_epochs + self.umm_epochs + self.sum_epochs
    }

    pub fn phase_of(&self, epoch: usize) -> Phase {
        if epoch < self.softmax_epochs {
            Phase::Softmax
        } else if epoch < self.softmax_epochs + self.umm_epochs {
            Phase::Umm
        } else {
            Phase::Sum
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_epochs() == 0 {
            return Err(Error::Config("no training epochs".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::Config(format!("weight decay {} must be nonnegative", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(1..=M_MAX).contains(&self.max_margin) {
            return Err(Error::Config(format!("max margin {} outside 1..={M_MAX}", self.max_margin)));
        }
        if !(self.angular_a_i > 0.0 && self.angular_a_ii > 0.0) {
            return Err(Error::Config("angular parameters must be positive".into()));
        }
        if !(self.cluster.weight >= 0.0 && self.cluster.center_lr >= 0.0) {
            return Err(Error::Config("cluster weight and centre rate must be nonnegative".into()));
        }
        self.ensemble.validate()
    }
}

/// One row of the training log. Metrics are on the evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    /// Mean per-sample training loss over the epoch.
    pub loss: f64,
    pub accuracy: f64,
    /// NaN when some class is missing from the evaluation set.
    pub bca: f64,
    pub g_mean: f64,
    pub recall: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: MlpModel,
    pub log: Vec<EpochRecord>,
    /// Final centres when the hybrid loss was used.
    pub cluster: Option<ClusterState>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub predictions: Vec<usize>,
    pub counts: ConfusionCounts,
}

/// Deterministic argmax predictions; ties go to the lowest class.
pub fn evaluate(model: &MlpModel, ds: &Dataset) -> Result<Evaluation> {
    check_dataset(model, ds)?;
    let predictions = (0..ds.len())
        .map(|i| forward(model, ds.sample(i).0, None).map(|c| argmax(&c.logits)))
        .collect::<Result<Vec<_>>>()?;
    let counts = ConfusionCounts::from_predictions(ds.labels(), &predictions, model.num_classes())?;
    Ok(Evaluation { predictions, counts })
}

fn check_dataset(model: &MlpModel, ds: &Dataset) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if ds.dim() != model.input_dim() {
        return Err(Error::Dimension(format!("dataset of width {} for a model expecting {}", ds.dim(), model.input_dim())));
    }
    if ds.num_classes() > model.num_classes() {
        return Err(Error::Label { label: ds.num_classes() as i64 - 1, classes: model.num_classes() });
    }
    Ok(())
}

/// Class uncertainty from an N-pass logit ensemble over every sample.
pub fn ensemble_class_uncertainty(
    model: &MlpModel,
    ds: &Dataset,
    cfg: &EnsembleConfig,
    summary: UncertaintySummary,
    seed: u64,
) -> Result<Vec<f64>> {
    check_dataset(model, ds)?;
    cfg.validate()?;
    let mut rng = rng::stream(seed, Stream::Uncertainty);
    class_uncertainty_with(model, ds, cfg, summary, &mut rng)
}

fn class_uncertainty_with<R: Rng>(
    model: &MlpModel,
    ds: &Dataset,
    cfg: &EnsembleConfig,
    summary: UncertaintySummary,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let widths = model.hidden_widths();
    let mut estimates = Vec::with_capacity(ds.len());
    for i in 0..ds.len() {
        let x = ds.sample(i).0;
        let outputs = (0..cfg.n_passes)
            .map(|_| {
                let mask = DropoutMask::sample(rng, &widths, cfg.keep_prob);
                forward(model, x, Some(&mask)).map(|c| c.logits)
            })
            .collect::<Result<Vec<_>>>()?;
        estimates.push(mc_uncertainty(&outputs, cfg)?);
    }
    class_uncertainty_by(&estimates, ds.labels(), model.num_classes(), summary)
}

fn feature_stack<R: Rng>(model: &MlpModel, x: &[f64], cfg: &EnsembleConfig, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    let widths = model.hidden_widths();
    (0..cfg.n_passes)
        .map(|_| {
            let mask = DropoutMask::sample(rng, &widths, cfg.keep_prob);
            forward(model, x, Some(&mask)).map(|c| c.feature)
        })
        .collect()
}

fn deterministic_features(model: &MlpModel, ds: &Dataset) -> Result<DenseMatrix> {
    let rows = (0..ds.len())
        .map(|i| forward(model, ds.sample(i).0, None).map(|c| c.feature))
        .collect::<Result<Vec<_>>>()?;
    DenseMatrix::from_rows(&rows)
}

fn init_centers(model: &MlpModel, ds: &Dataset, cfg: &TrainConfig) -> Result<ClusterState> {
    let (c, d) = (model.num_classes(), model.feature_dim());
    let mut centers = DenseMatrix::zeros(c, d);
    match cfg.cluster.init {
        CenterInit::Means => {
            let feats = deterministic_features(model, ds)?;
            let mut counts = vec![0usize; c];
            for (i, &y) in ds.labels().iter().enumerate() {
                counts[y] += 1;
                for (a, v) in centers.row_mut(y).iter_mut().zip(feats.row(i)) {
                    *a += v;
                }
            }
            for (k, &n) in counts.iter().enumerate() {
                if n > 0 {
                    centers.row_mut(k).iter_mut().for_each(|v| *v /= n as f64);
                }
            }
        }
        CenterInit::Random => {
            let mut rng = rng::stream(cfg.seed, Stream::Centers);
            centers.as_mut_slice().iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        }
    }
    ClusterState::coupled(centers, cfg.cluster.lambda, cfg.cluster.s, cfg.cluster.alpha)
}

fn epoch_record(model: &MlpModel, eval: &Dataset, epoch: usize, phase: Phase, loss: f64) -> Result<EpochRecord> {
    let ev = evaluate(model, eval)?;
    Ok(EpochRecord {
        epoch,
        phase,
        loss,
        accuracy: ev.counts.accuracy(),
        bca: bca(&ev.counts).unwrap_or(f64::NAN),
        g_mean: g_mean(&ev.counts),
        recall: ev.counts.recalls(),
    })
}

pub fn train(model: MlpModel, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutput> {
    train_with_eval(model, ds, ds, cfg)
}

/// Runs the softmax → UMM → UMM+SUM curriculum, logging metrics on `eval` after every epoch.
pub fn train_with_eval(mut model: MlpModel, ds: &Dataset, eval: &Dataset, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    check_dataset(&model, ds)?;
    check_dataset(&model, eval)?;
    if !model.is_finite() {
        return Err(Error::NonFinite("initial model".into()));
    }

    let mut shuffle_rng = rng::stream(cfg.seed, Stream::Shuffle);
    let mut dropout_rng = rng::stream(cfg.seed, Stream::Dropout);
    let mut uncertainty_rng = rng::stream(cfg.seed, Stream::Uncertainty);
    let widths = model.hidden_widths();
    let keep = cfg.ensemble.keep_prob;
    let fixed_margin = cfg.max_margin;

    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut cluster: Option<ClusterState> = None;
    let mut log = Vec::with_capacity(cfg.total_epochs());

    for epoch in 0..cfg.total_epochs() {
        let phase = cfg.phase_of(epoch);
        let late = phase != Phase::Softmax;

        if late && cfg.loss == LossKind::HybridCluster && cluster.is_none() {
            cluster = Some(init_centers(&model, ds, cfg)?);
        }
        if late && cfg.loss == LossKind::UncertaintyWeighted {
            let u = class_uncertainty_with(&model, ds, &cfg.ensemble, cfg.uncertainty_summary, &mut uncertainty_rng)?;
            model.classifier.refresh_margins(u, cfg.max_margin)?;
        }

        order.shuffle(&mut shuffle_rng);
        let mut total_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = ModelGradients::zeros_like(&model);
            let mut batch_features = Vec::with_capacity(batch.len());
            for &i in batch {
                let (x, y) = ds.sample(i);
                let mask = DropoutMask::sample(&mut dropout_rng, &widths, keep);
                let cache = forward(&model, x, Some(&mask))?;
                let objective = match (phase, cfg.loss) {
                    (Phase::Softmax, _) | (_, LossKind::Softmax) => SampleObjective::Softmax,
                    (_, LossKind::LargeMargin) => SampleObjective::LargeMargin { m: fixed_margin },
                    (Phase::Umm, LossKind::UncertaintyWeighted) => {
                        SampleObjective::LargeMargin { m: model.classifier.margins()[y] }
                    }
                    (_, LossKind::UncertaintyWeighted) => {
                        let stack = feature_stack(&model, x, &cfg.ensemble, &mut uncertainty_rng)?;
                        let ccdf = sample_ccdf(&model.classifier, &stack, y)?;
                        SampleObjective::Weighted { m: model.classifier.margins()[y], ccdf }
                    }
                    (_, LossKind::HybridCluster) => SampleObjective::Cluster {
                        state: cluster.as_ref().expect("centres initialised"),
                        weight: cfg.cluster.weight,
                    },
                    (_, LossKind::AngularI) => SampleObjective::Angular(AngularVariant::Scaled(cfg.angular_a_i)),
                    (_, LossKind::AngularII) => SampleObjective::Angular(AngularVariant::HalfAngle(cfg.angular_a_ii)),
                };
                // a feature killed by ReLU or dropout has no angle
                let loss = match sample_loss(&model, &cache, y, objective) {
                    Err(Error::DegenerateNorm(_)) => sample_loss(&model, &cache, y, SampleObjective::Softmax)?,
                    other => other?,
                };
                if !loss.value.is_finite() || loss.value > DIVERGENCE_LIMIT {
                    return Err(Error::Divergence { epoch, loss: loss.value });
                }
                total_loss += loss.value;
                let g = backward(&model, &cache, &loss)?;
                grads.add_scaled(&g, 1.0);
                if cluster.is_some() {
                    batch_features.push(cache.feature);
                }
            }
            grads.scale(1.0 / batch.len() as f64);
            sgd_step(&mut model, &grads, cfg.learning_rate, cfg.weight_decay);

            if let Some(state) = cluster.as_mut() {
                let labels: Vec<usize> = batch.iter().map(|&i| ds.labels()[i]).collect();
                let feats = DenseMatrix::from_rows(&batch_features)?;
                let mut next = update_centers(state, &feats, &labels)?;
                let (_, g) = inter_class_margin_loss(&next)?;
                next.centers.add_scaled(&g, -cfg.cluster.center_lr);
                *state = next;
            }
        }

        let mean_loss = total_loss / ds.len() as f64;
        if !model.is_finite() || !mean_loss.is_finite() || mean_loss > DIVERGENCE_LIMIT {
            return Err(Error::Divergence { epoch, loss: mean_loss });
        }
        log.push(epoch_record(&model, eval, epoch, phase, mean_loss)?);
    }
    Ok(TrainOutput { model, log, cluster })
}
