//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use umargin_core::data::{gaussian_blobs, gaussian_blobs_from, imbalance_subsample, load_csv, load_csv_with_classes, long_tail_specs};
use umargin_core::network::{CenterInit, ClusterConfig};
use umargin_core::rng::{self, Stream};
use umargin_core::{BlobSpec, Dataset, EnsembleConfig, LossKind, MlpModel, TrainConfig, UncertaintySummary};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Blobs,
    Csv,
}

/// Every knob of a run. Field names match the config keys.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DataSource,
    pub train_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
    pub classes: usize,
    pub head: usize,
    pub decay: f64,
    pub radius: f64,
    pub std: f64,
    pub minority_drop: f64,
    pub minority_classes: Vec<usize>,
    pub test_per_class: usize,
    pub hidden: Vec<usize>,
    pub softmax_epochs: usize,
    pub umm_epochs: usize,
    pub sum_epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub n_passes: usize,
    pub keep_prob: f64,
    pub precision: f64,
    pub loss: LossKind,
    pub max_margin: u32,
    pub uncertainty_summary: UncertaintySummary,
    pub lambda: f64,
    pub s: f64,
    pub alpha: f64,
    pub cluster_weight: f64,
    pub center_lr: f64,
    pub center_init: CenterInit,
    pub angular_a_i: f64,
    pub angular_a_ii: f64,
    pub sweep_seeds: usize,
    pub sweep_variants: Vec<String>,
    pub sweep_param: Option<String>,
    pub sweep_values: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            seed: 0,
            dataset: DataSource::Blobs,
            train_csv: None,
            test_csv: None,
            classes: 10,
            head: 1000,
            decay: 0.5,
            radius: 5.0,
            std: 1.0,
            minority_drop: 0.0,
            minority_classes: Vec::new(),
            test_per_class: 200,
            hidden: vec![32, 32],
            softmax_epochs: t.softmax_epochs,
            umm_epochs: t.umm_epochs,
            sum_epochs: t.sum_epochs,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            n_passes: t.ensemble.n_passes,
            keep_prob: t.ensemble.keep_prob,
            precision: t.ensemble.precision,
            loss: t.loss,
            max_margin: t.max_margin,
            uncertainty_summary: t.uncertainty_summary,
            lambda: t.cluster.lambda,
            s: t.cluster.s,
            alpha: t.cluster.alpha,
            cluster_weight: t.cluster.weight,
            center_lr: t.cluster.center_lr,
            center_init: t.cluster.init,
            angular_a_i: t.angular_a_i,
            angular_a_ii: t.angular_a_ii,
            sweep_seeds: 10,
            sweep_variants: ["softmax", "umm", "umm+sum", "hybrid"].map(String::from).to_vec(),
            sweep_param: None,
            sweep_values: Vec::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("invalid value '{value}' for key '{key}'")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| parse(key, v))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn path_text(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parses `key = value` lines over the defaults; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "dataset" => {
                self.dataset = match value {
                    "blobs" => DataSource::Blobs,
                    "csv" => DataSource::Csv,
                    _ => return Err(CliError::Config(format!("invalid value '{value}' for key 'dataset'"))),
                }
            }
            "train_csv" => self.train_csv = (!value.is_empty()).then(|| PathBuf::from(value)),
            "test_csv" => self.test_csv = (!value.is_empty()).then(|| PathBuf::from(value)),
            "classes" => self.classes = parse(key, value)?,
            "head" => self.head = parse(key, value)?,
            "decay" => self.decay = parse(key, value)?,
            "radius" => self.radius = parse(key, value)?,
            "std" => self.std = parse(key, value)?,
            "minority_drop" => self.minority_drop = parse(key, value)?,
            "minority_classes" => self.minority_classes = parse_list(key, value)?,
            "test_per_class" => self.test_per_class = parse(key, value)?,
            "hidden" => self.hidden = parse_list(key, value)?,
            "softmax_epochs" => self.softmax_epochs = parse(key, value)?,
            "umm_epochs" => self.umm_epochs = parse(key, value)?,
            "sum_epochs" => self.sum_epochs = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "n_passes" => self.n_passes = parse(key, value)?,
            "keep_prob" => self.keep_prob = parse(key, value)?,
            "precision" => self.precision = parse(key, value)?,
            "loss" => self.loss = parse(key, value)?,
            "max_margin" => self.max_margin = parse(key, value)?,
            "uncertainty_summary" => self.uncertainty_summary = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "s" => self.s = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "cluster_weight" => self.cluster_weight = parse(key, value)?,
            "center_lr" => self.center_lr = parse(key, value)?,
            "center_init" => self.center_init = parse(key, value)?,
            "angular_a_i" => self.angular_a_i = parse(key, value)?,
            "angular_a_ii" => self.angular_a_ii = parse(key, value)?,
            "sweep_seeds" => self.sweep_seeds = parse(key, value)?,
            "sweep_variants" => self.sweep_variants = parse_list(key, value)?,
            "sweep_param" => self.sweep_param = (!value.is_empty()).then(|| value.to_string()),
            "sweep_values" => self.sweep_values = parse_list(key, value)?,
            _ => return Err(CliError::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("seed", self.seed.to_string()),
            ("dataset", match self.dataset { DataSource::Blobs => "blobs", DataSource::Csv => "csv" }.to_string()),
            ("train_csv", path_text(&self.train_csv)),
            ("test_csv", path_text(&self.test_csv)),
            ("classes", self.classes.to_string()),
            ("head", self.head.to_string()),
            ("decay", self.decay.to_string()),
            ("radius", self.radius.to_string()),
            ("std", self.std.to_string()),
            ("minority_drop", self.minority_drop.to_string()),
            ("minority_classes", join(&self.minority_classes)),
            ("test_per_class", self.test_per_class.to_string()),
            ("hidden", join(&self.hidden)),
            ("softmax_epochs", self.softmax_epochs.to_string()),
            ("umm_epochs", self.umm_epochs.to_string()),
            ("sum_epochs", self.sum_epochs.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("n_passes", self.n_passes.to_string()),
            ("keep_prob", self.keep_prob.to_string()),
            ("precision", self.precision.to_string()),
            ("loss", self.loss.to_string()),
            ("max_margin", self.max_margin.to_string()),
            ("uncertainty_summary", self.uncertainty_summary.to_string()),
            ("lambda", self.lambda.to_string()),
            ("s", self.s.to_string()),
            ("alpha", self.alpha.to_string()),
            ("cluster_weight", self.cluster_weight.to_string()),
            ("center_lr", self.center_lr.to_string()),
            ("center_init", self.center_init.to_string()),
            ("angular_a_i", self.angular_a_i.to_string()),
            ("angular_a_ii", self.angular_a_ii.to_string()),
            ("sweep_seeds", self.sweep_seeds.to_string()),
            ("sweep_variants", join(&self.sweep_variants)),
            ("sweep_param", self.sweep_param.clone().unwrap_or_default()),
            ("sweep_values", join(&self.sweep_values)),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            softmax_epochs: self.softmax_epochs,
            umm_epochs: self.umm_epochs,
            sum_epochs: self.sum_epochs,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            ensemble: self.ensemble(),
            loss: self.loss,
            seed: self.seed,
            max_margin: self.max_margin,
            cluster: ClusterConfig {
                lambda: self.lambda,
                s: self.s,
                alpha: self.alpha,
                weight: self.cluster_weight,
                center_lr: self.center_lr,
                init: self.center_init,
            },
            angular_a_i: self.angular_a_i,
            angular_a_ii: self.angular_a_ii,
            uncertainty_summary: self.uncertainty_summary,
        }
    }

    pub fn ensemble(&self) -> EnsembleConfig {
        EnsembleConfig { n_passes: self.n_passes, keep_prob: self.keep_prob, precision: self.precision }
    }

    /// Rejects combinations the trainer would only discover late.
    pub fn validate(&self) -> Result<(), CliError> {
        self.train_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(CliError::Config("hidden widths must be a nonempty list of positive integers".into()));
        }
        if self.dataset == DataSource::Blobs {
            if self.classes < 2 {
                return Err(CliError::Config("classes must be at least 2".into()));
            }
            if let Some(&k) = self.minority_classes.iter().find(|&&k| k >= self.classes) {
                return Err(CliError::Config(format!("minority class {k} out of range for {} classes", self.classes)));
            }
        } else if self.train_csv.is_none() {
            return Err(CliError::Config("dataset = csv needs train_csv".into()));
        }
        if !(0.0..1.0).contains(&self.minority_drop) {
            return Err(CliError::Config(format!("minority_drop {} outside [0, 1)", self.minority_drop)));
        }
        Ok(())
    }

    fn specs(&self, count: Option<usize>) -> Vec<BlobSpec> {
        let mut specs = long_tail_specs(self.classes, self.head, self.decay, self.radius, self.std);
        if let Some(n) = count {
            specs.iter_mut().for_each(|s| s.count = n);
        }
        specs
    }

    /// Training and evaluation sets. Synthetic test sets are class-balanced.
    pub fn datasets(&self) -> Result<(Dataset, Dataset), CliError> {
        match self.dataset {
            DataSource::Blobs => {
                let full = gaussian_blobs(&self.specs(None), self.seed)?;
                let train = if self.minority_drop > 0.0 && !self.minority_classes.is_empty() {
                    imbalance_subsample(&full, self.minority_drop, &self.minority_classes, self.seed)?
                } else {
                    full
                };
                let test = gaussian_blobs_from(&self.specs(Some(self.test_per_class)), &mut rng::stream(self.seed, Stream::Test))?;
                Ok((train, test))
            }
            DataSource::Csv => {
                let path = self.train_csv.as_ref().ok_or_else(|| CliError::Config("dataset = csv needs train_csv".into()))?;
                let train = load_csv(path)?;
                let test = match &self.test_csv {
                    Some(p) => load_csv_with_classes(p, train.num_classes())?,
                    None => train.clone(),
                };
                Ok((train, test))
            }
        }
    }

    pub fn build_model(&self, input_dim: usize, num_classes: usize) -> Result<MlpModel, CliError> {
        Ok(MlpModel::new(input_dim, &self.hidden, num_classes, self.seed)?)
    }
}
