//! The subcommands. Each returns its report text; `main` prints it.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use umargin_core::data::boundary_bias_demo;
use umargin_core::metrics::{bca, g_mean, iba, per_class_stddev, precision_recall_f1, DEFAULT_IBA_ALPHA};
use umargin_core::network::{ensemble_class_uncertainty, evaluate, forward, train_with_eval, EpochRecord, TrainOutput};
use umargin_core::{ClusterState, ConfusionCounts, Dataset, LossKind, MlpModel};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::gradsuite::{self, Suite};
use crate::output::{write_atomic, write_csv};

/// What `train` stores in `model.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub model: MlpModel,
    pub cluster: Option<ClusterState>,
}

impl ModelFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

fn num(v: f64) -> String {
    v.to_string()
}

fn metrics_header(classes: usize) -> Vec<String> {
    let mut h: Vec<String> = ["epoch", "phase", "loss", "accuracy", "bca", "g_mean"].map(String::from).to_vec();
    h.extend((0..classes).map(|k| format!("recall_{k}")));
    h
}

fn metrics_row(r: &EpochRecord) -> Vec<String> {
    let mut row = vec![r.epoch.to_string(), r.phase.to_string(), num(r.loss), num(r.accuracy), num(r.bca), num(r.g_mean)];
    row.extend(r.recall.iter().map(|&v| num(v)));
    row
}

fn run_training(cfg: &RunConfig) -> Result<(TrainOutput, Dataset, Dataset), CliError> {
    cfg.validate()?;
    let (train, test) = cfg.datasets()?;
    let model = cfg.build_model(train.dim(), train.num_classes())?;
    let out = train_with_eval(model, &train, &test, &cfg.train_config())?;
    Ok((out, train, test))
}

/// Trains one model and writes `config.txt`, `metrics.csv` and `model.json` under `out`.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    cfg.validate()?;
    write_atomic(&out.join("config.txt"), cfg.to_text().as_bytes())?;
    let (result, train, _) = run_training(cfg)?;
    let rows: Vec<_> = result.log.iter().map(metrics_row).collect();
    write_csv(&out.join("metrics.csv"), &metrics_header(train.num_classes()), &rows)?;
    let file = ModelFile { model: result.model, cluster: result.cluster };
    write_atomic(&out.join("model.json"), &serde_json::to_vec(&file)?)?;
    let last = result.log.last().expect("validated configs train at least one epoch");
    Ok(format!(
        "trained {} epochs with {}: accuracy {:.4}, bca {:.4}, g-mean {:.4}\n",
        result.log.len(),
        cfg.loss,
        last.accuracy,
        last.bca,
        last.g_mean
    ))
}

fn metric_rows(counts: &ConfusionCounts) -> Vec<(String, f64)> {
    let prf = precision_recall_f1(counts);
    let recalls = counts.recalls();
    let mut rows = vec![
        ("accuracy".to_string(), counts.accuracy()),
        ("bca".to_string(), bca(counts).unwrap_or(f64::NAN)),
        ("g_mean".to_string(), g_mean(counts)),
        ("macro_precision".to_string(), prf.macro_precision),
        ("macro_recall".to_string(), prf.macro_recall),
        ("macro_f1".to_string(), prf.macro_f1),
        ("iba".to_string(), iba(counts, DEFAULT_IBA_ALPHA)),
        ("recall_stddev".to_string(), per_class_stddev(&recalls)),
    ];
    rows.extend(recalls.iter().enumerate().map(|(k, &r)| (format!("recall_{k}"), r)));
    rows
}

/// Scores a saved model on the configured evaluation set and writes `eval.csv`.
pub fn cmd_eval(cfg: &RunConfig, model: &Path, out: &Path) -> Result<String, CliError> {
    cfg.validate()?;
    let file = ModelFile::load(model)?;
    let (_, test) = cfg.datasets()?;
    let ev = evaluate(&file.model, &test)?;
    let rows = metric_rows(&ev.counts);
    let csv_rows: Vec<_> = rows.iter().map(|(k, v)| vec![k.clone(), num(*v)]).collect();
    write_csv(&out.join("eval.csv"), &["metric".into(), "value".into()], &csv_rows)?;
    let mut text = String::new();
    for (k, v) in &rows {
        writeln!(text, "{k:<16} {v:.4}").expect("string write");
    }
    Ok(text)
}

/// Per-class ensemble uncertainty of a saved model on the training set.
pub fn cmd_uncertainty(cfg: &RunConfig, model: &Path, out: &Path) -> Result<String, CliError> {
    cfg.validate()?;
    let file = ModelFile::load(model)?;
    let (train, _) = cfg.datasets()?;
    let u = ensemble_class_uncertainty(&file.model, &train, &cfg.ensemble(), cfg.uncertainty_summary, cfg.seed)?;
    let mut rows = Vec::new();
    let mut text = String::from("class  count  frequency  uncertainty\n");
    for (k, &uk) in u.iter().enumerate() {
        let (count, freq) = (train.class_counts()[k], train.class_frequencies()[k]);
        rows.push(vec![k.to_string(), count.to_string(), num(freq), num(uk)]);
        writeln!(text, "{k:>5}  {count:>5}  {freq:>9.4}  {uk:.6}").expect("string write");
    }
    let header = ["class", "count", "frequency", "mean_uncertainty"].map(String::from);
    write_csv(&out.join("uncertainty.csv"), &header, &rows)?;
    Ok(text)
}

/// Deterministic penultimate features of the training set, for models with a 2-wide last hidden layer.
pub fn cmd_features2d(cfg: &RunConfig, model: &Path, out: &Path) -> Result<String, CliError> {
    cfg.validate()?;
    let file = ModelFile::load(model)?;
    if file.model.feature_dim() != 2 {
        return Err(CliError::Config(format!("features2d needs a last hidden width of 2, model has {}", file.model.feature_dim())));
    }
    let (train, _) = cfg.datasets()?;
    let rows = (0..train.len())
        .map(|i| {
            let (x, y) = train.sample(i);
            let c = forward(&file.model, x, None)?;
            Ok(vec![num(c.feature[0]), num(c.feature[1]), y.to_string()])
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    write_csv(&out.join("features.csv"), &["x".into(), "y".into(), "label".into()], &rows)?;
    Ok(format!("wrote {} features\n", rows.len()))
}

/// Runs one suite, or all of them when `loss` is `None`. Fails if any suite fails.
pub fn cmd_gradcheck(loss: Option<Suite>, seed: u64) -> Result<String, CliError> {
    let suites = loss.map_or(Suite::ALL.to_vec(), |s| vec![s]);
    let mut text = String::new();
    let mut failed = Vec::new();
    for s in suites {
        let r = gradsuite::run(s, seed);
        writeln!(text, "{:<22} {}", s.name(), r).expect("string write");
        if !r.passed {
            failed.push(s.name());
        }
    }
    if failed.is_empty() {
        Ok(text)
    } else {
        print!("{text}");
        Err(CliError::Failed(format!("gradient check failed for {}", failed.join(", "))))
    }
}

pub fn cmd_bias_demo(ratio: f64, seed: u64, out: Option<&Path>) -> Result<String, CliError> {
    let r = boundary_bias_demo(ratio, seed)?;
    let fields = [
        ("imbalance_ratio", r.imbalance_ratio),
        ("majority_count", r.majority_count as f64),
        ("minority_count", r.minority_count as f64),
        ("learned_threshold", r.learned_threshold),
        ("optimal_threshold", r.optimal_threshold),
        ("prior_threshold", r.prior_threshold),
        ("offset", r.offset()),
        ("learned_balanced_error", r.learned_balanced_error),
        ("optimal_balanced_error", r.optimal_balanced_error),
    ];
    if let Some(dir) = out {
        let rows: Vec<_> = fields.iter().map(|(k, v)| vec![k.to_string(), num(*v)]).collect();
        write_csv(&dir.join("bias.csv"), &["quantity".into(), "value".into()], &rows)?;
    }
    let mut text = String::new();
    for (k, v) in fields {
        writeln!(text, "{k:<24} {v:.6}").expect("string write");
    }
    writeln!(text, "boundary moved toward minority: {}", r.toward_minority()).expect("string write");
    Ok(text)
}

/// Applies a sweep variant to a copy of the config.
pub fn apply_variant(cfg: &RunConfig, variant: &str) -> Result<RunConfig, CliError> {
    let mut c = cfg.clone();
    match variant {
        "umm" => {
            c.loss = LossKind::UncertaintyWeighted;
            c.umm_epochs += c.sum_epochs;
            c.sum_epochs = 0;
        }
        "umm+sum" => c.loss = LossKind::UncertaintyWeighted,
        "hybrid" => c.loss = LossKind::HybridCluster,
        other => c.loss = other.parse()?,
    }
    Ok(c)
}

pub const SWEEP_METRICS: [&str; 5] = ["accuracy", "bca", "g_mean", "macro_f1", "minority_recall"];

/// Minority classes: the configured ones, else the rarest training class.
fn minority_classes(cfg: &RunConfig, train: &Dataset) -> Vec<usize> {
    if !cfg.minority_classes.is_empty() {
        return cfg.minority_classes.clone();
    }
    let counts = train.class_counts();
    let rarest = (0..counts.len()).min_by_key(|&k| counts[k]).unwrap_or(0);
    vec![rarest]
}

/// Trains one sweep cell and returns the [`SWEEP_METRICS`] on the evaluation set.
pub fn sweep_cell(cfg: &RunConfig) -> Result<Vec<f64>, CliError> {
    let (out, train, test) = run_training(cfg)?;
    let counts = evaluate(&out.model, &test)?.counts;
    let recalls = counts.recalls();
    let minority = minority_classes(cfg, &train);
    let minority_recall = minority.iter().map(|&k| recalls[k]).sum::<f64>() / minority.len() as f64;
    Ok(vec![
        counts.accuracy(),
        bca(&counts).unwrap_or(f64::NAN),
        g_mean(&counts),
        precision_recall_f1(&counts).macro_f1,
        minority_recall,
    ])
}

/// One row of `sweep.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub seed: u64,
    pub variant: String,
    pub param_value: String,
    pub metrics: Vec<f64>,
}

/// Seeds × variants × parameter values, trained in parallel; results come back in job order.
pub fn run_sweep(cfg: &RunConfig) -> Result<Vec<SweepRecord>, CliError> {
    cfg.validate()?;
    let values = match &cfg.sweep_param {
        Some(_) if cfg.sweep_values.is_empty() => return Err(CliError::Config("sweep_param needs sweep_values".into())),
        Some(_) => cfg.sweep_values.clone(),
        None => vec![String::new()],
    };
    let mut jobs = Vec::new();
    for seed in cfg.seed..cfg.seed + cfg.sweep_seeds as u64 {
        for variant in &cfg.sweep_variants {
            for value in &values {
                let mut c = apply_variant(cfg, variant)?;
                if let Some(p) = &cfg.sweep_param {
                    c.set(p, value)?;
                }
                c.seed = seed;
                c.validate()?;
                jobs.push((seed, variant.clone(), value.clone(), c));
            }
        }
    }
    jobs.into_par_iter()
        .map(|(seed, variant, param_value, c)| {
            Ok(SweepRecord { seed, variant, param_value, metrics: sweep_cell(&c)? })
        })
        .collect()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (mean, per_class_stddev(xs))
}

pub fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    write_atomic(&out.join("config.txt"), cfg.to_text().as_bytes())?;
    let records = run_sweep(cfg)?;
    let mut rows = Vec::new();
    for r in &records {
        for (m, v) in SWEEP_METRICS.iter().zip(&r.metrics) {
            rows.push(vec![r.seed.to_string(), r.variant.clone(), r.param_value.clone(), m.to_string(), num(*v)]);
        }
    }
    // summaries keep first-seen order of (variant, value)
    let mut groups: Vec<(String, String)> = Vec::new();
    for r in &records {
        let key = (r.variant.clone(), r.param_value.clone());
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    let mut text = String::from("variant          value    metric            mean      std\n");
    for (variant, value) in &groups {
        for (i, m) in SWEEP_METRICS.iter().enumerate() {
            let xs: Vec<f64> = records
                .iter()
                .filter(|r| &r.variant == variant && &r.param_value == value)
                .map(|r| r.metrics[i])
                .collect();
            let (mean, std) = mean_std(&xs);
            rows.push(vec!["mean".into(), variant.clone(), value.clone(), m.to_string(), num(mean)]);
            rows.push(vec!["std".into(), variant.clone(), value.clone(), m.to_string(), num(std)]);
            writeln!(text, "{variant:<16} {value:<8} {m:<16} {mean:>8.4} {std:>8.4}").expect("string write");
        }
    }
    let header = ["seed", "variant", "param_value", "metric", "value"].map(String::from);
    write_csv(&out.join("sweep.csv"), &header, &rows)?;
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        RunConfig::parse(
            "classes = 3\nhead = 60\ndecay = 0.5\nradius = 4\ntest_per_class = 20\nhidden = 8,2\n\
             softmax_epochs = 3\numm_epochs = 2\nsum_epochs = 1\nn_passes = 5\nsweep_seeds = 2\n",
        )
        .unwrap()
    }

    #[test]
    fn variants_rewrite_the_curriculum() {
        let cfg = tiny();
        let umm = apply_variant(&cfg, "umm").unwrap();
        assert_eq!((umm.umm_epochs, umm.sum_epochs), (3, 0));
        assert_eq!(apply_variant(&cfg, "hybrid").unwrap().loss, LossKind::HybridCluster);
        assert_eq!(apply_variant(&cfg, "angular-i").unwrap().loss, LossKind::AngularI);
        assert!(apply_variant(&cfg, "bogus").is_err());
    }

    #[test]
    fn train_eval_features_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny();
        cmd_train(&cfg, dir.path()).unwrap();
        let model = dir.path().join("model.json");
        cmd_eval(&cfg, &model, dir.path()).unwrap();
        cmd_uncertainty(&cfg, &model, dir.path()).unwrap();
        cmd_features2d(&cfg, &model, dir.path()).unwrap();
        let eval = fs::read_to_string(dir.path().join("eval.csv")).unwrap();
        assert!(eval.starts_with("metric,value\naccuracy,"));
        let feats = fs::read_to_string(dir.path().join("features.csv")).unwrap();
        assert_eq!(feats.lines().count(), 1 + 60 + 30 + 15);
    }

    #[test]
    fn features2d_rejects_wide_models() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny();
        cfg.hidden = vec![8, 4];
        cmd_train(&cfg, dir.path()).unwrap();
        let err = cmd_features2d(&cfg, &dir.path().join("model.json"), dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn sweep_is_ordered_and_reproducible() {
        let mut cfg = tiny();
        cfg.sweep_variants = vec!["softmax".into(), "umm+sum".into()];
        cfg.sweep_param = Some("keep_prob".into());
        cfg.sweep_values = vec!["0.5".into(), "0.7".into()];
        let a = run_sweep(&cfg).unwrap();
        assert_eq!(a.len(), 2 * 2 * 2);
        assert_eq!((a[1].variant.as_str(), a[1].param_value.as_str()), ("softmax", "0.7"));
        assert_eq!(a, run_sweep(&cfg).unwrap());
    }
}
