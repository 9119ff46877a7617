use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use umargin_cli::commands;
use umargin_cli::gradsuite::Suite;
use umargin_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "umargin", version, about = "Uncertainty-driven max-margin experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key = value config file; omitted keys take their defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// overrides the seed in the config
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one model; writes config.txt, metrics.csv and model.json
    Train(Common),
    /// Score a saved model on the evaluation set; writes eval.csv
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Per-class ensemble uncertainty on the training set; writes uncertainty.csv
    Uncertainty {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Penultimate 2-D features of the training set; writes features.csv
    Features2d {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Finite-difference check of the analytic gradients
    Gradcheck {
        /// one suite name; all suites when omitted
        #[arg(long)]
        loss: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Decision-boundary shift of plain softmax on imbalanced 1-D Gaussians
    BiasDemo {
        #[arg(long, default_value_t = 10.0)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// also write bias.csv into this directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Seeds x variants x parameter values in parallel; writes sweep.csv
    Sweep(Common),
}

fn run(cmd: Command) -> Result<String, CliError> {
    match cmd {
        Command::Train(c) => commands::cmd_train(&c.load()?, &c.out),
        Command::Eval { common, model } => commands::cmd_eval(&common.load()?, &model, &common.out),
        Command::Uncertainty { common, model } => commands::cmd_uncertainty(&common.load()?, &model, &common.out),
        Command::Features2d { common, model } => commands::cmd_features2d(&common.load()?, &model, &common.out),
        Command::Gradcheck { loss, seed } => {
            let suite = loss.map(|l| l.parse::<Suite>()).transpose()?;
            commands::cmd_gradcheck(suite, seed)
        }
        Command::BiasDemo { ratio, seed, out } => commands::cmd_bias_demo(ratio, seed, out.as_deref()),
        Command::Sweep(c) => commands::cmd_sweep(&c.load()?, &c.out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
