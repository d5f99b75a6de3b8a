mod commands;
mod config;
mod error;
mod pipeline;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{RunConfig, VariantChoice};
use crate::error::Result;

/// Koopman autoencoders: training, evaluation, data assimilation and
/// ablation grids.
#[derive(Parser, Debug)]
#[command(name = "aikae", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model; writes a checkpoint, the per-epoch log and a summary.
    Train(commands::train::TrainArgs),
    /// Test-split metrics per horizon, with persistence and linear baselines.
    Eval(commands::eval::EvalArgs),
    /// Fit the initial latent state to observations and forecast from it.
    Assimilate(commands::assimilate::AssimilateArgs),
    /// Finite-difference check of every loss term and the assimilation cost.
    Gradcheck(commands::gradcheck::GradcheckArgs),
    /// Run a grid of training configurations into one table.
    Ablate(commands::ablate::AblateArgs),
    /// Write a synthetic dataset as CSV.
    Synth(commands::synth::SynthArgs),
}

/// Options every command accepts. Flags override the config file.
#[derive(Args, Debug, Default, Clone)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Output directory (default `runs/<command>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset CSV; replaces any synthetic dataset from the config.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<VariantChoice>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub w: Option<usize>,
    #[arg(long)]
    pub revin: Option<bool>,
    /// Lookback length.
    #[arg(long)]
    pub tl: Option<usize>,
    /// Prediction lengths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub tp: Option<Vec<usize>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub tau_max: Option<usize>,
    /// Weight of the augmentation residual in the linearity loss.
    #[arg(long)]
    pub alpha: Option<f64>,
}

impl Common {
    /// Config file (or defaults) with the flags applied on top.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($flag:expr, $field:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        set!(self.seed, cfg.seed);
        set!(self.variant, cfg.model.variant);
        set!(self.p, cfg.model.p);
        set!(self.k, cfg.model.k);
        set!(self.w, cfg.model.w);
        set!(self.revin, cfg.model.revin);
        set!(self.tl, cfg.data.t_l);
        set!(self.tp, cfg.data.t_p);
        set!(self.epochs, cfg.train.epochs);
        set!(self.lr, cfg.train.lr);
        set!(self.batch_size, cfg.train.batch_size);
        set!(self.tau_max, cfg.train.tau_max);
        set!(self.alpha, cfg.loss.alpha);
        if let Some(out) = &self.out {
            cfg.out_dir = Some(out.clone());
        }
        if let Some(path) = &self.data {
            cfg.data.path = Some(path.clone());
            cfg.data.synthetic = None;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => commands::train::run(&a),
        Command::Eval(a) => commands::eval::run(&a),
        Command::Assimilate(a) => commands::assimilate::run(&a),
        Command::Gradcheck(a) => commands::gradcheck::run(&a),
        Command::Ablate(a) => commands::ablate::run(&a),
        Command::Synth(a) => commands::synth::run(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
