//! Run configuration: one TOML file with sections, every field defaulted,
//! unknown keys rejected. Command-line flags are applied on top.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use aikae::assimilation::Constraint;
use aikae::data::SyntheticSpec;
use aikae::models::{ModelConfig, Variant};
use aikae::training::{LossWeights, OrthMode, TrainConfig};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Every random draw of a run derives from this seed.
    pub seed: u64,
    /// Defaults to `runs/<command>`.
    pub out_dir: Option<PathBuf>,
    pub data: DataSection,
    pub model: ModelSection,
    pub loss: LossWeights,
    pub train: TrainSection,
    pub assimilate: AssimilateSection,
    pub gradcheck: GradcheckSection,
    pub synth: SynthSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: None,
            data: DataSection::default(),
            model: ModelSection::default(),
            loss: LossWeights::default(),
            train: TrainSection::default(),
            assimilate: AssimilateSection::default(),
            gradcheck: GradcheckSection::default(),
            synth: SynthSection::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataMode {
    /// Channel-independent univariate windows; the model state is a block of
    /// `t_l` consecutive values.
    #[default]
    Delayed,
    /// The model state is one row of the dataset (all channels).
    States,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// CSV file; relative paths resolve against the config file.
    pub path: Option<PathBuf>,
    /// Generated dataset, used when `path` is unset.
    pub synthetic: Option<SyntheticSpec>,
    /// Rows to generate for synthetic data.
    pub length: usize,
    /// `[train, val, test]` row counts; the default is 70/10/20.
    pub splits: Option<[usize; 3]>,
    /// Standardize every channel with train-split statistics.
    pub normalize: bool,
    pub mode: DataMode,
    pub t_l: usize,
    /// Evaluation horizons.
    pub t_p: Vec<usize>,
    pub stride: usize,
    /// States mode only: append forward differences to each state.
    pub derivative: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            path: None,
            synthetic: None,
            length: 2000,
            splits: None,
            normalize: true,
            mode: DataMode::Delayed,
            t_l: 96,
            t_p: vec![96],
            stride: 1,
            derivative: false,
        }
    }
}

/// Model variants as named on the command line. `linear` is an IKAE with
/// no coupling layers, i.e. a plain linear map on the delay block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum VariantChoice {
    Kae,
    Ikae,
    IkaeZp,
    Aikae,
    Linear,
}

impl VariantChoice {
    pub fn variant(self) -> Variant {
        match self {
            VariantChoice::Kae => Variant::Kae,
            VariantChoice::Ikae | VariantChoice::Linear => Variant::Ikae,
            VariantChoice::IkaeZp => Variant::IkaeZp,
            VariantChoice::Aikae => Variant::Aikae,
        }
    }
}

impl fmt::Display for VariantChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VariantChoice::Linear => f.write_str("linear"),
            v => write!(f, "{}", v.variant()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub variant: VariantChoice,
    /// Augmentation (AIKAE) or padding (IKAE-zp) size.
    pub p: usize,
    pub k: usize,
    pub w: usize,
    pub chi_hidden: Vec<usize>,
    pub kae_hidden: Vec<usize>,
    /// KAE latent size; defaults to `n + p`.
    pub latent_dim: Option<usize>,
    pub revin: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            variant: VariantChoice::Aikae,
            p: 8,
            k: 4,
            w: 256,
            chi_hidden: vec![256, 128],
            kae_hidden: vec![256, 128],
            latent_dim: None,
            revin: true,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, n: usize, delay: usize) -> ModelConfig {
        let k = if self.variant == VariantChoice::Linear { 0 } else { self.k };
        let mut cfg = ModelConfig::new(self.variant.variant(), n, self.p)
            .with_flow(k, self.w)
            .with_chi_hidden(self.chi_hidden.clone())
            .with_revin(self.revin)
            .with_delay(delay);
        cfg.kae_hidden = self.kae_hidden.clone();
        cfg.latent_dim = self.latent_dim.unwrap_or(n + self.p);
        cfg
    }
}

/// Optimizer and schedule; the seed lives at the top level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub tau_max: usize,
    /// Global gradient-norm clip; 0 disables it.
    pub clip: f64,
    pub orth_mode: OrthMode,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            epochs: t.epochs,
            tau_max: t.tau_max,
            clip: t.clip.unwrap_or(0.0),
            orth_mode: t.orth_mode,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            tau_max: self.tau_max,
            seed,
            clip: (self.clip > 0.0).then_some(self.clip),
            orth_mode: self.orth_mode,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssimilateSection {
    pub lr: f64,
    pub steps: usize,
    pub grad_tol: f64,
    pub constraint: Constraint,
    /// Steps forecast after the last assimilated time; 0 writes no forecast.
    pub horizon: usize,
    /// Assimilate rows up to this time and score the later observed rows.
    pub until: Option<usize>,
}

impl Default for AssimilateSection {
    fn default() -> Self {
        let s = aikae::assimilation::AssimilationSettings::default();
        Self {
            lr: s.lr,
            steps: s.steps,
            grad_tol: s.grad_tol,
            constraint: Constraint::None,
            horizon: 0,
            until: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    /// State size of the checked model.
    pub n: usize,
    pub batch: usize,
    pub tau_max: usize,
    pub tol: f64,
    pub h: f64,
    /// Parameters are perturbed by `N(0, jitter²)` before checking so the
    /// check does not sit on the symmetric initialization.
    pub jitter: f64,
    pub max_coords: usize,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            n: 20,
            batch: 4,
            tau_max: 3,
            tol: 1e-4,
            h: aikae::numerics::GradcheckOptions::default().h,
            jitter: 0.05,
            max_coords: 32,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SynthFormat {
    /// `date, channels..., [mask]`, readable as a dataset.
    #[default]
    Series,
    /// `t, mask, v1..`, readable by `assimilate`.
    Observations,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    /// Fraction of rows (after the first) marked unobserved.
    pub missing_rate: f64,
    pub format: SynthFormat,
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config {
            path: origin.to_string(),
            msg: e.message().to_string(),
        })
    }

    /// Reads a config file; relative data paths become relative to it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_toml(&text, &path.display().to_string())?;
        if let (Some(p), Some(dir)) = (cfg.data.path.as_mut(), path.parent()) {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn out_dir(&self, command: &str) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| Path::new("runs").join(command))
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.t_l == 0 {
            return Err(CliError::usage("data.t_l must be >= 1"));
        }
        if d.t_p.iter().any(|&t| t == 0) {
            return Err(CliError::usage("data.t_p entries must be >= 1"));
        }
        if d.derivative && d.mode == DataMode::Delayed {
            return Err(CliError::usage("data.derivative needs data.mode = \"states\""));
        }
        if !(0.0..1.0).contains(&self.synth.missing_rate) {
            return Err(CliError::usage("synth.missing_rate must be in [0, 1)"));
        }
        self.loss.validate()?;
        self.train.train_config(self.seed).validate()?;
        Ok(())
    }

    /// Sets `dotted.path` to `value`, going through the serialized form so
    /// every field keeps its type checks and unknown names are rejected.
    pub fn with_field(&self, path: &str, value: &serde_json::Value) -> Result<Self> {
        let mut root = serde_json::to_value(self)?;
        let unknown = || CliError::usage(format!("unknown sweep field `{path}`"));
        let (parent, leaf) = match path.rsplit_once('.') {
            Some((p, l)) => (format!("/{}", p.replace('.', "/")), l),
            None => (String::new(), path),
        };
        root.pointer_mut(&parent)
            .and_then(serde_json::Value::as_object_mut)
            .ok_or_else(unknown)?
            .insert(leaf.to_string(), value.clone());
        serde_json::from_value(root).map_err(|e| {
            if e.to_string().contains("unknown field") {
                CliError::usage(format!("unknown sweep field `{path}`"))
            } else {
                CliError::usage(format!("bad value {value} for `{path}`: {e}"))
            }
        })
    }
}

/// Parses `none` / `exact-initial` as accepted on the command line.
pub fn parse_constraint(s: &str) -> std::result::Result<Constraint, String> {
    match s.replace('_', "-").as_str() {
        "none" => Ok(Constraint::None),
        "exact-initial" => Ok(Constraint::ExactInitial),
        other => Err(format!("unknown constraint `{other}` (expected none or exact-initial)")),
    }
}

impl FromStr for VariantChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        <Self as ValueEnum>::from_str(&s.replace('-', "_"), true)
    }
}
