use std::path::PathBuf;

use aikae::assimilation::{write_observations, ObservationRow};
use aikae::data::mask_irregular;
use aikae::numerics::Tensor;
use clap::Args;

use crate::config::SynthFormat;
use crate::error::{CliError, Result};
use crate::run::{ensure_dir, write_run_record};
use crate::Common;

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output CSV (default `<out>/synthetic.csv`).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Fraction of rows after the first marked unobserved.
    #[arg(long)]
    pub missing_rate: Option<f64>,
    #[arg(long, value_enum)]
    pub format: Option<SynthFormat>,
}

pub fn run(args: &SynthArgs) -> Result<()> {
    let mut cfg = args.common.resolve()?;
    if let Some(r) = args.missing_rate {
        cfg.synth.missing_rate = r;
    }
    if let Some(f) = args.format {
        cfg.synth.format = f;
    }
    let spec = cfg
        .data
        .synthetic
        .clone()
        .ok_or_else(|| CliError::usage("synth needs a [data.synthetic] section in the config"))?;
    let dir = cfg.out_dir("synth");
    write_run_record(&dir, "synth", &cfg)?;
    let mut ds = spec.generate(cfg.data.length, cfg.seed)?;
    if cfg.synth.missing_rate > 0.0 {
        ds = mask_irregular(&ds, cfg.synth.missing_rate, cfg.seed)?;
    }
    let out = args.output.clone().unwrap_or_else(|| dir.join("synthetic.csv"));
    if let Some(parent) = out.parent() {
        ensure_dir(parent)?;
    }
    match cfg.synth.format {
        SynthFormat::Series => ds.write_csv(&out)?,
        SynthFormat::Observations => {
            let rows: Vec<ObservationRow> = (0..ds.len())
                .map(|t| ObservationRow {
                    t,
                    observed: ds.is_observed(t),
                    x: Tensor::vector(ds.values.row(t).to_vec()),
                })
                .collect();
            write_observations(&out, &rows)?;
        }
    }
    let missing = (0..ds.len()).filter(|&t| !ds.is_observed(t)).count();
    println!("wrote {} rows x {} channels ({missing} unobserved) to {}", ds.len(), ds.columns.len(), out.display());
    Ok(())
}
