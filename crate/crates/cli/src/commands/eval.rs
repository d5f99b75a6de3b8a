use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use crate::config::DataMode;
use crate::error::{CliError, Result};
use crate::pipeline::{horizon_row, load_dataset, HorizonRow};
use crate::run::{write_json, write_run_record};
use crate::Common;

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Serialize)]
struct EvalSummary<'a> {
    checkpoint: String,
    variant: String,
    param_count: usize,
    rows: &'a [HorizonRow],
}

pub fn run(args: &EvalArgs) -> Result<()> {
    let cfg = args.common.resolve()?;
    if cfg.data.mode != DataMode::Delayed {
        return Err(CliError::usage("eval works on delayed windows; set data.mode = \"delayed\""));
    }
    if cfg.data.t_p.is_empty() {
        return Err(CliError::usage("no horizons to evaluate (data.t_p is empty)"));
    }
    let model = aikae::models::load_checkpoint(&args.checkpoint)?;
    if let Some(v) = args.common.variant {
        if v.variant() != model.variant() {
            return Err(CliError::usage(format!(
                "checkpoint holds a {} model but {v} was requested",
                model.variant()
            )));
        }
    }
    let dir = cfg.out_dir("eval");
    write_run_record(&dir, "eval", &cfg)?;
    let ds = load_dataset(&cfg)?;
    let rows = cfg
        .data
        .t_p
        .iter()
        .map(|&t_p| horizon_row(&cfg, &model, &ds, t_p))
        .collect::<Result<Vec<_>>>()?;

    let mut w = csv::Writer::from_path(dir.join("eval.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(dir.join("eval.csv"), e))?;
    write_json(
        &dir.join("eval.json"),
        &EvalSummary {
            checkpoint: args.checkpoint.display().to_string(),
            variant: model.variant().to_string(),
            param_count: model.param_count(),
            rows: &rows,
        },
    )?;
    println!("t_p\tmse\tmae\tpersist_mse\tlinear_mse");
    for r in &rows {
        println!(
            "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
            r.t_p, r.mse, r.mae, r.persistence_mse, r.linear_mse
        );
    }
    Ok(())
}
