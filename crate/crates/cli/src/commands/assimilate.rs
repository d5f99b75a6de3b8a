use std::path::PathBuf;

use aikae::assimilation::{
    forecast_at, forecast_score, load_observations, observed_after, observed_until, write_forecast,
    AssimilationProblem, AssimilationSettings, Constraint,
};
use clap::Args;
use serde::Serialize;

use crate::config::parse_constraint;
use crate::error::{CliError, Result};
use crate::run::{write_json, write_run_record};
use crate::Common;

#[derive(Args, Debug)]
pub struct AssimilateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// CSV with header `t,mask,v1,...`; integer timestamps starting at 0.
    #[arg(long)]
    pub observations: PathBuf,
    /// Forecast steps after the last assimilated time (0: summary only).
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Assimilate rows with `t <= until`; later observed rows are scored.
    #[arg(long)]
    pub until: Option<usize>,
    /// `none` or `exact-initial`.
    #[arg(long, value_parser = parse_constraint)]
    pub constraint: Option<Constraint>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Assimilation learning rate.
    #[arg(long)]
    pub step_size: Option<f64>,
}

#[derive(Serialize)]
struct Summary {
    checkpoint: String,
    variant: String,
    constraint: Constraint,
    observations: usize,
    last_observed: usize,
    iterations: usize,
    converged: bool,
    initial_cost: f64,
    final_cost: f64,
    z0_star: Vec<f64>,
    /// `encode(x₀)`, the starting point.
    z0_init: Vec<f64>,
    x0_hat: Vec<f64>,
    forecast_steps: usize,
    scored_points: usize,
    forecast_mse: Option<f64>,
    forecast_mae: Option<f64>,
}

pub fn run(args: &AssimilateArgs) -> Result<()> {
    let mut cfg = args.common.resolve()?;
    let a = &mut cfg.assimilate;
    if let Some(h) = args.horizon {
        a.horizon = h;
    }
    if let Some(u) = args.until {
        a.until = Some(u);
    }
    if let Some(c) = args.constraint {
        a.constraint = c;
    }
    if let Some(s) = args.steps {
        a.steps = s;
    }
    if let Some(lr) = args.step_size {
        a.lr = lr;
    }
    let a = cfg.assimilate.clone();
    let dir = cfg.out_dir("assimilate");
    write_run_record(&dir, "assimilate", &cfg)?;

    let model = aikae::models::load_checkpoint(&args.checkpoint)?;
    let rows = load_observations(&args.observations)?;
    let last_row = rows
        .last()
        .map(|r| r.t)
        .ok_or_else(|| CliError::usage("the observation file has no rows"))?;
    let base = a.until.unwrap_or(last_row);
    let obs = observed_until(&rows, base);
    let truth = if a.until.is_some() { observed_after(&rows, base) } else { Vec::new() };
    let n_obs = obs.len();

    let settings = AssimilationSettings {
        lr: a.lr,
        steps: a.steps,
        grad_tol: a.grad_tol,
    };
    let problem = AssimilationProblem::new(&model, obs, a.constraint, settings)?;
    let z0_init = problem.initial_latent()?;
    let result = problem.solve()?;

    let mut w = csv::Writer::from_path(dir.join("costs.csv"))?;
    w.write_record(["iteration", "cost"])?;
    for (i, c) in result.cost_trajectory.iter().enumerate() {
        w.write_record([i.to_string(), c.to_string()])?;
    }
    w.flush().map_err(|e| CliError::io(dir.join("costs.csv"), e))?;

    if a.horizon > 0 {
        let times: Vec<usize> = (base + 1..=base + a.horizon).collect();
        let preds = forecast_at(&model, &result.z0_star, &times)?;
        write_forecast(dir.join("forecast.csv"), &times, &preds)?;
    }
    let (forecast_mse, forecast_mae) = if truth.is_empty() {
        (None, None)
    } else {
        let (m, e) = forecast_score(&model, &result, &truth)?;
        (Some(m), Some(e))
    };
    let summary = Summary {
        checkpoint: args.checkpoint.display().to_string(),
        variant: model.variant().to_string(),
        constraint: a.constraint,
        observations: n_obs,
        last_observed: result.last_observed,
        iterations: result.iterations,
        converged: result.converged,
        initial_cost: result.cost_trajectory[0],
        final_cost: result.final_cost(),
        z0_star: result.z0_star.z().data().to_vec(),
        z0_init: z0_init.z().data().to_vec(),
        x0_hat: model.decode(&result.z0_star)?.data().to_vec(),
        forecast_steps: a.horizon,
        scored_points: truth.len(),
        forecast_mse,
        forecast_mae,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    println!(
        "assimilated {n_obs} observations: cost {:.3e} -> {:.3e} in {} steps{}",
        summary.initial_cost,
        summary.final_cost,
        summary.iterations,
        forecast_mse.map_or(String::new(), |m| format!(", forecast mse {m:.3e}"))
    );
    Ok(())
}
