use aikae::assimilation::{AssimilationProblem, AssimilationSettings, Constraint, Observation};
use aikae::data::Batch;
use aikae::models::{AikaeModel, LatentState};
use aikae::numerics::rng::GRADCHECK_STREAM;
use aikae::numerics::{GradcheckOptions, GradcheckReport, Rng};
use aikae::training::{gradcheck_loss, jitter_params, LossTerm};
use clap::Args;
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::run::{write_json, write_run_record};
use crate::Common;

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    /// Adds this offset to the first analytic gradient entry (negative control).
    #[arg(long, hide = true)]
    pub corrupt: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
struct Row {
    term: String,
    max_rel_error: f64,
    worst_param: String,
    worst_coord: usize,
    checked: usize,
    pass: bool,
}

fn row(term: &str, r: &GradcheckReport, names: &[String], tol: f64) -> Row {
    let (pi, j) = r.worst.unwrap_or((0, 0));
    Row {
        term: term.to_string(),
        max_rel_error: r.max_rel_error,
        worst_param: names.get(pi).cloned().unwrap_or_default(),
        worst_coord: j,
        checked: r.checked,
        pass: r.passes(tol),
    }
}

fn model(cfg: &crate::config::RunConfig, revin: bool) -> Result<AikaeModel> {
    let g = &cfg.gradcheck;
    let mut mc = cfg.model.model_config(g.n, 1);
    mc.revin = revin;
    let mut m = AikaeModel::new(mc, cfg.seed)?;
    jitter_params(&mut m, g.jitter, cfg.seed);
    Ok(m)
}

pub fn run(args: &GradcheckArgs) -> Result<()> {
    let cfg = args.common.resolve()?;
    let g = &cfg.gradcheck;
    if g.n == 0 || g.batch == 0 || g.tau_max == 0 {
        return Err(CliError::usage("gradcheck.n, batch and tau_max must be >= 1"));
    }
    let dir = cfg.out_dir("gradcheck");
    write_run_record(&dir, "gradcheck", &cfg)?;
    let opts = GradcheckOptions {
        h: g.h,
        max_coords_per_param: g.max_coords,
        seed: cfg.seed,
        ..GradcheckOptions::default()
    };

    let m = model(&cfg, cfg.model.revin)?;
    let mut rng = Rng::derive(cfg.seed, GRADCHECK_STREAM + 1);
    let batch = Batch {
        x: rng.normal_tensor(&[g.batch, g.n], 1.0),
        futures: (0..g.tau_max).map(|_| rng.normal_tensor(&[g.batch, g.n], 1.0)).collect(),
    };
    let names = m.params().names().to_vec();
    let mut rows = Vec::new();
    for term in LossTerm::ALL {
        if term == LossTerm::Reconstruction && m.variant().is_invertible() {
            continue;
        }
        let r = gradcheck_loss(&m, &batch, term, &cfg.loss, cfg.train.orth_mode, &opts, args.corrupt)?;
        rows.push(row(term.name(), &r, &names, g.tol));
    }

    // assimilation works on raw states, so this check uses the model without RevIN
    let ma = model(&cfg, false)?;
    let times: Vec<usize> = (0..=g.tau_max).collect();
    let obs = times.iter().map(|&t| Observation::new(t, rng.normal_tensor(&[g.n], 0.5))).collect();
    let problem = AssimilationProblem::new(&ma, obs, Constraint::None, AssimilationSettings::default())?;
    let z0 = LatentState::new(rng.normal_tensor(&[ma.d()], 0.5), g.n.min(ma.d()));
    let r = problem.gradcheck_cost(&z0, &opts)?;
    rows.push(row("assimilation", &r, &["z0".to_string()], g.tol));

    let mut w = csv::Writer::from_path(dir.join("gradcheck.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(dir.join("gradcheck.csv"), e))?;
    write_json(&dir.join("gradcheck.json"), &rows)?;

    println!("{:<16}{:>12}  {:<6}worst", "term", "rel_err", "pass");
    for r in &rows {
        println!(
            "{:<16}{:>12.3e}  {:<6}{}[{}]",
            r.term,
            r.max_rel_error,
            if r.pass { "ok" } else { "FAIL" },
            r.worst_param,
            r.worst_coord
        );
    }
    let failed: Vec<String> = rows
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("{} (worst at {}[{}])", r.term, r.worst_param, r.worst_coord))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!(
            "gradient check failed at tolerance {:e}: {}",
            g.tol,
            failed.join(", ")
        )))
    }
}
