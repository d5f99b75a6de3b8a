//! Variational assimilation of the initial latent state.
//!
//! Given observations `x_{t_i}` at integer times `0 = t_0 < t_1 < …`, find
//! `z₀* = argmin Σᵢ ‖Φ⁻¹(K^{t_i} z₀) − x_{t_i}‖²` with the trained model
//! frozen, then forecast `x̂_t = Φ⁻¹(K^t z₀*)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{AikaeModel, LatentState, Variant};
use crate::numerics::{gradcheck_with, AdamConfig, AdamState, GradcheckOptions, GradcheckReport, Graph, Tensor, Var};

/// Costs above this (or non-finite) abort the optimization.
pub const DIVERGENCE_COST: f64 = 1e6;

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub t: usize,
    pub x: Tensor,
}

impl Observation {
    pub fn new(t: usize, x: Tensor) -> Self {
        Self {
            t,
            x: Tensor::vector(x.into_data()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    #[default]
    None,
    /// Keep `z_i = φ(x₀)` so the first observation is reproduced exactly;
    /// only the augmentation `z_a` is free.
    ExactInitial,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssimilationSettings {
    pub lr: f64,
    pub steps: usize,
    /// Gradient norm below which the run counts as converged.
    pub grad_tol: f64,
}

impl Default for AssimilationSettings {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            steps: 500,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AssimilationProblem<'m> {
    model: &'m AikaeModel,
    obs: Vec<Observation>,
    constraint: Constraint,
    settings: AssimilationSettings,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssimilationResult {
    pub z0_star: LatentState,
    /// Cost before each step, followed by the final cost.
    pub cost_trajectory: Vec<f64>,
    pub converged: bool,
    /// Number of optimizer steps actually taken.
    pub iterations: usize,
    pub last_observed: usize,
}

impl AssimilationResult {
    pub fn final_cost(&self) -> f64 {
        *self.cost_trajectory.last().expect("at least the initial cost")
    }
}

impl<'m> AssimilationProblem<'m> {
    pub fn new(
        model: &'m AikaeModel,
        obs: Vec<Observation>,
        constraint: Constraint,
        settings: AssimilationSettings,
    ) -> Result<Self> {
        if model.revin().is_some() {
            return Err(Error::InvalidArgument(
                "assimilation works on raw states; models with instance normalization are not supported".into(),
            ));
        }
        let first = obs
            .first()
            .ok_or_else(|| Error::InvalidArgument("assimilation needs at least one observation".into()))?;
        if first.t != 0 {
            return Err(Error::InvalidArgument(format!(
                "the first observation must be at t = 0, got t = {}",
                first.t
            )));
        }
        for w in obs.windows(2) {
            if w[1].t <= w[0].t {
                return Err(Error::InvalidArgument(format!(
                    "observation times must be strictly increasing ({} then {})",
                    w[0].t, w[1].t
                )));
            }
        }
        if let Some(o) = obs.iter().find(|o| o.x.len() != model.n()) {
            return Err(Error::dim(
                "assimilation",
                format!("observation at t = {} has {} values, model expects {}", o.t, o.x.len(), model.n()),
            ));
        }
        if constraint == Constraint::ExactInitial && model.variant() == Variant::Kae {
            return Err(Error::InvalidArgument(
                "the exact-initial constraint needs an invertible encoder".into(),
            ));
        }
        if !(settings.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {}", settings.lr)));
        }
        Ok(Self {
            model,
            obs,
            constraint,
            settings,
        })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.obs
    }

    pub fn constraint(&self) -> Constraint {
        self.constraint
    }

    /// Graph cost for a `1 × d` latent row.
    fn cost_g(&self, g: &mut Graph<'_>, b: &crate::numerics::Bound, z0: Var) -> Var {
        let last = self.obs.last().map_or(0, |o| o.t);
        let mut z = z0;
        let mut rows = Vec::with_capacity(self.obs.len());
        let mut oi = 0;
        for t in 0..=last {
            if t > 0 {
                z = self.model.advance_g(g, b, z);
            }
            if self.obs[oi].t == t {
                rows.push(z);
                oi += 1;
            }
        }
        let zs = g.stack_rows(&rows);
        let dec = self.model.decode_g(g, b, zs);
        let target = Tensor::stack_rows(&self.obs.iter().map(|o| o.x.clone()).collect::<Vec<_>>()).expect("checked dims");
        let tv = g.constant_owned(target);
        let diff = g.sub(dec, tv);
        g.sum_square(diff)
    }

    pub fn cost(&self, z0: &LatentState) -> Result<f64> {
        if z0.dim() != self.model.d() {
            return Err(Error::dim("assimilation_cost", format!("latent {} vs {}", z0.dim(), self.model.d())));
        }
        let mut g = Graph::new();
        let b = self.model.params().bind(&mut g, false);
        let zv = g.constant_owned(z0.z().as_row());
        let c = self.cost_g(&mut g, &b, zv);
        Ok(g.scalar(c))
    }

    /// Cost and gradient with respect to the full latent row.
    fn cost_and_grad(&self, z0: &Tensor) -> (f64, Tensor) {
        let mut g = Graph::new();
        let b = self.model.params().bind(&mut g, false);
        let zv = g.param_owned(z0.as_row());
        let c = self.cost_g(&mut g, &b, zv);
        let grads = g.backward(c);
        (g.scalar(c), Tensor::vector(grads.get(zv).into_data()))
    }

    /// Finite-difference check of the cost gradient with respect to `z0`.
    pub fn gradcheck_cost(&self, z0: &LatentState, opts: &GradcheckOptions) -> Result<GradcheckReport> {
        if z0.dim() != self.model.d() {
            return Err(Error::dim("gradcheck_cost", format!("latent {} vs {}", z0.dim(), self.model.d())));
        }
        let (c, grad) = self.cost_and_grad(z0.z());
        if !c.is_finite() {
            return Err(Error::NonFinite("assimilation cost".into()));
        }
        let n = z0.invertible_dim();
        gradcheck_with(
            |p| self.cost(&LatentState::new(p[0].clone(), n)),
            &[grad],
            &[z0.z().clone()],
            opts,
        )
    }

    /// `encode(x₀)`, the starting point of the optimization.
    pub fn initial_latent(&self) -> Result<LatentState> {
        self.model.encode(&self.obs[0].x)
    }

    pub fn solve(&self) -> Result<AssimilationResult> {
        let init = self.initial_latent()?;
        let d = init.dim();
        let n_inv = init.invertible_dim();
        let free = match (self.constraint, self.model.variant()) {
            (Constraint::None, _) => 0..d,
            (Constraint::ExactInitial, Variant::Aikae) => n_inv..d,
            (Constraint::ExactInitial, _) => d..d,
        };
        let last_observed = self.obs.last().map_or(0, |o| o.t);
        let mut z = init.z().clone();
        let mut costs = Vec::with_capacity(self.settings.steps + 1);
        if free.is_empty() {
            costs.push(self.cost(&init)?);
            return Ok(AssimilationResult {
                z0_star: init,
                cost_trajectory: costs,
                converged: true,
                iterations: 0,
                last_observed,
            });
        }

        let mut theta = vec![Tensor::vector(z.data()[free.clone()].to_vec())];
        let names = ["z0".to_string()];
        let mut adam = AdamState::new(
            AdamConfig {
                lr: self.settings.lr,
                ..AdamConfig::default()
            },
            &theta,
        );
        let mut grad_norm = f64::INFINITY;
        let mut iterations = 0;
        for it in 0..=self.settings.steps {
            z.data_mut()[free.clone()].copy_from_slice(theta[0].data());
            let (c, grad) = self.cost_and_grad(&z);
            if !c.is_finite() || c > DIVERGENCE_COST {
                return Err(Error::Divergence { iteration: it, cost: c });
            }
            costs.push(c);
            let g_free = Tensor::vector(grad.data()[free.clone()].to_vec());
            grad_norm = g_free.sum_squares().sqrt();
            // Adam steps have size ~lr whatever the gradient, so it would
            // wander off an optimum it has already reached
            if it == self.settings.steps || grad_norm <= self.settings.grad_tol {
                break;
            }
            iterations += 1;
            adam.step(&mut theta, &[g_free], &names)?;
        }
        Ok(AssimilationResult {
            z0_star: LatentState::new(z, n_inv),
            cost_trajectory: costs,
            converged: grad_norm <= self.settings.grad_tol,
            iterations,
            last_observed,
        })
    }
}

/// `Σᵢ ‖Φ⁻¹(K^{t_i} z₀) − x_{t_i}‖²` over the observed times.
pub fn assimilation_cost(problem: &AssimilationProblem<'_>, z0: &LatentState) -> Result<f64> {
    problem.cost(z0)
}

pub fn assimilate(problem: &AssimilationProblem<'_>) -> Result<AssimilationResult> {
    problem.solve()
}

/// `Φ⁻¹(K^t z₀*)`.
pub fn assimilated_forecast(result: &AssimilationResult, model: &AikaeModel, t: usize) -> Result<Tensor> {
    Ok(forecast_at(model, &result.z0_star, &[t])?.remove(0))
}

/// Decoded states at each of `times` (any order) from the latent `z0`.
pub fn forecast_at(model: &AikaeModel, z0: &LatentState, times: &[usize]) -> Result<Vec<Tensor>> {
    let last = times.iter().copied().max().unwrap_or(0);
    let traj = model.rollout(z0, last)?;
    times.iter().map(|&t| model.decode(&traj[t])).collect()
}

/// MSE and MAE of the forecast against `truth`, averaged over timestamps
/// and coordinates. Truth times must lie after the last assimilated one.
pub fn forecast_score(model: &AikaeModel, result: &AssimilationResult, truth: &[Observation]) -> Result<(f64, f64)> {
    if truth.is_empty() {
        return Err(Error::InvalidArgument("no ground truth to score against".into()));
    }
    if let Some(o) = truth.iter().find(|o| o.t <= result.last_observed) {
        return Err(Error::InvalidArgument(format!(
            "truth at t = {} is not after the last assimilated time {}",
            o.t, result.last_observed
        )));
    }
    let times: Vec<usize> = truth.iter().map(|o| o.t).collect();
    let preds = forecast_at(model, &result.z0_star, &times)?;
    let (mut se, mut ae, mut cnt) = (0.0, 0.0, 0usize);
    for (p, o) in preds.iter().zip(truth) {
        if p.len() != o.x.len() {
            return Err(Error::dim("forecast_score", format!("{} vs {}", p.len(), o.x.len())));
        }
        for (a, b) in p.data().iter().zip(o.x.data()) {
            se += (a - b) * (a - b);
            ae += (a - b).abs();
        }
        cnt += p.len();
    }
    Ok((se / cnt as f64, ae / cnt as f64))
}

/// One independent problem per pixel, solved on scoped threads that share
/// the frozen model. Results keep the input order.
pub fn assimilate_grid(
    model: &AikaeModel,
    pixels: Vec<Vec<Observation>>,
    constraint: Constraint,
    settings: AssimilationSettings,
    threads: usize,
) -> Result<Vec<AssimilationResult>> {
    let threads = threads.max(1);
    let chunk = pixels.len().div_ceil(threads).max(1);
    let mut out: Vec<Option<Result<AssimilationResult>>> = (0..pixels.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = pixels
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|obs| AssimilationProblem::new(model, obs.clone(), constraint, settings)?.solve())
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        let mut i = 0;
        for h in handles {
            for r in h.join().expect("assimilation worker panicked") {
                out[i] = Some(r);
                i += 1;
            }
        }
    });
    out.into_iter().map(|r| r.expect("every pixel solved")).collect()
}

/// Pooled score of a pixel grid: squared and absolute errors averaged over
/// every pixel, timestamp and coordinate.
pub fn grid_forecast_score(
    model: &AikaeModel,
    results: &[AssimilationResult],
    truths: &[Vec<Observation>],
) -> Result<(f64, f64)> {
    if results.len() != truths.len() || results.is_empty() {
        return Err(Error::InvalidArgument("need one non-empty truth list per pixel".into()));
    }
    let (mut se, mut ae, mut cnt) = (0.0, 0.0, 0.0);
    for (r, t) in results.iter().zip(truths) {
        let (mse, mae) = forecast_score(model, r, t)?;
        let k = (t.len() * model.n()) as f64;
        se += mse * k;
        ae += mae * k;
        cnt += k;
    }
    Ok((se / cnt, ae / cnt))
}

// ---- observation files ----

/// A row of an observation file; masked rows carry no usable values.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationRow {
    pub t: usize,
    pub observed: bool,
    pub x: Tensor,
}

/// Integer time from a textual timestamp; fractional times are refused.
pub fn parse_timestamp(s: &str) -> Result<usize> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("timestamp `{s}` is not a number")))?;
    if v < 0.0 || v.fract() != 0.0 || !v.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "timestamp `{s}` is not a non-negative integer; fractional time steps are not supported"
        )));
    }
    Ok(v as usize)
}

/// Reads `t,mask,v1,…,vn` rows.
pub fn load_observations(path: impl AsRef<Path>) -> Result<Vec<ObservationRow>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.len() < 3 || header[0] != "t" || header[1] != "mask" {
        return Err(Error::Parse {
            line: 1,
            msg: "expected header `t,mask,v1,...`".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let t = parse_timestamp(&rec[0]).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let observed = match rec[1].trim() {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("mask must be 0 or 1, got `{other}`"),
                })
            }
        };
        let mut x = Vec::with_capacity(header.len() - 2);
        for cell in rec.iter().skip(2) {
            let v: f64 = if observed {
                cell.trim().parse().map_err(|_| Error::Parse {
                    line,
                    msg: format!("`{cell}` is not a number"),
                })?
            } else {
                cell.trim().parse().unwrap_or(f64::NAN)
            };
            x.push(v);
        }
        rows.push(ObservationRow {
            t,
            observed,
            x: Tensor::vector(x),
        });
    }
    Ok(rows)
}

pub fn write_observations(path: impl AsRef<Path>, rows: &[ObservationRow]) -> Result<()> {
    let n = rows.first().map_or(0, |r| r.x.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string(), "mask".to_string()];
    header.extend((1..=n).map(|i| format!("v{i}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.t.to_string(), if r.observed { "1" } else { "0" }.to_string()];
        rec.extend(r.x.data().iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Observed rows with `t ≤ horizon`, as assimilation input.
pub fn observed_until(rows: &[ObservationRow], horizon: usize) -> Vec<Observation> {
    rows.iter()
        .filter(|r| r.observed && r.t <= horizon)
        .map(|r| Observation::new(r.t, r.x.clone()))
        .collect()
}

/// Observed rows with `t > after`, as scoring truth.
pub fn observed_after(rows: &[ObservationRow], after: usize) -> Vec<Observation> {
    rows.iter()
        .filter(|r| r.observed && r.t > after)
        .map(|r| Observation::new(r.t, r.x.clone()))
        .collect()
}

/// Writes `t,v̂1,…,v̂n` for each requested time.
pub fn write_forecast(path: impl AsRef<Path>, times: &[usize], preds: &[Tensor]) -> Result<()> {
    let n = preds.first().map_or(0, Tensor::len);
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("v{i}")));
    w.write_record(&header)?;
    for (t, p) in times.iter().zip(preds) {
        let mut rec = vec![t.to_string()];
        rec.extend(p.data().iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
