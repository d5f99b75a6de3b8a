//! Data preparation, training and evaluation shared by `train`, `eval` and
//! `ablate`.

use std::time::Instant;

use aikae::data::{
    baseline_persistence, derivative_augment, eval_windows, load_csv, metrics, windows, LinearBaseline, SampleSet,
    SeriesDataset, Split, SplitLengths, WindowSample,
};
use aikae::models::AikaeModel;
use aikae::numerics::Tensor;
use aikae::training::{evaluate, train, TrainReport};
use serde::{Deserialize, Serialize};

use crate::config::{DataMode, RunConfig};
use crate::error::{CliError, Result};

/// The dataset a run trains and evaluates on, after optional derivative
/// augmentation and normalization.
pub fn load_dataset(cfg: &RunConfig) -> Result<SeriesDataset> {
    let d = &cfg.data;
    let splits = d.splits.map(|[a, b, c]| SplitLengths::new(a, b, c));
    let ds = match (&d.path, &d.synthetic) {
        (Some(path), _) => {
            if !path.exists() {
                return Err(CliError::io(
                    path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "dataset file not found"),
                ));
            }
            load_csv(path, splits)?
        }
        (None, Some(spec)) => {
            let ds = spec.generate(d.length, cfg.seed)?;
            match splits {
                Some(s) => ds.with_splits(s)?,
                None => ds,
            }
        }
        (None, None) => {
            return Err(CliError::usage(
                "no dataset: set data.path (or --data) or a [data.synthetic] section",
            ))
        }
    };
    let ds = if d.derivative {
        let values = derivative_augment(&ds.values);
        let mut cols = ds.columns.clone();
        cols.extend(ds.columns.iter().map(|c| format!("d_{c}")));
        let s = ds.splits;
        // the augmented series is one row shorter; the test split absorbs it
        let splits = SplitLengths::new(s.train, s.val, s.test.min(values.rows().saturating_sub(s.train + s.val)));
        SeriesDataset::new(ds.name.clone(), cols, values, splits)?
    } else {
        ds
    };
    Ok(if d.normalize { ds.normalized().0 } else { ds })
}

/// Model state size for this dataset.
pub fn state_dim(cfg: &RunConfig, ds: &SeriesDataset) -> usize {
    match cfg.data.mode {
        DataMode::Delayed => cfg.data.t_l,
        DataMode::States => ds.channels(),
    }
}

pub fn sample_set(cfg: &RunConfig, ds: &SeriesDataset, split: Split) -> SampleSet {
    let tau = cfg.train.tau_max;
    match cfg.data.mode {
        DataMode::Delayed => SampleSet::delayed(ds, split, cfg.data.t_l, tau, cfg.data.stride),
        DataMode::States => SampleSet::states(ds, split, tau),
    }
}

pub fn build_model(cfg: &RunConfig, ds: &SeriesDataset) -> Result<AikaeModel> {
    let n = state_dim(cfg, ds);
    let delay = match cfg.data.mode {
        DataMode::Delayed => cfg.data.t_l,
        DataMode::States => 1,
    };
    Ok(AikaeModel::new(cfg.model.model_config(n, delay), cfg.seed)?)
}

/// Test metrics for one prediction length, next to the two baselines on
/// the same windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonRow {
    pub t_p: usize,
    pub windows: usize,
    pub mse: f64,
    pub mae: f64,
    pub persistence_mse: f64,
    pub persistence_mae: f64,
    pub linear_mse: f64,
    pub linear_mae: f64,
}

fn stack(ws: &[WindowSample], f: impl Fn(&WindowSample) -> &Tensor) -> Result<Tensor> {
    Ok(Tensor::stack_rows(&ws.iter().map(|w| f(w).clone()).collect::<Vec<_>>())?)
}

/// Delayed-mode evaluation on the test split.
pub fn horizon_row(cfg: &RunConfig, model: &AikaeModel, ds: &SeriesDataset, t_p: usize) -> Result<HorizonRow> {
    let t_l = cfg.data.t_l;
    if model.n() != t_l {
        return Err(CliError::usage(format!(
            "model state size {} does not match lookback t_l = {t_l}",
            model.n()
        )));
    }
    let test = eval_windows(ds, Split::Test, t_l, t_p);
    if test.is_empty() {
        return Err(CliError::usage(format!(
            "horizon t_p = {t_p} exceeds the test split ({} rows)",
            ds.split_range(Split::Test).len()
        )));
    }
    let look = stack(&test, |w| &w.lookback)?;
    let truth = stack(&test, |w| &w.target)?;
    let pred = model.forecast_horizon_batch(&look, t_p)?;
    let (mse, mae) = metrics(&pred, &truth)?;

    let persist = Tensor::stack_rows(
        &test
            .iter()
            .map(|w| baseline_persistence(&w.lookback, t_p))
            .collect::<aikae::Result<Vec<_>>>()?,
    )?;
    let (persistence_mse, persistence_mae) = metrics(&persist, &truth)?;

    let fit = windows(ds, Split::Train, t_l, t_p, cfg.data.stride);
    let (linear_mse, linear_mae) = if fit.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let lin = LinearBaseline::fit(&fit)?;
        metrics(&lin.predict_batch(&look)?, &truth)?
    };
    Ok(HorizonRow {
        t_p,
        windows: test.len(),
        mse,
        mae,
        persistence_mse,
        persistence_mae,
        linear_mse,
        linear_mae,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub variant: String,
    pub n: usize,
    pub d: usize,
    pub param_count: usize,
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub final_train_loss: Option<f64>,
    /// Headline test metrics: the first horizon in delayed mode, all
    /// rollout steps in states mode.
    pub test_mse: Option<f64>,
    pub test_mae: Option<f64>,
    pub horizons: Vec<HorizonRow>,
    pub wall_seconds: f64,
}

pub struct TrainOutcome {
    pub model: AikaeModel,
    pub report: TrainReport,
    pub summary: TrainSummary,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn train_and_test(cfg: &RunConfig, ds: &SeriesDataset) -> Result<TrainOutcome> {
    let start = Instant::now();
    let mut model = build_model(cfg, ds)?;
    let train_set = sample_set(cfg, ds, Split::Train);
    if train_set.is_empty() && cfg.train.epochs > 0 {
        return Err(CliError::usage(format!(
            "the train split ({} rows) is too short for t_l = {} and tau_max = {}",
            ds.split_range(Split::Train).len(),
            cfg.data.t_l,
            cfg.train.tau_max
        )));
    }
    let val_set = sample_set(cfg, ds, Split::Val);
    let tc = cfg.train.train_config(cfg.seed);
    let report = train(&mut model, &train_set, Some(&val_set), &tc, &cfg.loss)?;

    let mut horizons = Vec::new();
    let (test_mse, test_mae) = match cfg.data.mode {
        DataMode::Delayed => {
            for &t_p in &cfg.data.t_p {
                if !eval_windows(ds, Split::Test, cfg.data.t_l, t_p).is_empty() {
                    horizons.push(horizon_row(cfg, &model, ds, t_p)?);
                }
            }
            horizons.first().map_or((None, None), |h| (Some(h.mse), Some(h.mae)))
        }
        DataMode::States => {
            let test = sample_set(cfg, ds, Split::Test);
            if test.is_empty() {
                (None, None)
            } else {
                let e = evaluate(&model, &test, &cfg.loss, tc.orth_mode)?;
                (Some(e.mse), Some(e.mae))
            }
        }
    };
    let summary = TrainSummary {
        variant: model.variant().to_string(),
        n: model.n(),
        d: model.d(),
        param_count: model.param_count(),
        epochs: report.log.len(),
        best_epoch: report.best_epoch,
        best_val_loss: finite(report.best_val_loss),
        final_train_loss: report.log.last().map(|l| l.train_loss),
        test_mse,
        test_mae,
        horizons,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome { model, report, summary })
}
