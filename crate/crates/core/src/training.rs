//! Loss terms, the mini-batch training loop and grid search.
//!
//! The total objective is
//! `w_pred·L_pred + w_recon·L_recon + w_lin·L_lin,α + w_orth·L_orth`,
//! with every latent step `τ = 1..=τ_max` of a batch contributing.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Batch, SampleSet};
use crate::error::{Error, Result};
use crate::models::{AikaeModel, ModelConfig, RevInStats, Variant};
use crate::numerics::gradcheck::{gradcheck_with, GradcheckOptions, GradcheckReport};
use crate::numerics::rng::{GRADCHECK_STREAM, SHUFFLE_STREAM};
use crate::numerics::{clip_global_norm, AdamConfig, AdamState, Bound, Graph, Rng, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub pred: f64,
    pub recon: f64,
    pub lin: f64,
    pub orth: f64,
    /// Weight of the augmentation residual inside the linearity term.
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            pred: 1.0,
            recon: 1.0,
            lin: 1.0,
            orth: 0.01,
            alpha: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("pred", self.pred),
            ("recon", self.recon),
            ("lin", self.lin),
            ("orth", self.orth),
            ("alpha", self.alpha),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("loss weight `{name}` must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Weights as applied to `variant`: invertible models reconstruct
    /// exactly, so their reconstruction weight is zero.
    pub fn effective(&self, variant: Variant) -> Self {
        let mut w = *self;
        if variant.is_invertible() {
            w.recon = 0.0;
        }
        w
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrthMode {
    /// `‖KᵀK − I‖²_F`.
    #[default]
    KtK,
    /// Mean of `(‖z_τ‖² − ‖z_0‖²)²` over the batch rollout.
    NormDrift,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTerm {
    Prediction,
    Reconstruction,
    Linearity,
    Orthogonality,
    Total,
}

impl LossTerm {
    pub const ALL: [LossTerm; 5] = [
        LossTerm::Prediction,
        LossTerm::Reconstruction,
        LossTerm::Linearity,
        LossTerm::Orthogonality,
        LossTerm::Total,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::Prediction => "prediction",
            LossTerm::Reconstruction => "reconstruction",
            LossTerm::Linearity => "linearity",
            LossTerm::Orthogonality => "orthogonality",
            LossTerm::Total => "total",
        }
    }
}

impl fmt::Display for LossTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Graph nodes of each loss term for one batch.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub pred: Var,
    pub recon: Option<Var>,
    pub lin: Var,
    pub orth: Var,
    pub total: Var,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub pred: f64,
    pub recon: f64,
    pub lin: f64,
    pub orth: f64,
    pub total: f64,
}

impl LossValues {
    fn read(g: &Graph<'_>, v: &LossVars) -> Self {
        Self {
            pred: g.scalar(v.pred),
            recon: v.recon.map_or(0.0, |r| g.scalar(r)),
            lin: g.scalar(v.lin),
            orth: g.scalar(v.orth),
            total: g.scalar(v.total),
        }
    }

    /// First non-finite term, in the order of the objective.
    pub fn non_finite_term(&self) -> Option<LossTerm> {
        [
            (LossTerm::Prediction, self.pred),
            (LossTerm::Reconstruction, self.recon),
            (LossTerm::Linearity, self.lin),
            (LossTerm::Orthogonality, self.orth),
            (LossTerm::Total, self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(t, _)| t)
    }
}

/// Shared forward pass: normalized input, RevIN statistics and the latent
/// rollout `z_0, z_1, …, z_τmax`.
struct Forward {
    x: Var,
    stats: Option<RevInStats>,
    zs: Vec<Var>,
}

fn check_batch(model: &AikaeModel, batch: &Batch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if batch.tau_max() == 0 {
        return Err(Error::InvalidArgument("batch has no future windows (tau_max = 0)".into()));
    }
    let n = model.n();
    if batch.x.cols() != n || batch.futures.iter().any(|f| f.shape() != batch.x.shape()) {
        return Err(Error::dim(
            "loss",
            format!("batch x {:?} does not match model input size {n}", batch.x.shape()),
        ));
    }
    Ok(())
}

fn forward(model: &AikaeModel, g: &mut Graph<'_>, b: &Bound, batch: &Batch) -> Forward {
    let raw = g.constant_owned(batch.x.clone());
    let (x, stats) = match model.revin() {
        Some(r) => {
            let stats = RevInStats::of(&batch.x, r.eps);
            (r.apply_g(g, b, raw, &stats), Some(stats))
        }
        None => (raw, None),
    };
    let mut zs = vec![model.encode_g(g, b, x)];
    for _ in 0..batch.tau_max() {
        let next = model.advance_g(g, b, *zs.last().unwrap());
        zs.push(next);
    }
    Forward { x, stats, zs }
}

fn normalize_like(model: &AikaeModel, g: &mut Graph<'_>, b: &Bound, y: &Tensor, stats: &Option<RevInStats>) -> Var {
    let raw = g.constant_owned(y.clone());
    match (model.revin(), stats) {
        (Some(r), Some(s)) => r.apply_g(g, b, raw, s),
        _ => raw,
    }
}

fn prediction_term(model: &AikaeModel, g: &mut Graph<'_>, b: &Bound, batch: &Batch, fw: &Forward) -> Var {
    let mut acc: Option<Var> = None;
    for (tau, y) in batch.futures.iter().enumerate() {
        let mut dec = model.decode_g(g, b, fw.zs[tau + 1]);
        if let (Some(r), Some(s)) = (model.revin(), &fw.stats) {
            dec = r.denormalize_g(g, b, dec, s);
        }
        let yv = g.constant_owned(y.clone());
        let diff = g.sub(dec, yv);
        let ms = g.mean_square(diff);
        acc = Some(match acc {
            Some(a) => g.add(a, ms),
            None => ms,
        });
    }
    g.scale(acc.expect("tau_max >= 1"), 1.0 / batch.tau_max() as f64)
}

fn reconstruction_term(model: &AikaeModel, g: &mut Graph<'_>, b: &Bound, batch: &Batch, fw: &Forward) -> Var {
    let dec = model.decode_g(g, b, fw.zs[0]);
    let diff = g.sub(dec, fw.x);
    let ss = g.sum_square(diff);
    g.scale(ss, 1.0 / batch.len() as f64)
}

/// Returns `(invertible residual, augmentation residual)`, both averaged
/// over batch and `τ`.
fn linearity_parts(model: &AikaeModel, g: &mut Graph<'_>, b: &Bound, batch: &Batch, fw: &Forward) -> (Var, Option<Var>) {
    let d = model.d();
    let split = model.chi().map_or(d, |c| d - c.output_dim());
    let mut inv: Option<Var> = None;
    let mut aug: Option<Var> = None;
    let add = |g: &mut Graph<'_>, acc: &mut Option<Var>, v: Var| {
        *acc = Some(match *acc {
            Some(a) => g.add(a, v),
            None => v,
        });
    };
    for (tau, y) in batch.futures.iter().enumerate() {
        let yn = normalize_like(model, g, b, y, &fw.stats);
        let z = fw.zs[tau + 1];
        let target_i = model.phi_g(g, b, yn);
        let pred_i = if split == d { z } else { g.slice_cols(z, 0, split) };
        let di = g.sub(pred_i, target_i);
        let si = g.sum_square(di);
        add(g, &mut inv, si);
        if let Some(target_a) = model.chi_g(g, b, yn) {
            let pred_a = g.slice_cols(z, split, d);
            let da = g.sub(pred_a, target_a);
            let sa = g.sum_square(da);
            add(g, &mut aug, sa);
        }
    }
    let norm = 1.0 / (batch.len() * batch.tau_max()) as f64;
    let inv = g.scale(inv.expect("tau_max >= 1"), norm);
    let aug = aug.map(|a| g.scale(a, norm));
    (inv, aug)
}

fn orthogonality_term(model: &AikaeModel, g: &mut Graph<'_>, b: &Bound, fw: &Forward, mode: OrthMode) -> Var {
    match mode {
        OrthMode::KtK => {
            let k = b.var(model.koopman_id());
            let kt = g.transpose(k);
            let ktk = g.matmul(kt, k);
            let eye = g.constant_owned(Tensor::eye(model.d()));
            let diff = g.sub(ktk, eye);
            g.sum_square(diff)
        }
        OrthMode::NormDrift => {
            let ones = g.constant_owned(Tensor::full(&[model.d(), 1], 1.0));
            let sq0 = g.mul(fw.zs[0], fw.zs[0]);
            let n0 = g.matmul(sq0, ones);
            let mut acc: Option<Var> = None;
            for &z in &fw.zs[1..] {
                let sq = g.mul(z, z);
                let nz = g.matmul(sq, ones);
                let drift = g.sub(nz, n0);
                let ms = g.mean_square(drift);
                acc = Some(match acc {
                    Some(a) => g.add(a, ms),
                    None => ms,
                });
            }
            g.scale(acc.expect("tau_max >= 1"), 1.0 / (fw.zs.len() - 1) as f64)
        }
    }
}

/// Builds every loss term for `batch` on the graph.
pub fn loss_g(
    model: &AikaeModel,
    g: &mut Graph<'_>,
    b: &Bound,
    batch: &Batch,
    weights: &LossWeights,
    orth: OrthMode,
) -> Result<LossVars> {
    weights.validate()?;
    check_batch(model, batch)?;
    let w = weights.effective(model.variant());
    let fw = forward(model, g, b, batch);
    let pred = prediction_term(model, g, b, batch, &fw);
    let recon = (model.variant() == Variant::Kae).then(|| reconstruction_term(model, g, b, batch, &fw));
    let (inv, aug) = linearity_parts(model, g, b, batch, &fw);
    let lin = match aug {
        Some(a) if w.alpha != 0.0 => {
            let wa = g.scale(a, w.alpha);
            g.add(inv, wa)
        }
        _ => inv,
    };
    let orth = orthogonality_term(model, g, b, &fw, orth);

    let mut total = g.scale(pred, w.pred);
    let wl = g.scale(lin, w.lin);
    total = g.add(total, wl);
    let wo = g.scale(orth, w.orth);
    total = g.add(total, wo);
    if let Some(r) = recon {
        if w.recon != 0.0 {
            let wr = g.scale(r, w.recon);
            total = g.add(total, wr);
        }
    }
    Ok(LossVars {
        pred,
        recon,
        lin,
        orth,
        total,
    })
}

/// Selects one term from [`loss_g`]; the reconstruction term is an error
/// for invertible variants.
pub fn term_g(
    model: &AikaeModel,
    g: &mut Graph<'_>,
    b: &Bound,
    batch: &Batch,
    term: LossTerm,
    weights: &LossWeights,
    orth: OrthMode,
) -> Result<Var> {
    if term == LossTerm::Reconstruction && model.variant().is_invertible() {
        return Err(Error::InvalidArgument(format!(
            "the reconstruction loss is undefined for the invertible variant {}",
            model.variant()
        )));
    }
    let v = loss_g(model, g, b, batch, weights, orth)?;
    Ok(match term {
        LossTerm::Prediction => v.pred,
        LossTerm::Reconstruction => v.recon.expect("KAE"),
        LossTerm::Linearity => v.lin,
        LossTerm::Orthogonality => v.orth,
        LossTerm::Total => v.total,
    })
}

fn eval_term(model: &AikaeModel, batch: &Batch, term: LossTerm, weights: &LossWeights, orth: OrthMode) -> Result<f64> {
    let mut g = Graph::new();
    let b = model.params().bind(&mut g, false);
    let v = term_g(model, &mut g, &b, batch, term, weights, orth)?;
    Ok(g.scalar(v))
}

/// Mean squared error of decoded rollouts against the future windows.
pub fn loss_prediction(model: &AikaeModel, batch: &Batch) -> Result<f64> {
    eval_term(model, batch, LossTerm::Prediction, &LossWeights::default(), OrthMode::KtK)
}

/// Mean `‖ψ(φ(x)) − x‖²` of the KAE autoencoder.
pub fn loss_reconstruction(model: &AikaeModel, batch: &Batch) -> Result<f64> {
    eval_term(model, batch, LossTerm::Reconstruction, &LossWeights::default(), OrthMode::KtK)
}

/// Latent linearity residual with augmentation weight `alpha`.
pub fn loss_linearity(model: &AikaeModel, batch: &Batch, alpha: f64) -> Result<f64> {
    if alpha < 0.0 || alpha.is_nan() {
        return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {alpha}")));
    }
    let w = LossWeights {
        alpha,
        ..LossWeights::default()
    };
    eval_term(model, batch, LossTerm::Linearity, &w, OrthMode::KtK)
}

/// `‖KᵀK − I‖²_F`.
pub fn loss_orthogonality(model: &AikaeModel) -> f64 {
    let k = model.koopman();
    let ktk = crate::numerics::matmul(&k.transpose(), k).expect("square K");
    ktk.sub(&Tensor::eye(model.d())).expect("shape").sum_squares()
}

pub fn loss_values(model: &AikaeModel, batch: &Batch, weights: &LossWeights, orth: OrthMode) -> Result<LossValues> {
    let mut g = Graph::new();
    let b = model.params().bind(&mut g, false);
    let v = loss_g(model, &mut g, &b, batch, weights, orth)?;
    Ok(LossValues::read(&g, &v))
}

/// Value and per-parameter gradient of one loss term at the model's parameters.
pub fn loss_value_and_grad(
    model: &AikaeModel,
    batch: &Batch,
    term: LossTerm,
    weights: &LossWeights,
    orth: OrthMode,
) -> Result<(f64, Vec<Tensor>)> {
    value_and_grad_at(model, model.params().tensors(), batch, term, weights, orth)
}

fn value_and_grad_at(
    model: &AikaeModel,
    params: &[Tensor],
    batch: &Batch,
    term: LossTerm,
    weights: &LossWeights,
    orth: OrthMode,
) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p)).collect();
    let b = Bound::from_vars(vars.clone());
    let out = term_g(model, &mut g, &b, batch, term, weights, orth)?;
    let v = g.scalar(out);
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("{term} loss")));
    }
    let grads = g.backward(out);
    Ok((v, vars.iter().map(|&x| grads.get(x)).collect()))
}

fn value_at(
    model: &AikaeModel,
    params: &[Tensor],
    batch: &Batch,
    term: LossTerm,
    weights: &LossWeights,
    orth: OrthMode,
) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.constant(p)).collect();
    let out = term_g(model, &mut g, &Bound::from_vars(vars), batch, term, weights, orth)?;
    Ok(g.scalar(out))
}

/// Adds `N(0, scale²)` noise to every parameter. Freshly initialized models
/// have zero biases, where some gradients vanish identically; checking at
/// a jittered point avoids comparing round-off against an exact zero.
pub fn jitter_params(model: &mut AikaeModel, scale: f64, seed: u64) {
    let mut rng = Rng::derive(seed, GRADCHECK_STREAM);
    for t in model.params_mut().tensors_mut() {
        for v in t.data_mut() {
            *v += scale * rng.normal();
        }
    }
}

/// Finite-difference check of one loss term. `corrupt` adds a constant to
/// the first analytic gradient entry, for exercising the failure path.
pub fn gradcheck_loss(
    model: &AikaeModel,
    batch: &Batch,
    term: LossTerm,
    weights: &LossWeights,
    orth: OrthMode,
    opts: &GradcheckOptions,
    corrupt: Option<f64>,
) -> Result<GradcheckReport> {
    let params = model.params().tensors();
    let (_, mut analytic) = value_and_grad_at(model, params, batch, term, weights, orth)?;
    if let Some(delta) = corrupt {
        if let Some(first) = analytic.iter_mut().find(|t| !t.is_empty()) {
            first.data_mut()[0] += delta;
        }
    }
    gradcheck_with(
        |p| value_at(model, p, batch, term, weights, orth),
        &analytic,
        params,
        opts,
    )
}

// ---- training loop ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub tau_max: usize,
    pub seed: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip: Option<f64>,
    pub orth_mode: OrthMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            batch_size: 128,
            epochs: 100,
            tau_max: 8,
            seed: 0,
            clip: Some(5.0),
            orth_mode: OrthMode::KtK,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if self.tau_max == 0 {
            return Err(Error::InvalidArgument("tau_max must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(Error::InvalidArgument(format!("clip must be > 0, got {c}")));
            }
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_mse: f64,
    pub val_mae: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were kept (1-based); `None` if no epoch ran.
    pub best_epoch: Option<usize>,
    pub best_val_loss: f64,
}

impl TrainReport {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.log {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Summary statistics of a model over a sample set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub mse: f64,
    pub mae: f64,
}

const EVAL_CHUNK: usize = 512;

/// Sample-weighted loss, and prediction MSE/MAE over all steps `τ`.
pub fn evaluate(model: &AikaeModel, set: &SampleSet, weights: &LossWeights, orth: OrthMode) -> Result<Evaluation> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let (mut loss, mut se, mut ae, mut cnt) = (0.0, 0.0, 0.0, 0usize);
    for batch in set.chunks(EVAL_CHUNK) {
        loss += loss_values(model, &batch, weights, orth)?.total * batch.len() as f64;
        let preds = model.predict_batch(&batch.x, batch.tau_max())?;
        for (p, y) in preds.iter().zip(&batch.futures) {
            for (a, t) in p.data().iter().zip(y.data()) {
                se += (a - t) * (a - t);
                ae += (a - t).abs();
            }
            cnt += p.len();
        }
    }
    Ok(Evaluation {
        loss: loss / set.len() as f64,
        mse: se / cnt as f64,
        mae: ae / cnt as f64,
    })
}

/// Adam training with per-epoch shuffling. The parameters of the epoch
/// with the lowest validation loss (training loss without a validation
/// set) are restored at the end.
pub fn train(
    model: &mut AikaeModel,
    train_set: &SampleSet,
    val_set: Option<&SampleSet>,
    cfg: &TrainConfig,
    weights: &LossWeights,
) -> Result<TrainReport> {
    cfg.validate()?;
    weights.validate()?;
    if cfg.epochs > 0 && train_set.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if train_set.tau_max() != cfg.tau_max || val_set.is_some_and(|v| v.tau_max() != cfg.tau_max) {
        return Err(Error::InvalidArgument(format!(
            "sample sets were built for tau_max {} but the config asks for {}",
            train_set.tau_max(),
            cfg.tau_max
        )));
    }
    let val_set = val_set.filter(|v| !v.is_empty());
    let names = model.params().names().to_vec();
    let mut adam = AdamState::new(cfg.adam(), model.params().tensors());
    let mut rng = Rng::derive(cfg.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut report = TrainReport {
        best_val_loss: f64::INFINITY,
        ..TrainReport::default()
    };
    let mut best: Option<Vec<Tensor>> = None;
    let start = Instant::now();

    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let mut sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch = train_set.batch(idx);
            let (values, mut grads) = {
                let mut g = Graph::new();
                let b = model.params().bind(&mut g, true);
                let v = loss_g(model, &mut g, &b, &batch, weights, cfg.orth_mode)?;
                let values = LossValues::read(&g, &v);
                if let Some(term) = values.non_finite_term() {
                    return Err(Error::NonFinite(format!("{term} loss at epoch {epoch}")));
                }
                let grads = g.backward(v.total);
                let gs: Vec<Tensor> = b.vars().iter().map(|&x| grads.get(x)).collect();
                (values, gs)
            };
            if let Some(c) = cfg.clip {
                clip_global_norm(&mut grads, c);
            }
            adam.step(model.params_mut().tensors_mut(), &grads, &names)?;
            sum += values.total * idx.len() as f64;
        }
        let train_loss = sum / train_set.len() as f64;
        let (val_loss, val_mse, val_mae) = match val_set {
            Some(v) => {
                let e = evaluate(model, v, weights, cfg.orth_mode)?;
                (e.loss, e.mse, e.mae)
            }
            None => (f64::NAN, f64::NAN, f64::NAN),
        };
        let select = if val_set.is_some() { val_loss } else { train_loss };
        if !select.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        if select < report.best_val_loss {
            report.best_val_loss = select;
            report.best_epoch = Some(epoch);
            best = Some(model.params().tensors().to_vec());
        }
        report.log.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            val_mse,
            val_mae,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    if let Some(p) = best {
        model.params_mut().assign(p);
    }
    Ok(report)
}

// ---- grid search ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchGrid {
    pub k: Vec<usize>,
    pub w: Vec<usize>,
    pub batch_size: Vec<usize>,
}

impl SearchGrid {
    /// The published grid: `k ∈ {3,4}`, `w ∈ {128,256}`, batch `∈ {4,128,512}`.
    pub fn published() -> Self {
        Self {
            k: vec![3, 4],
            w: vec![128, 256],
            batch_size: vec![4, 128, 512],
        }
    }

    /// Points in listing order, `k` outermost and batch size innermost.
    pub fn points(&self) -> Vec<SearchPoint> {
        let mut out = Vec::new();
        for &k in &self.k {
            for &w in &self.w {
                for &batch_size in &self.batch_size {
                    out.push(SearchPoint { k, w, batch_size });
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchPoint {
    pub k: usize,
    pub w: usize,
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchRow {
    pub k: usize,
    pub w: usize,
    pub batch_size: usize,
    pub best_epoch: usize,
    pub val_loss: f64,
    pub val_mse: f64,
    pub val_mae: f64,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub best: usize,
    pub rows: Vec<SearchRow>,
    pub best_model: AikaeModel,
}

impl SearchOutcome {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Trains one model per point and keeps the lowest validation MSE; ties go
/// to the point listed first.
pub fn hyper_search(
    base: &ModelConfig,
    points: &[SearchPoint],
    train_set: &SampleSet,
    val_set: &SampleSet,
    cfg: &TrainConfig,
    weights: &LossWeights,
) -> Result<SearchOutcome> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("search grid is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::InvalidArgument("hyperparameter search needs a validation set".into()));
    }
    let mut rows = Vec::with_capacity(points.len());
    let mut best: Option<(usize, f64, AikaeModel)> = None;
    for (i, pt) in points.iter().enumerate() {
        let mc = base.clone().with_flow(pt.k, pt.w);
        let mut model = AikaeModel::new(mc, cfg.seed)?;
        let tc = TrainConfig {
            batch_size: pt.batch_size,
            ..cfg.clone()
        };
        let rep = train(&mut model, train_set, Some(val_set), &tc, weights)?;
        let e = evaluate(&model, val_set, weights, cfg.orth_mode)?;
        rows.push(SearchRow {
            k: pt.k,
            w: pt.w,
            batch_size: pt.batch_size,
            best_epoch: rep.best_epoch.unwrap_or(0),
            val_loss: e.loss,
            val_mse: e.mse,
            val_mae: e.mae,
        });
        if best.as_ref().map_or(true, |(_, m, _)| e.mse < *m) {
            best = Some((i, e.mse, model));
        }
    }
    let (best, _, best_model) = best.expect("non-empty grid");
    Ok(SearchOutcome { best, rows, best_model })
}
