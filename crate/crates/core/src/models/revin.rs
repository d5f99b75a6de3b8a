//! Reversible instance normalization.
//!
//! Each row of a batch is one instance (one channel's lookback window). The
//! row is standardized with its own mean and variance, then passed through a
//! learnable affine `γ·x̃ + β` shared across instances. Denormalization
//! undoes both steps with the statistics returned by normalization.

use crate::numerics::{Bound, Graph, ParamId, ParamSet, Tensor, Var};

pub const REVIN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
pub struct RevIn {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

/// Per-row statistics captured by [`RevIn::normalize`].
#[derive(Clone, Debug, PartialEq)]
pub struct RevInStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl RevInStats {
    pub fn of(x: &Tensor, eps: f64) -> Self {
        let (rows, cols) = (x.rows(), x.cols());
        let mut mean = Vec::with_capacity(rows);
        let mut std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &x.data()[r * cols..(r + 1) * cols];
            let m = row.iter().sum::<f64>() / cols.max(1) as f64;
            let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / cols.max(1) as f64;
            mean.push(m);
            std.push((var + eps).sqrt());
        }
        Self { mean, std }
    }
}

impl RevIn {
    pub fn new(params: &mut ParamSet, prefix: &str) -> Self {
        let gain = params.add(format!("{prefix}.gain"), Tensor::vector(vec![1.0]));
        let bias = params.add(format!("{prefix}.bias"), Tensor::vector(vec![0.0]));
        Self {
            gain,
            bias,
            eps: REVIN_EPS,
        }
    }

    /// Normalizes constant data `x` (rows = instances).
    pub fn normalize_g<'a>(&self, g: &mut Graph<'a>, b: &Bound, x: &'a Tensor) -> (Var, RevInStats) {
        let stats = RevInStats::of(x, self.eps);
        let xv = g.constant(x);
        let v = self.apply_g(g, b, xv, &stats);
        (v, stats)
    }

    /// Normalizes `x` with previously computed statistics.
    pub fn apply_g(&self, g: &mut Graph<'_>, b: &Bound, x: Var, stats: &RevInStats) -> Var {
        let scale: Vec<f64> = stats.std.iter().map(|s| 1.0 / s).collect();
        let shift: Vec<f64> = stats.mean.iter().zip(&stats.std).map(|(m, s)| -m / s).collect();
        let standardized = g.row_affine(x, scale, shift);
        let scaled = g.mul_scalar(standardized, b.var(self.gain));
        g.add_scalar(scaled, b.var(self.bias))
    }

    pub fn denormalize_g(&self, g: &mut Graph<'_>, b: &Bound, y: Var, stats: &RevInStats) -> Var {
        let neg_bias = g.scale(b.var(self.bias), -1.0);
        let centered = g.add_scalar(y, neg_bias);
        let unscaled = g.div_scalar(centered, b.var(self.gain));
        g.row_affine(unscaled, stats.std.clone(), stats.mean.clone())
    }

    pub fn normalize(&self, params: &ParamSet, x: &Tensor) -> (Tensor, RevInStats) {
        let mut g = Graph::new();
        let b = params.bind(&mut g, false);
        let (v, stats) = self.normalize_g(&mut g, &b, x);
        (g.value(v).reshape(x.shape()).expect("shape"), stats)
    }

    pub fn denormalize(&self, params: &ParamSet, y: &Tensor, stats: &RevInStats) -> Tensor {
        let mut g = Graph::new();
        let b = params.bind(&mut g, false);
        let yv = g.constant(y);
        let v = self.denormalize_g(&mut g, &b, yv, stats);
        g.value(v).reshape(y.shape()).expect("shape")
    }
}
