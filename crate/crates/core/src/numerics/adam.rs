//! Adam with bias correction and decoupled weight decay.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros = |t: &Tensor| Tensor::zeros(t.shape());
        Self {
            config,
            step: 0,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update of every parameter. `names` label errors and may be empty.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], names: &[String]) -> Result<()> {
        let c = self.config;
        if !(c.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("Adam lr must be > 0, got {}", c.lr)));
        }
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::dim(
                "adam_step",
                format!("{} params, {} grads, {} moments", params.len(), grads.len(), self.m.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(Error::dim("adam_step", format!("param {i}: {:?} vs {:?}", p.shape(), g.shape())));
            }
            if !g.is_finite() {
                let name = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
                return Err(Error::NonFinite(format!("gradient of parameter `{name}`")));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let decay = 1.0 - c.lr * c.weight_decay;

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
            for j in 0..p.len() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] = p[j] * decay - c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn adam(lr: f64, wd: f64, p: &[Tensor]) -> AdamState {
        AdamState::new(
            AdamConfig {
                lr,
                weight_decay: wd,
                ..AdamConfig::default()
            },
            p,
        )
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps) ≈ lr.
        let mut p = vec![Tensor::vector(vec![0.5])];
        let mut opt = adam(1e-3, 0.0, &p);
        opt.step(&mut p, &[Tensor::vector(vec![1.0])], &[]).unwrap();
        let expected = 0.5 - 1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((p[0].data()[0] - expected).abs() < 1e-15);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![Tensor::vector(vec![1.0, -2.0, 3.0])];
        let before = p.clone();
        let mut opt = adam(1e-3, 0.0, &p);
        for _ in 0..5 {
            opt.step(&mut p, &[Tensor::zeros(&[3])], &[]).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn minimizes_square() {
        let mut p = vec![Tensor::vector(vec![1.0])];
        let mut opt = adam(0.1, 0.0, &p);
        for _ in 0..100 {
            let g = Tensor::vector(vec![2.0 * p[0].data()[0]]);
            opt.step(&mut p, &[g], &[]).unwrap();
        }
        assert!(p[0].data()[0].abs() < 0.05, "theta = {}", p[0].data()[0]);
    }

    #[test]
    fn decoupled_weight_decay_shrinks_before_update() {
        let mut p = vec![Tensor::vector(vec![2.0])];
        let mut opt = adam(0.1, 0.5, &p);
        opt.step(&mut p, &[Tensor::zeros(&[1])], &[]).unwrap();
        assert!((p[0].data()[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut p = vec![Tensor::vector(vec![1.0]), Tensor::vector(vec![1.0])];
        let mut opt = adam(1e-3, 0.0, &p);
        let names = vec!["phi.0.w1".to_string(), "K".to_string()];
        let err = opt
            .step(&mut p, &[Tensor::vector(vec![0.0]), Tensor::vector(vec![f64::NAN])], &names)
            .unwrap_err();
        assert!(err.to_string().contains("`K`"), "{err}");
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![Tensor::vector(vec![3.0, 4.0])];
        let n = clip_global_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert!((g[0].sum_squares().sqrt() - 1.0).abs() < 1e-12);
    }
}
