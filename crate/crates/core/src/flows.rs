//! Additive coupling layers and the invertible encoder built from them.
//!
//! Each layer splits its input into index halves `[0, n/2)` and `[n/2, n)`,
//! passes one half through and shifts the other by a one-hidden-layer MLP of
//! the passed half. Consecutive layers alternate which half is passed, so a
//! stack of two or more layers can transform every coordinate. The inverse
//! subtracts the same shift, which makes the stack exactly invertible and
//! volume preserving.

use crate::error::{Error, Result};
use crate::nn::{Activation, Init, Mlp, LEAKY_SLOPE};
use crate::numerics::{Bound, Graph, ParamSet, Rng, Tensor, Var};

#[derive(Clone, Debug)]
pub struct CouplingLayer {
    dim: usize,
    /// `true`: `[0, n/2)` passes through and `[n/2, n)` is shifted.
    pass_low: bool,
    net: Mlp,
}

impl CouplingLayer {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        dim: usize,
        width: usize,
        pass_low: bool,
        init: Init,
        rng: &mut Rng,
    ) -> Result<Self> {
        if dim < 2 || dim % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "coupling layers need an even dimension >= 2, got {dim}"
            )));
        }
        let half = dim / 2;
        let net = Mlp::new(
            params,
            prefix,
            &[half, width, half],
            Activation::LeakyRelu(LEAKY_SLOPE),
            init,
            rng,
        );
        Ok(Self { dim, pass_low, net })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    /// Index ranges `(passed, shifted)`.
    pub fn partition(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let h = self.dim / 2;
        if self.pass_low {
            (0..h, h..self.dim)
        } else {
            (h..self.dim, 0..h)
        }
    }

    fn apply(&self, g: &mut Graph<'_>, b: &Bound, x: Var, sign: f64) -> Var {
        let h = self.dim / 2;
        let lo = g.slice_cols(x, 0, h);
        let hi = g.slice_cols(x, h, self.dim);
        let (pass, shifted) = if self.pass_low { (lo, hi) } else { (hi, lo) };
        let shift = self.net.forward(g, b, pass);
        let moved = if sign > 0.0 {
            g.add(shifted, shift)
        } else {
            g.sub(shifted, shift)
        };
        if self.pass_low {
            g.concat_cols(pass, moved)
        } else {
            g.concat_cols(moved, pass)
        }
    }

    pub fn forward_g(&self, g: &mut Graph<'_>, b: &Bound, x: Var) -> Var {
        self.apply(g, b, x, 1.0)
    }

    pub fn inverse_g(&self, g: &mut Graph<'_>, b: &Bound, y: Var) -> Var {
        self.apply(g, b, y, -1.0)
    }
}

/// The encoder `φ` and its exact inverse `φ⁻¹`.
#[derive(Clone, Debug)]
pub struct InvertibleEncoder {
    dim: usize,
    layers: Vec<CouplingLayer>,
}

impl InvertibleEncoder {
    /// `k` coupling layers of hidden width `width`; `k = 0` is the identity.
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        dim: usize,
        k: usize,
        width: usize,
        init: Init,
        rng: &mut Rng,
    ) -> Result<Self> {
        if dim % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "the invertible encoder needs an even dimension, got {dim}"
            )));
        }
        let layers = (0..k)
            .map(|i| {
                CouplingLayer::new(params, &format!("{prefix}.{i}"), dim, width, i % 2 == 0, init, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dim, layers })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> &[CouplingLayer] {
        &self.layers
    }

    pub fn forward_g(&self, g: &mut Graph<'_>, b: &Bound, x: Var) -> Var {
        self.layers.iter().fold(x, |h, l| l.forward_g(g, b, h))
    }

    pub fn inverse_g(&self, g: &mut Graph<'_>, b: &Bound, z: Var) -> Var {
        self.layers.iter().rev().fold(z, |h, l| l.inverse_g(g, b, h))
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.dim {
            return Err(Error::dim(
                "invertible encoder",
                format!("expected {} columns, got {:?}", self.dim, x.shape()),
            ));
        }
        Ok(())
    }

    /// `φ(x)` for a vector or a row-stacked batch.
    pub fn forward(&self, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        Ok(eval(params, x, |g, b, v| self.forward_g(g, b, v)))
    }

    /// `φ⁻¹(z)` for a vector or a row-stacked batch.
    pub fn inverse(&self, params: &ParamSet, z: &Tensor) -> Result<Tensor> {
        self.check(z)?;
        Ok(eval(params, z, |g, b, v| self.inverse_g(g, b, v)))
    }

    /// `log |det ∂φ/∂x|`, identically zero for additive couplings.
    pub fn log_det_jacobian(&self, _x: &Tensor) -> f64 {
        0.0
    }
}

pub fn coupling_forward(layer: &CouplingLayer, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
    if x.cols() != layer.dim {
        return Err(Error::dim("coupling_forward", format!("expected {}, got {:?}", layer.dim, x.shape())));
    }
    Ok(eval(params, x, |g, b, v| layer.forward_g(g, b, v)))
}

pub fn coupling_inverse(layer: &CouplingLayer, params: &ParamSet, y: &Tensor) -> Result<Tensor> {
    if y.cols() != layer.dim {
        return Err(Error::dim("coupling_inverse", format!("expected {}, got {:?}", layer.dim, y.shape())));
    }
    Ok(eval(params, y, |g, b, v| layer.inverse_g(g, b, v)))
}

/// Runs `f` on frozen parameters and returns a result shaped like `x`.
pub(crate) fn eval(
    params: &ParamSet,
    x: &Tensor,
    f: impl FnOnce(&mut Graph<'_>, &Bound, Var) -> Var,
) -> Tensor {
    let mut g = Graph::new();
    let b = params.bind(&mut g, false);
    let xv = g.constant(x);
    let out = f(&mut g, &b, xv);
    let t = g.value(out).clone();
    if x.rank() == 1 {
        Tensor::vector(t.into_data())
    } else {
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encoder(dim: usize, k: usize, w: usize, init: Init, seed: u64) -> (ParamSet, InvertibleEncoder) {
        let mut p = ParamSet::new();
        let mut rng = Rng::new(seed);
        let e = InvertibleEncoder::new(&mut p, "phi", dim, k, w, init, &mut rng).unwrap();
        (p, e)
    }

    /// Sets every coupling net to the constant `c` (zero weights, output bias `c`).
    fn constant_shift(p: &mut ParamSet, e: &InvertibleEncoder, consts: &[f64]) {
        for (layer, &c) in e.layers().iter().zip(consts) {
            for &(w, b) in layer.net().layers() {
                *p.get_mut(w) = Tensor::zeros(p.get(w).shape());
                *p.get_mut(b) = Tensor::zeros(p.get(b).shape());
            }
            let (_, last_b) = *layer.net().layers().last().unwrap();
            let shape = p.get(last_b).shape().to_vec();
            *p.get_mut(last_b) = Tensor::full(&shape, c);
        }
    }

    #[test]
    fn zero_layer_is_identity() {
        let (p, e) = encoder(4, 1, 8, Init::Zeros, 0);
        let x = Tensor::vector(vec![1.0, -2.0, 3.0, 0.5]);
        assert_eq!(coupling_forward(&e.layers()[0], &p, &x).unwrap(), x);
        assert_eq!(coupling_inverse(&e.layers()[0], &p, &x).unwrap(), x);
    }

    #[test]
    fn constant_net_shifts_second_half() {
        let (mut p, e) = encoder(4, 1, 8, Init::Uniform, 0);
        constant_shift(&mut p, &e, &[2.5]);
        let x = Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]);
        let y = coupling_forward(&e.layers()[0], &p, &x).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 5.5, 6.5]);
        let back = coupling_inverse(&e.layers()[0], &p, &x).unwrap();
        assert_eq!(back.data(), &[1.0, 2.0, 0.5, 1.5]);
    }

    #[test]
    fn stacked_constant_shifts_hit_both_halves() {
        let (mut p, e) = encoder(4, 2, 8, Init::Uniform, 0);
        constant_shift(&mut p, &e, &[1.0, -3.0]);
        let x = Tensor::vector(vec![0.0, 0.0, 0.0, 0.0]);
        let y = e.forward(&p, &x).unwrap();
        // layer 0 shifts [2,4) by +1, layer 1 shifts [0,2) by −3
        assert_eq!(y.data(), &[-3.0, -3.0, 1.0, 1.0]);
        assert_eq!(e.inverse(&p, &y).unwrap(), x);
    }

    #[test]
    fn random_round_trip() {
        let (p, e) = encoder(96, 4, 256, Init::Uniform, 3);
        let mut rng = Rng::new(9);
        let x = rng.uniform_tensor(&[8, 96], -10.0, 10.0);
        let z = e.forward(&p, &x).unwrap();
        assert!(z.max_abs_diff(&x) > 1e-3, "encoder should not be trivial");
        let back = e.inverse(&p, &z).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-9);
    }

    #[test]
    fn rejects_odd_dimension_and_bad_input() {
        let mut p = ParamSet::new();
        let mut rng = Rng::new(0);
        assert!(InvertibleEncoder::new(&mut p, "phi", 5, 2, 4, Init::Uniform, &mut rng).is_err());
        let (p, e) = encoder(4, 2, 4, Init::Uniform, 0);
        assert!(e.forward(&p, &Tensor::vector(vec![1.0; 6])).is_err());
    }

    #[test]
    fn partitions_alternate_and_cover() {
        let (_, e) = encoder(6, 3, 4, Init::Uniform, 0);
        let parts: Vec<_> = e.layers().iter().map(|l| l.partition()).collect();
        assert_eq!(parts[0], (0..3, 3..6));
        assert_eq!(parts[1], (3..6, 0..3));
        assert_eq!(parts[2], (0..3, 3..6));
    }

    #[test]
    fn log_det_is_zero() {
        let (_, e) = encoder(4, 3, 8, Init::Uniform, 1);
        assert_eq!(e.log_det_jacobian(&Tensor::vector(vec![1.0; 4])), 0.0);
    }
}
