//! The Koopman autoencoder family.
//!
//! One [`AikaeModel`] covers all four variants:
//!
//! | variant   | encoder                     | latent `d` | decoder              |
//! |-----------|-----------------------------|------------|----------------------|
//! | `Kae`     | MLP `ℝⁿ → ℝᵈ`               | free       | MLP `ℝᵈ → ℝⁿ`        |
//! | `Ikae`    | `φ(x)`                      | `n`        | `φ⁻¹(z)`             |
//! | `IkaeZp`  | `φ((x; 0ₚ))`                | `n + p`    | first `n` of `φ⁻¹(z)`|
//! | `Aikae`   | `(φ(x); χ(x))`              | `n + p`    | `φ⁻¹(z_{1:n})`       |
//!
//! Latent dynamics are `z_{t+τ} = K^τ z_t`. Batches are row-stacked, so one
//! latent step is `Z·Kᵀ`.

mod checkpoint;
mod latent;
mod revin;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use latent::{delay_embed, LatentState};
pub use revin::{RevIn, RevInStats, REVIN_EPS};

use crate::error::{Error, Result};
use crate::flows::InvertibleEncoder;
use crate::nn::{Activation, Init, Mlp};
use crate::numerics::rng::INIT_STREAM;
use crate::numerics::{Bound, Graph, ParamId, ParamSet, Rng, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Kae,
    Ikae,
    IkaeZp,
    Aikae,
}

impl Variant {
    pub fn is_invertible(self) -> bool {
        !matches!(self, Variant::Kae)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Kae => "kae",
            Variant::Ikae => "ikae",
            Variant::IkaeZp => "ikae_zp",
            Variant::Aikae => "aikae",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "kae" => Ok(Variant::Kae),
            "ikae" => Ok(Variant::Ikae),
            "ikae_zp" | "ikaezp" => Ok(Variant::IkaeZp),
            "aikae" => Ok(Variant::Aikae),
            other => Err(Error::InvalidArgument(format!("unknown model variant `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    /// State (input) dimension.
    pub n: usize,
    /// Augmentation size (AIKAE) or padding size (IKAE-zp).
    pub p: usize,
    /// Latent size for the KAE variant; ignored by the invertible variants.
    pub latent_dim: usize,
    /// Number of coupling layers.
    pub k: usize,
    /// Hidden width of each coupling network.
    pub w: usize,
    /// Hidden widths of the augmentation encoder `χ`.
    pub chi_hidden: Vec<usize>,
    /// Hidden widths of the KAE encoder; the decoder mirrors them.
    pub kae_hidden: Vec<usize>,
    pub revin: bool,
    /// Delay-embedding length `m` of the input state.
    pub delay: usize,
}

impl ModelConfig {
    pub fn new(variant: Variant, n: usize, p: usize) -> Self {
        Self {
            variant,
            n,
            p,
            latent_dim: n + p,
            k: 4,
            w: 256,
            chi_hidden: vec![256, 128],
            kae_hidden: vec![256, 128],
            revin: false,
            delay: 1,
        }
    }

    pub fn with_flow(mut self, k: usize, w: usize) -> Self {
        self.k = k;
        self.w = w;
        self
    }

    pub fn with_revin(mut self, on: bool) -> Self {
        self.revin = on;
        self
    }

    pub fn with_delay(mut self, m: usize) -> Self {
        self.delay = m;
        self
    }

    pub fn with_chi_hidden(mut self, widths: Vec<usize>) -> Self {
        self.chi_hidden = widths;
        self
    }

    /// An AIKAE or IKAE-zp with `p = 0` is an IKAE.
    pub fn normalized(mut self) -> Self {
        if matches!(self.variant, Variant::Aikae | Variant::IkaeZp) && self.p == 0 {
            self.variant = Variant::Ikae;
        }
        if self.variant == Variant::Ikae {
            self.p = 0;
        }
        if self.variant != Variant::Kae {
            self.latent_dim = self.n + self.p;
        }
        self
    }

    /// Latent dimension `d`.
    pub fn d(&self) -> usize {
        match self.variant {
            Variant::Kae => self.latent_dim,
            Variant::Ikae => self.n,
            Variant::IkaeZp | Variant::Aikae => self.n + self.p,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("state dimension n must be positive".into()));
        }
        if self.delay == 0 {
            return Err(Error::InvalidArgument("delay m must be positive".into()));
        }
        if self.variant == Variant::Kae && self.latent_dim == 0 {
            return Err(Error::InvalidArgument("KAE latent dimension must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AikaeModel {
    config: ModelConfig,
    params: ParamSet,
    phi: Option<InvertibleEncoder>,
    chi: Option<Mlp>,
    kae_encoder: Option<Mlp>,
    kae_decoder: Option<Mlp>,
    koopman: ParamId,
    revin: Option<RevIn>,
}

impl AikaeModel {
    /// Randomly initialized model: MLP weights uniform in `±1/√fan_in`,
    /// biases zero, `K = I`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::with_init(config, Init::Uniform, seed)
    }

    /// Model with every network zeroed: `φ` and `χ` start as identity and zero.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        Self::with_init(config, Init::Zeros, 0)
    }

    pub fn with_init(config: ModelConfig, init: Init, seed: u64) -> Result<Self> {
        let config = config.normalized();
        config.validate()?;
        let mut rng = Rng::derive(seed, INIT_STREAM);
        let mut params = ParamSet::new();
        let (n, p, d) = (config.n, config.p, config.d());

        let (mut phi, mut chi, mut enc, mut dec) = (None, None, None, None);
        match config.variant {
            Variant::Ikae | Variant::Aikae => {
                phi = Some(InvertibleEncoder::new(&mut params, "phi", n, config.k, config.w, init, &mut rng)?);
            }
            Variant::IkaeZp => {
                phi = Some(InvertibleEncoder::new(&mut params, "phi", n + p, config.k, config.w, init, &mut rng)?);
            }
            Variant::Kae => {
                let mut sizes = vec![n];
                sizes.extend(&config.kae_hidden);
                sizes.push(d);
                enc = Some(Mlp::new(&mut params, "encoder", &sizes, Activation::Relu, init, &mut rng));
                let mut sizes = vec![d];
                sizes.extend(config.kae_hidden.iter().rev());
                sizes.push(n);
                dec = Some(Mlp::new(&mut params, "decoder", &sizes, Activation::Relu, init, &mut rng));
            }
        }
        if config.variant == Variant::Aikae {
            let mut sizes = vec![n];
            sizes.extend(&config.chi_hidden);
            sizes.push(p);
            chi = Some(Mlp::new(&mut params, "chi", &sizes, Activation::Relu, init, &mut rng));
        }
        let koopman = params.add("K", Tensor::eye(d));
        let revin = config.revin.then(|| RevIn::new(&mut params, "revin"));

        Ok(Self {
            config,
            params,
            phi,
            chi,
            kae_encoder: enc,
            kae_decoder: dec,
            koopman,
            revin,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn n(&self) -> usize {
        self.config.n
    }

    pub fn d(&self) -> usize {
        self.config.d()
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn phi(&self) -> Option<&InvertibleEncoder> {
        self.phi.as_ref()
    }

    pub fn chi(&self) -> Option<&Mlp> {
        self.chi.as_ref()
    }

    pub fn revin(&self) -> Option<&RevIn> {
        self.revin.as_ref()
    }

    pub fn koopman_id(&self) -> ParamId {
        self.koopman
    }

    pub fn koopman(&self) -> &Tensor {
        self.params.get(self.koopman)
    }

    pub fn set_koopman(&mut self, k: Tensor) -> Result<()> {
        let d = self.d();
        if k.shape() != [d, d] {
            return Err(Error::dim("set_koopman", format!("expected {d}×{d}, got {:?}", k.shape())));
        }
        *self.params.get_mut(self.koopman) = k;
        Ok(())
    }

    fn check_cols(&self, op: &'static str, t: &Tensor, want: usize) -> Result<()> {
        if t.cols() != want {
            return Err(Error::dim(op, format!("expected {want} columns, got {:?}", t.shape())));
        }
        Ok(())
    }

    // ---- graph-level building blocks (row-stacked batches) ----

    /// `φ(x)` for IKAE/AIKAE, `φ((x; 0))` for IKAE-zp, the MLP encoder for KAE.
    pub fn phi_g(&self, g: &mut Graph<'_>, b: &Bound, x: Var) -> Var {
        match self.config.variant {
            Variant::Kae => self.kae_encoder.as_ref().unwrap().forward(g, b, x),
            Variant::IkaeZp => {
                let rows = g.shape(x).0;
                let pad = g.constant_owned(Tensor::zeros(&[rows, self.config.p]));
                let xp = g.concat_cols(x, pad);
                self.phi.as_ref().unwrap().forward_g(g, b, xp)
            }
            Variant::Ikae | Variant::Aikae => self.phi.as_ref().unwrap().forward_g(g, b, x),
        }
    }

    /// `χ(x)`; `None` unless the model is an AIKAE.
    pub fn chi_g(&self, g: &mut Graph<'_>, b: &Bound, x: Var) -> Option<Var> {
        self.chi.as_ref().map(|c| c.forward(g, b, x))
    }

    pub fn encode_g(&self, g: &mut Graph<'_>, b: &Bound, x: Var) -> Var {
        let z = self.phi_g(g, b, x);
        match self.chi_g(g, b, x) {
            Some(a) => g.concat_cols(z, a),
            None => z,
        }
    }

    pub fn decode_g(&self, g: &mut Graph<'_>, b: &Bound, z: Var) -> Var {
        let n = self.config.n;
        match self.config.variant {
            Variant::Kae => self.kae_decoder.as_ref().unwrap().forward(g, b, z),
            Variant::Ikae => self.phi.as_ref().unwrap().inverse_g(g, b, z),
            Variant::IkaeZp => {
                let full = self.phi.as_ref().unwrap().inverse_g(g, b, z);
                g.slice_cols(full, 0, n)
            }
            Variant::Aikae => {
                let zi = g.slice_cols(z, 0, n);
                self.phi.as_ref().unwrap().inverse_g(g, b, zi)
            }
        }
    }

    /// One latent step `Z·Kᵀ`.
    pub fn advance_g(&self, g: &mut Graph<'_>, b: &Bound, z: Var) -> Var {
        g.matmul_t(z, b.var(self.koopman))
    }

    /// Predictions for `τ = 1..=steps` from the row-stacked windows `x`,
    /// with RevIN applied around the autoencoder when enabled.
    pub fn predict_g<'a>(&self, g: &mut Graph<'a>, b: &Bound, x: &'a Tensor, steps: usize) -> Vec<Var> {
        let (input, stats) = match &self.revin {
            Some(r) => {
                let (v, s) = r.normalize_g(g, b, x);
                (v, Some(s))
            }
            None => (g.constant(x), None),
        };
        let mut z = self.encode_g(g, b, input);
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            z = self.advance_g(g, b, z);
            let dec = self.decode_g(g, b, z);
            out.push(match (&self.revin, &stats) {
                (Some(r), Some(s)) => r.denormalize_g(g, b, dec, s),
                _ => dec,
            });
        }
        out
    }

    // ---- tensor-level operations ----

    /// `z = Φ(x)` for one state (no RevIN).
    pub fn encode(&self, x: &Tensor) -> Result<LatentState> {
        self.check_cols("encode", x, self.config.n)?;
        let z = crate::flows::eval(&self.params, &x.as_row(), |g, b, v| self.encode_g(g, b, v));
        Ok(LatentState::new(z, self.config.n.min(self.d())))
    }

    /// Row-stacked batch encoding (no RevIN).
    pub fn encode_batch(&self, x: &Tensor) -> Result<Tensor> {
        self.check_cols("encode", x, self.config.n)?;
        Ok(crate::flows::eval(&self.params, &x.as_row(), |g, b, v| self.encode_g(g, b, v)))
    }

    pub fn decode(&self, z: &LatentState) -> Result<Tensor> {
        self.check_cols("decode", z.z(), self.d())?;
        let x = crate::flows::eval(&self.params, &z.z().as_row(), |g, b, v| self.decode_g(g, b, v));
        Ok(Tensor::vector(x.into_data()))
    }

    pub fn decode_batch(&self, z: &Tensor) -> Result<Tensor> {
        self.check_cols("decode", z, self.d())?;
        Ok(crate::flows::eval(&self.params, &z.as_row(), |g, b, v| self.decode_g(g, b, v)))
    }

    /// `[z0, K z0, …, K^steps z0]`.
    pub fn rollout(&self, z0: &LatentState, steps: usize) -> Result<Vec<LatentState>> {
        self.check_cols("rollout", z0.z(), self.d())?;
        let k = self.koopman();
        let d = self.d();
        let mut out = Vec::with_capacity(steps + 1);
        out.push(z0.clone());
        let mut cur = z0.z().data().to_vec();
        for _ in 0..steps {
            let next: Vec<f64> = (0..d)
                .map(|i| k.row(i).iter().zip(&cur).map(|(a, b)| a * b).sum())
                .collect();
            out.push(LatentState::new(Tensor::vector(next.clone()), z0.invertible_dim()));
            cur = next;
        }
        Ok(out)
    }

    /// `x̂_{t+τ} = Φ⁻¹(K^τ Φ(x_t))` for `τ = 1..=steps`; one output row per step.
    pub fn predict(&self, x_window: &Tensor, horizon_steps: usize) -> Result<Tensor> {
        if horizon_steps == 0 {
            return Err(Error::InvalidArgument("horizon_steps must be >= 1".into()));
        }
        self.check_cols("predict", x_window, self.config.n)?;
        if x_window.rows() != 1 {
            return Err(Error::dim("predict", "expected a single window"));
        }
        let rows = self.predict_batch(&x_window.as_row(), horizon_steps)?;
        let data: Vec<f64> = rows.into_iter().flat_map(Tensor::into_data).collect();
        Tensor::matrix(horizon_steps, self.config.n, data)
    }

    /// Batched [`predict`](Self::predict): element `τ−1` holds all windows at step `τ`.
    pub fn predict_batch(&self, windows: &Tensor, steps: usize) -> Result<Vec<Tensor>> {
        self.check_cols("predict", windows, self.config.n)?;
        let windows = windows.as_row();
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        let outs = self.predict_g(&mut g, &b, &windows, steps);
        let res: Vec<Tensor> = outs.into_iter().map(|v| g.value(v).clone()).collect();
        for t in &res {
            t.ensure_finite("prediction")?;
        }
        Ok(res)
    }

    /// Forecast `T_P` raw steps from a univariate delayed window of length
    /// `T_L = n`: each latent step advances one block of `n` values, blocks
    /// are concatenated and the last one truncated.
    pub fn forecast_horizon(&self, x_window: &Tensor, t_p: usize) -> Result<Tensor> {
        let batch = self.forecast_horizon_batch(&x_window.as_row(), t_p)?;
        Ok(Tensor::vector(batch.into_data()))
    }

    /// Row-stacked [`forecast_horizon`](Self::forecast_horizon).
    pub fn forecast_horizon_batch(&self, windows: &Tensor, t_p: usize) -> Result<Tensor> {
        if t_p == 0 {
            return Err(Error::InvalidArgument("prediction length T_P must be positive".into()));
        }
        let n = self.config.n;
        self.check_cols("forecast_horizon", windows, n)?;
        let steps = t_p.div_ceil(n);
        let blocks = self.predict_batch(windows, steps)?;
        let rows = windows.rows();
        let mut out = Vec::with_capacity(rows * t_p);
        for r in 0..rows {
            let mut row: Vec<f64> = blocks.iter().flat_map(|blk| blk.row(r).iter().copied()).collect();
            row.truncate(t_p);
            out.extend(row);
        }
        Tensor::matrix(rows, t_p, out)
    }

    /// `log |det ∂φ/∂x|` of the invertible encoder (zero for additive couplings).
    pub fn log_det_jacobian(&self, x: &Tensor) -> f64 {
        self.phi.as_ref().map_or(0.0, |p| p.log_det_jacobian(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_parsing() {
        assert_eq!("IKAE-zp".parse::<Variant>().unwrap(), Variant::IkaeZp);
        assert_eq!("aikae".parse::<Variant>().unwrap(), Variant::Aikae);
        assert!("vae".parse::<Variant>().is_err());
    }

    #[test]
    fn zero_augmentation_degenerates_to_ikae() {
        let m = AikaeModel::new(ModelConfig::new(Variant::Aikae, 4, 0).with_flow(2, 8), 0).unwrap();
        assert_eq!(m.variant(), Variant::Ikae);
        assert_eq!(m.d(), 4);
    }

    #[test]
    fn latent_dimensions() {
        let cfg = |v| ModelConfig::new(v, 6, 2).with_flow(2, 8).with_chi_hidden(vec![8]);
        assert_eq!(AikaeModel::new(cfg(Variant::Aikae), 0).unwrap().d(), 8);
        assert_eq!(AikaeModel::new(cfg(Variant::IkaeZp), 0).unwrap().d(), 8);
        assert_eq!(AikaeModel::new(cfg(Variant::Ikae), 0).unwrap().d(), 6);
        let mut kae = cfg(Variant::Kae);
        kae.latent_dim = 5;
        kae.kae_hidden = vec![8];
        assert_eq!(AikaeModel::new(kae, 0).unwrap().d(), 5);
    }

    #[test]
    fn zeroed_aikae_encodes_with_zero_augmentation() {
        let m = AikaeModel::zeroed(ModelConfig::new(Variant::Aikae, 4, 3).with_flow(2, 8)).unwrap();
        let x = Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]);
        let z = m.encode(&x).unwrap();
        assert_eq!(z.z().data(), &[1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn zeroed_zero_padding_maps_pad_to_pad() {
        let m = AikaeModel::zeroed(ModelConfig::new(Variant::IkaeZp, 4, 2).with_flow(3, 8)).unwrap();
        let x = Tensor::vector(vec![1.0, -2.0, 3.0, 0.5]);
        assert_eq!(m.encode(&x).unwrap().z().data(), &[1.0, -2.0, 3.0, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn decode_rejects_wrong_latent_size() {
        let m = AikaeModel::new(ModelConfig::new(Variant::Ikae, 4, 0).with_flow(2, 8), 0).unwrap();
        let z = LatentState::new(Tensor::vector(vec![0.0; 5]), 4);
        assert!(m.decode(&z).is_err());
        assert!(m.encode(&Tensor::vector(vec![0.0; 3])).is_err());
    }

    #[test]
    fn geometric_rollout() {
        let mut m = AikaeModel::new(ModelConfig::new(Variant::Ikae, 2, 0).with_flow(2, 4), 0).unwrap();
        m.set_koopman(Tensor::diag(&[0.5, 0.5])).unwrap();
        let z0 = LatentState::new(Tensor::vector(vec![1.0, 1.0]), 2);
        let states = m.rollout(&z0, 6).unwrap();
        assert_eq!(states.len(), 7);
        for (tau, s) in states.iter().enumerate() {
            let want = 2f64.powi(-(tau as i32));
            assert!(s.z().data().iter().all(|&v| (v - want).abs() < 1e-15));
        }
    }

    #[test]
    fn forecast_block_count() {
        let m = AikaeModel::zeroed(ModelConfig::new(Variant::Ikae, 4, 0).with_flow(2, 4)).unwrap();
        let x = Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]);
        let f = m.forecast_horizon(&x, 10).unwrap();
        assert_eq!(f.data(), &[1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0, 1.0, 2.0]);
        assert!(m.forecast_horizon(&x, 0).is_err());
    }

    #[test]
    fn parameter_count_matches_architecture_arithmetic() {
        let ikae = AikaeModel::new(ModelConfig::new(Variant::Ikae, 96, 0), 0).unwrap();
        // per coupling layer: 48·256 + 256 + 256·48 + 48
        let coupling = 4 * (48 * 256 + 256 + 256 * 48 + 48);
        assert_eq!(ikae.param_count(), coupling + 96 * 96);
        let aikae = AikaeModel::new(ModelConfig::new(Variant::Aikae, 96, 32), 0).unwrap();
        let chi = 96 * 256 + 256 + 256 * 128 + 128 + 128 * 32 + 32;
        assert_eq!(aikae.param_count(), coupling + chi + 128 * 128);
    }
}
