//! Central finite-difference verification of tape gradients.

use super::rng::Rng;
use super::tape::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Symmetric difference formula used for the numeric derivative.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) − f(x−h)) / 2h`
    ThreePoint,
    /// Fourth-order `(−f(x+2h) + 8f(x+h) − 8f(x−h) + f(x−2h)) / 12h`. Allows a
    /// larger `h`, which keeps roundoff small when the loss is large compared
    /// to individual gradient entries.
    #[default]
    FivePoint,
}

const KINK_SHRINK: f64 = 10.0;
/// Narrowest step tried is `h / KINK_SHRINK^MAX_SHRINKS`.
const MAX_SHRINKS: i32 = 3;
const ROUNDOFF_SLACK: f64 = 16.0;

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub h: f64,
    pub stencil: Stencil,
    /// Coordinates checked per parameter tensor; larger tensors are sampled.
    pub max_coords_per_param: usize,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-4,
            stencil: Stencil::FivePoint,
            max_coords_per_param: 32,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, flat coordinate)` of the largest error.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

impl GradcheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Relative error `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `value` around `params`.
pub fn gradcheck_with(
    mut value: impl FnMut(&[Tensor]) -> Result<f64>,
    analytic: &[Tensor],
    params: &[Tensor],
    opts: &GradcheckOptions,
) -> Result<GradcheckReport> {
    if !(opts.h > 0.0) {
        return Err(Error::InvalidArgument(format!("gradcheck step must be > 0, got {}", opts.h)));
    }
    let mut rng = Rng::new(opts.seed);
    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };

    for (pi, p) in params.iter().enumerate() {
        let coords: Vec<usize> = if p.len() <= opts.max_coords_per_param {
            (0..p.len()).collect()
        } else {
            // the first entry is always included so targeted corruptions are seen
            std::iter::once(0)
                .chain((1..opts.max_coords_per_param).map(|_| rng.below(p.len())))
                .collect()
        };
        for j in coords {
            let orig = p.data()[j];
            let mut at = |offset: f64| -> Result<f64> {
                work[pi].data_mut()[j] = orig + offset;
                let f = value(&work)?;
                if !f.is_finite() {
                    return Err(Error::NonFinite(format!("loss at perturbed parameter {pi}[{j}]")));
                }
                Ok(f)
            };
            let f0 = at(0.0)?.abs();
            let mut estimate = |h: f64| -> Result<f64> {
                Ok(match opts.stencil {
                    Stencil::ThreePoint => (at(h)? - at(-h)?) / (2.0 * h),
                    // symmetric differences first, so a flat direction gives exactly 0
                    Stencil::FivePoint => {
                        let near = at(h)? - at(-h)?;
                        let far = at(2.0 * h)? - at(-2.0 * h)?;
                        (8.0 * near - far) / (12.0 * h)
                    }
                })
            };
            // A kink inside the stencil shows up as disagreement with a
            // narrower one beyond what roundoff at the narrow step explains.
            // Keep narrowing until two steps agree; the last one is trusted.
            let mut numeric = estimate(opts.h)?;
            for k in 1..=MAX_SHRINKS {
                let h = opts.h / KINK_SHRINK.powi(k);
                let narrow = estimate(h)?;
                let noise = ROUNDOFF_SLACK * f64::EPSILON * f0 / h;
                let agree = noise.max(1e-6 * numeric.abs().max(narrow.abs()));
                if (numeric - narrow).abs() <= agree {
                    break;
                }
                numeric = narrow;
            }
            work[pi].data_mut()[j] = orig;
            let err = relative_error(analytic[pi].data()[j], numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((pi, j));
            }
        }
    }
    Ok(report)
}

/// Value and tape gradient of a graph-built scalar at `params`.
pub fn value_and_grad<F>(loss: &F, params: &[Tensor]) -> Result<(f64, Vec<Tensor>)>
where
    F: for<'g> Fn(&mut Graph<'g>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p)).collect();
    let out = loss(&mut g, &vars)?;
    let v = g.scalar(out);
    if !v.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let grads = g.backward(out);
    Ok((v, vars.iter().map(|&x| grads.get(x)).collect()))
}

/// Evaluates a graph-built scalar without differentiating it.
pub fn value_of<F>(loss: &F, params: &[Tensor]) -> Result<f64>
where
    F: for<'g> Fn(&mut Graph<'g>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.constant(p)).collect();
    let out = loss(&mut g, &vars)?;
    Ok(g.scalar(out))
}

/// Checks the tape gradient of `loss` against central differences.
pub fn gradcheck<F>(loss: F, params: &[Tensor], opts: &GradcheckOptions) -> Result<GradcheckReport>
where
    F: for<'g> Fn(&mut Graph<'g>, &[Var]) -> Result<Var>,
{
    let (_, analytic) = value_and_grad(&loss, params)?;
    gradcheck_with(|p| value_of(&loss, p), &analytic, params, opts)
}
