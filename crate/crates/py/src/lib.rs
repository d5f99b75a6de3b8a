//! Python bindings for the `aikae` library.
//!
//! Vectors cross the boundary as lists of floats and matrices as lists of
//! rows, so the module has no dependency on numpy.

use aikae::assimilation::{forecast_at, AssimilationProblem, AssimilationSettings, Constraint, Observation};
use aikae::data::{load_csv, mask_irregular, SampleSet, SeriesDataset, Split, SyntheticSpec};
use aikae::models::{AikaeModel, LatentState, ModelConfig, Variant};
use aikae::numerics::{lstsq_koopman as core_lstsq, Tensor};
use aikae::training::{train as core_train, LossWeights, OrthMode, TrainConfig};
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: aikae::Error) -> PyErr {
    use aikae::Error as E;
    let msg = e.to_string();
    match e {
        E::Dimension { .. } | E::InvalidArgument(_) | E::Parse { .. } => PyValueError::new_err(msg),
        E::NonFinite(_) | E::Divergence { .. } => PyArithmeticError::new_err(msg),
        E::Io(_) => PyOSError::new_err(msg),
        _ => PyRuntimeError::new_err(msg),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for aikae::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Tensor> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Tensor::matrix(rows.len(), cols, rows.concat()).py()
}

fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn constraint(name: &str) -> PyResult<Constraint> {
    match name.replace('_', "-").as_str() {
        "none" => Ok(Constraint::None),
        "exact-initial" => Ok(Constraint::ExactInitial),
        other => Err(PyValueError::new_err(format!(
            "unknown constraint `{other}` (expected none or exact-initial)"
        ))),
    }
}

/// A Koopman autoencoder (KAE, IKAE, IKAE-zp or AIKAE).
#[pyclass(name = "Model", module = "aikae_py")]
pub struct PyModel {
    inner: AikaeModel,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (variant, n, p=0, k=4, w=256, chi_hidden=None, kae_hidden=None, revin=false, delay=1, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        variant: &str,
        n: usize,
        p: usize,
        k: usize,
        w: usize,
        chi_hidden: Option<Vec<usize>>,
        kae_hidden: Option<Vec<usize>>,
        revin: bool,
        delay: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let v: Variant = variant.parse().py()?;
        let mut cfg = ModelConfig::new(v, n, p).with_flow(k, w).with_revin(revin).with_delay(delay);
        if let Some(h) = chi_hidden {
            cfg = cfg.with_chi_hidden(h);
        }
        if let Some(h) = kae_hidden {
            cfg.kae_hidden = h;
        }
        Ok(Self {
            inner: AikaeModel::new(cfg, seed).py()?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: aikae::models::load_checkpoint(path).py()?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: AikaeModel::from_json(text).py()?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        aikae::models::save_checkpoint(&self.inner, path).py()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().py()
    }

    #[getter]
    fn variant(&self) -> String {
        self.inner.variant().to_string()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn koopman(&self) -> Vec<Vec<f64>> {
        rows_of(self.inner.koopman())
    }

    #[setter]
    fn set_koopman(&mut self, rows: Vec<Vec<f64>>) -> PyResult<()> {
        self.inner.set_koopman(matrix(&rows)?).py()
    }

    /// Latent state `[z_i, z_a]` of one state vector.
    fn encode(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.encode(&Tensor::vector(x)).py()?.z().data().to_vec())
    }

    fn decode(&self, z: Vec<f64>) -> PyResult<Vec<f64>> {
        let n = self.inner.n().min(z.len());
        Ok(self.inner.decode(&LatentState::new(Tensor::vector(z), n)).py()?.into_data())
    }

    /// Predicted states for `1..=steps` steps ahead, one row per step.
    fn predict(&self, x: Vec<f64>, steps: usize) -> PyResult<Vec<Vec<f64>>> {
        let x = Tensor::matrix(1, x.len(), x).py()?;
        Ok(rows_of(&self.inner.predict(&x, steps).py()?))
    }

    /// Decoded states at `times` from a latent initial state.
    fn forecast(&self, z0: Vec<f64>, times: Vec<usize>) -> PyResult<Vec<Vec<f64>>> {
        let n = self.inner.n().min(z0.len());
        let preds = forecast_at(&self.inner, &LatentState::new(Tensor::vector(z0), n), &times).py()?;
        Ok(preds.into_iter().map(Tensor::into_data).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(variant={}, n={}, d={}, params={})",
            self.inner.variant(),
            self.inner.n(),
            self.inner.d(),
            self.inner.param_count()
        )
    }
}

/// A multichannel series with train/val/test splits.
#[pyclass(name = "Dataset", module = "aikae_py")]
pub struct PyDataset {
    inner: SeriesDataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load_csv(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: load_csv(path, None).py()?,
        })
    }

    /// `spec` is the JSON form of a synthetic system, e.g.
    /// `{"system": "koopman_quadratic", "a": 0.9, "b": 0.5, "c": 1.0, "x0": [0.5, 0.5]}`.
    #[staticmethod]
    #[pyo3(signature = (spec, length, seed=0))]
    fn synthetic(spec: &str, length: usize, seed: u64) -> PyResult<Self> {
        let spec: SyntheticSpec =
            serde_json::from_str(spec).map_err(|e| PyValueError::new_err(format!("synthetic spec: {e}")))?;
        Ok(Self {
            inner: spec.generate(length, seed).py()?,
        })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn columns(&self) -> Vec<String> {
        self.inner.columns.clone()
    }

    #[getter]
    fn values(&self) -> Vec<Vec<f64>> {
        rows_of(&self.inner.values)
    }

    /// Row counts of the train, validation and test splits.
    #[getter]
    fn splits(&self) -> (usize, usize, usize) {
        let s = self.inner.splits;
        (s.train, s.val, s.test)
    }

    #[getter]
    fn mask(&self) -> Option<Vec<bool>> {
        self.inner.mask.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Copy standardized with the training-split mean and std.
    fn normalized(&self) -> Self {
        Self {
            inner: self.inner.normalized().0,
        }
    }

    #[pyo3(signature = (rate, seed=0))]
    fn mask_irregular(&self, rate: f64, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: mask_irregular(&self.inner, rate, seed).py()?,
        })
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        self.inner.write_csv(path).py()
    }
}

/// Trains `model` in place. `mode="delayed"` builds lookback windows of
/// length `model.n` per channel; `mode="states"` uses each row as a state.
#[pyfunction]
#[pyo3(signature = (model, dataset, mode="delayed", epochs=100, lr=1e-3, batch_size=128, tau_max=8, seed=0, alpha=1.0, orth=0.01, clip=Some(5.0)))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    model: &mut PyModel,
    dataset: &PyDataset,
    mode: &str,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    tau_max: usize,
    seed: u64,
    alpha: f64,
    orth: f64,
    clip: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let ds = &dataset.inner;
    let n = model.inner.n();
    let (tr, val) = match mode {
        "delayed" => (
            SampleSet::delayed(ds, Split::Train, n, tau_max, 1),
            SampleSet::delayed(ds, Split::Val, n, tau_max, 1),
        ),
        "states" => (SampleSet::states(ds, Split::Train, tau_max), SampleSet::states(ds, Split::Val, tau_max)),
        other => return Err(PyValueError::new_err(format!("unknown mode `{other}` (delayed or states)"))),
    };
    let cfg = TrainConfig {
        lr,
        batch_size,
        epochs,
        tau_max,
        seed,
        clip,
        orth_mode: OrthMode::KtK,
        ..TrainConfig::default()
    };
    let weights = LossWeights {
        alpha,
        orth,
        ..LossWeights::default()
    };
    let m = &mut model.inner;
    let report = py.detach(|| core_train(m, &tr, Some(&val), &cfg, &weights)).py()?;
    let out = PyDict::new(py);
    out.set_item("best_epoch", report.best_epoch)?;
    out.set_item("best_val_loss", report.best_val_loss)?;
    out.set_item("train_loss", report.log.iter().map(|l| l.train_loss).collect::<Vec<_>>())?;
    out.set_item("val_loss", report.log.iter().map(|l| l.val_loss).collect::<Vec<_>>())?;
    Ok(out)
}

/// Fits a latent initial state to `(t, x)` observations by gradient descent.
#[pyfunction]
#[pyo3(signature = (model, observations, constraint="none", lr=1e-2, steps=500, grad_tol=1e-6))]
fn assimilate<'py>(
    py: Python<'py>,
    model: &PyModel,
    observations: Vec<(usize, Vec<f64>)>,
    constraint: &str,
    lr: f64,
    steps: usize,
    grad_tol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let c = self::constraint(constraint)?;
    let obs = observations.into_iter().map(|(t, x)| Observation::new(t, Tensor::vector(x))).collect();
    let settings = AssimilationSettings { lr, steps, grad_tol };
    let problem = AssimilationProblem::new(&model.inner, obs, c, settings).py()?;
    let r = py.detach(|| problem.solve()).py()?;
    let out = PyDict::new(py);
    out.set_item("z0", r.z0_star.z().data().to_vec())?;
    out.set_item("cost_trajectory", r.cost_trajectory.clone())?;
    out.set_item("final_cost", r.final_cost())?;
    out.set_item("iterations", r.iterations)?;
    out.set_item("converged", r.converged)?;
    out.set_item("last_observed", r.last_observed)?;
    Ok(out)
}

/// Least-squares transition matrix mapping the columns of `gx` onto `gy`.
#[pyfunction]
fn lstsq_koopman(gx: Vec<Vec<f64>>, gy: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows_of(&core_lstsq(&matrix(&gx)?, &matrix(&gy)?).py()?))
}

/// `(mse, mae)` between two equally shaped matrices.
#[pyfunction]
fn metrics(pred: Vec<Vec<f64>>, truth: Vec<Vec<f64>>) -> PyResult<(f64, f64)> {
    aikae::data::metrics(&matrix(&pred)?, &matrix(&truth)?).py()
}

#[pymodule]
fn aikae_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", aikae::VERSION)?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(assimilate, m)?)?;
    m.add_function(wrap_pyfunction!(lstsq_koopman, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    Ok(())
}
