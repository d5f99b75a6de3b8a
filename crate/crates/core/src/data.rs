//! Datasets, windowing, synthetic generators and simple baselines.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng::{DATA_STREAM, MASK_STREAM};
use crate::numerics::{lstsq_map, Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitLengths {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitLengths {
    pub fn new(train: usize, val: usize, test: usize) -> Self {
        Self { train, val, test }
    }

    /// 70/10/20 split of `t` rows.
    pub fn default_for(t: usize) -> Self {
        let train = t * 7 / 10;
        let val = t / 10;
        Self::new(train, val, t - train - val)
    }

    /// The hourly ETT protocol: 12/4/4 months of 30 days.
    pub fn ett_hourly() -> Self {
        Self::new(12 * 30 * 24, 4 * 30 * 24, 4 * 30 * 24)
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SeriesDataset {
    pub name: String,
    pub columns: Vec<String>,
    /// `T × C`, row per timestamp.
    pub values: Tensor,
    pub splits: SplitLengths,
    /// Observation flag per timestamp; `None` means fully observed.
    pub mask: Option<Vec<bool>>,
}

impl SeriesDataset {
    pub fn new(name: impl Into<String>, columns: Vec<String>, values: Tensor, splits: SplitLengths) -> Result<Self> {
        if values.rank() != 2 || values.cols() != columns.len() {
            return Err(Error::dim(
                "dataset",
                format!("{} column names for values {:?}", columns.len(), values.shape()),
            ));
        }
        if splits.total() > values.rows() {
            return Err(Error::InvalidArgument(format!(
                "split lengths sum to {} but the series has {} rows",
                splits.total(),
                values.rows()
            )));
        }
        Ok(Self {
            name: name.into(),
            columns,
            values,
            splits,
            mask: None,
        })
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.values.cols()
    }

    pub fn with_splits(mut self, splits: SplitLengths) -> Result<Self> {
        if splits.total() > self.len() {
            return Err(Error::InvalidArgument(format!(
                "split lengths sum to {} but the series has {} rows",
                splits.total(),
                self.len()
            )));
        }
        self.splits = splits;
        Ok(self)
    }

    pub fn split_range(&self, split: Split) -> std::ops::Range<usize> {
        let s = self.splits;
        match split {
            Split::Train => 0..s.train,
            Split::Val => s.train..s.train + s.val,
            Split::Test => s.train + s.val..s.total(),
        }
    }

    /// Values of channel `c` over `range`.
    pub fn channel(&self, c: usize, range: std::ops::Range<usize>) -> Vec<f64> {
        range.map(|t| self.values.get(t, c)).collect()
    }

    /// Per-channel mean and population standard deviation of the train rows.
    pub fn train_stats(&self) -> ChannelStats {
        let rows = self.split_range(Split::Train);
        let cnt = rows.len().max(1) as f64;
        let mut mean = vec![0.0; self.channels()];
        let mut std = vec![0.0; self.channels()];
        for c in 0..self.channels() {
            let m = rows.clone().map(|t| self.values.get(t, c)).sum::<f64>() / cnt;
            let v = rows.clone().map(|t| (self.values.get(t, c) - m).powi(2)).sum::<f64>() / cnt;
            mean[c] = m;
            std[c] = if v > 0.0 { v.sqrt() } else { 1.0 };
        }
        ChannelStats { mean, std }
    }

    /// Z-scored copy using train-split statistics.
    pub fn normalized(&self) -> (SeriesDataset, ChannelStats) {
        let stats = self.train_stats();
        let mut out = self.clone();
        let c = self.channels();
        for (i, v) in out.values.data_mut().iter_mut().enumerate() {
            let ch = i % c;
            *v = (*v - stats.mean[ch]) / stats.std[ch];
        }
        (out, stats)
    }

    pub fn denormalize(values: &Tensor, stats: &ChannelStats) -> Tensor {
        let c = values.cols();
        let mut out = values.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let ch = i % c;
            *v = *v * stats.std[ch] + stats.mean[ch];
        }
        out
    }

    pub fn is_observed(&self, t: usize) -> bool {
        self.mask.as_ref().map_or(true, |m| m[t])
    }

    /// Writes `date,<channels>[,mask]`; the date column holds the row index.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["date".to_string()];
        header.extend(self.columns.iter().cloned());
        if self.mask.is_some() {
            header.push("mask".into());
        }
        w.write_record(&header)?;
        for t in 0..self.len() {
            let mut rec = vec![t.to_string()];
            rec.extend(self.values.row(t).iter().map(|v| v.to_string()));
            if let Some(m) = &self.mask {
                rec.push(if m[t] { "1" } else { "0" }.into());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Parses a CSV whose first column is a timestamp string and whose other
/// columns are numeric channels. A column named `mask` is read as the
/// observation mask. `splits = None` uses a 70/10/20 split.
pub fn load_csv(path: impl AsRef<Path>, splits: Option<SplitLengths>) -> Result<SeriesDataset> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            msg: "need a timestamp column and at least one channel".into(),
        });
    }
    let mask_col = header.iter().position(|h| h == "mask");
    let columns: Vec<String> = header
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(i, _)| Some(*i) != mask_col)
        .map(|(_, h)| h.clone())
        .collect();

    let mut data = Vec::new();
    let mut mask = Vec::new();
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        for (j, cell) in rec.iter().enumerate().skip(1) {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                line,
                msg: format!("column `{}`: `{cell}` is not a number", header[j]),
            })?;
            if Some(j) == mask_col {
                mask.push(v != 0.0);
            } else {
                data.push(v);
            }
        }
        rows += 1;
    }
    let values = Tensor::matrix(rows, columns.len(), data)?;
    let splits = splits.unwrap_or_else(|| SplitLengths::default_for(rows));
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset").to_string();
    let mut ds = SeriesDataset::new(name, columns, values, splits)?;
    if mask_col.is_some() {
        ds.mask = Some(mask);
    }
    Ok(ds)
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    pub lookback: Tensor,
    pub target: Tensor,
    pub channel: usize,
    /// Row index of the first lookback value.
    pub start: usize,
}

/// All windows lying entirely inside `split`, channel-major, ascending start.
pub fn windows(ds: &SeriesDataset, split: Split, t_l: usize, t_p: usize, stride: usize) -> Vec<WindowSample> {
    let range = ds.split_range(split);
    window_range(ds, range.start, range.end, t_l, t_p, stride)
}

/// Evaluation windows: targets start inside `split` while the lookback may
/// reach back into the preceding rows.
pub fn eval_windows(ds: &SeriesDataset, split: Split, t_l: usize, t_p: usize) -> Vec<WindowSample> {
    let range = ds.split_range(split);
    window_range(ds, range.start.saturating_sub(t_l), range.end, t_l, t_p, 1)
}

fn window_range(ds: &SeriesDataset, lo: usize, hi: usize, t_l: usize, t_p: usize, stride: usize) -> Vec<WindowSample> {
    let stride = stride.max(1);
    let mut out = Vec::new();
    if t_l + t_p > hi.saturating_sub(lo) {
        return out;
    }
    for c in 0..ds.channels() {
        let mut s = lo;
        while s + t_l + t_p <= hi {
            out.push(WindowSample {
                lookback: Tensor::vector(ds.channel(c, s..s + t_l)),
                target: Tensor::vector(ds.channel(c, s + t_l..s + t_l + t_p)),
                channel: c,
                start: s,
            });
            s += stride;
        }
    }
    out
}

/// Training samples for latent-step losses.
///
/// Every sample is read from a flat track: the input is
/// `track[o .. o + n]` and the target for latent step `τ` is
/// `track[o + τ·step .. o + τ·step + n]`. Delayed univariate samples use
/// `step = n` (one latent step advances one block); state-vector samples
/// use a row-major `T × C` track with `n = step = C`.
#[derive(Clone, Debug)]
pub struct SampleSet {
    tracks: Vec<Vec<f64>>,
    n: usize,
    step: usize,
    tau_max: usize,
    index: Vec<(usize, usize)>,
}

/// A gathered mini-batch: inputs and targets for `τ = 1..=tau_max`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x: Tensor,
    pub futures: Vec<Tensor>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tau_max(&self) -> usize {
        self.futures.len()
    }
}

impl SampleSet {
    fn build(tracks: Vec<Vec<f64>>, n: usize, step: usize, tau_max: usize, stride: usize) -> Self {
        let span = n + tau_max * step;
        let mut index = Vec::new();
        for (ti, tr) in tracks.iter().enumerate() {
            let mut o = 0;
            while o + span <= tr.len() {
                index.push((ti, o));
                o += stride.max(1);
            }
        }
        Self {
            tracks,
            n,
            step,
            tau_max,
            index,
        }
    }

    /// Channel-independent delayed samples with block length `t_l`.
    pub fn delayed(ds: &SeriesDataset, split: Split, t_l: usize, tau_max: usize, stride: usize) -> Self {
        let range = ds.split_range(split);
        let tracks = (0..ds.channels()).map(|c| ds.channel(c, range.clone())).collect();
        Self::build(tracks, t_l, t_l, tau_max, stride)
    }

    /// Delayed samples from independent univariate tracks.
    pub fn delayed_tracks(tracks: Vec<Vec<f64>>, t_l: usize, tau_max: usize, stride: usize) -> Self {
        Self::build(tracks, t_l, t_l, tau_max, stride)
    }

    /// Full-state samples from consecutive rows of `split`.
    pub fn states(ds: &SeriesDataset, split: Split, tau_max: usize) -> Self {
        let range = ds.split_range(split);
        let c = ds.channels();
        let track: Vec<f64> = range.flat_map(|t| ds.values.row(t).to_vec()).collect();
        Self::build(vec![track], c, c, tau_max, c)
    }

    /// Full-state samples from several independent `T × C` trajectories.
    pub fn from_trajectories(trajs: &[Tensor], tau_max: usize) -> Result<Self> {
        let c = trajs.first().map_or(0, Tensor::cols);
        if trajs.iter().any(|t| t.cols() != c) {
            return Err(Error::dim("from_trajectories", "trajectories disagree on state size"));
        }
        let tracks = trajs.iter().map(|t| t.data().to_vec()).collect();
        Ok(Self::build(tracks, c, c, tau_max, c))
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tau_max(&self) -> usize {
        self.tau_max
    }

    pub fn batch(&self, idx: &[usize]) -> Batch {
        let b = idx.len();
        let mut x = Vec::with_capacity(b * self.n);
        let mut fut = vec![Vec::with_capacity(b * self.n); self.tau_max];
        for &i in idx {
            let (ti, o) = self.index[i];
            let tr = &self.tracks[ti];
            x.extend_from_slice(&tr[o..o + self.n]);
            for (tau, f) in fut.iter_mut().enumerate() {
                let s = o + (tau + 1) * self.step;
                f.extend_from_slice(&tr[s..s + self.n]);
            }
        }
        Batch {
            x: Tensor::matrix(b, self.n, x).expect("batch shape"),
            futures: fut
                .into_iter()
                .map(|f| Tensor::matrix(b, self.n, f).expect("batch shape"))
                .collect(),
        }
    }

    pub fn all(&self) -> Batch {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
    }

    /// Consecutive batches of at most `size` samples, in index order.
    pub fn chunks(&self, size: usize) -> impl Iterator<Item = Batch> + '_ {
        let idx: Vec<usize> = (0..self.len()).collect();
        let size = size.max(1);
        (0..self.len().div_ceil(size)).map(move |i| {
            let hi = ((i + 1) * size).min(idx.len());
            self.batch(&idx[i * size..hi])
        })
    }
}

// ---- synthetic generators ----

/// `x₁ ← a·x₁`, `x₂ ← b·x₂ + c·x₁²`, starting from `x0`, `length` rows.
pub fn gen_koopman_quadratic(a: f64, b: f64, c: f64, length: usize, x0: [f64; 2]) -> Result<SeriesDataset> {
    if a.abs() >= 1.0 || b.abs() >= 1.0 {
        return Err(Error::InvalidArgument(format!("need |a| < 1 and |b| < 1, got a={a}, b={b}")));
    }
    Ok(SeriesDataset::new(
        "koopman_quadratic",
        vec!["x1".into(), "x2".into()],
        quadratic_trajectory(a, b, c, length, x0),
        SplitLengths::new(length, 0, 0),
    )
    .expect("shape"))
}

pub fn quadratic_trajectory(a: f64, b: f64, c: f64, length: usize, x0: [f64; 2]) -> Tensor {
    let mut data = Vec::with_capacity(2 * length);
    let (mut x1, mut x2) = (x0[0], x0[1]);
    for _ in 0..length {
        data.push(x1);
        data.push(x2);
        let nx1 = a * x1;
        let nx2 = b * x2 + c * x1 * x1;
        x1 = nx1;
        x2 = nx2;
    }
    Tensor::matrix(length, 2, data).expect("shape")
}

/// `x_{t+1} = A x_t (+ σ·ε)`, all state coordinates observed.
pub fn gen_linear(a: &Tensor, x0: &[f64], length: usize, noise: f64, seed: u64) -> Result<SeriesDataset> {
    let s = a.rows();
    if a.rank() != 2 || a.cols() != s || x0.len() != s {
        return Err(Error::dim("gen_linear", format!("A {:?}, x0 {}", a.shape(), x0.len())));
    }
    let mut rng = Rng::derive(seed, DATA_STREAM);
    let mut data = Vec::with_capacity(length * s);
    let mut x = x0.to_vec();
    for _ in 0..length {
        data.extend_from_slice(&x);
        x = (0..s)
            .map(|i| a.row(i).iter().zip(&x).map(|(p, q)| p * q).sum::<f64>() + noise * rng.normal())
            .collect();
    }
    let cols = (0..s).map(|i| format!("x{}", i + 1)).collect();
    SeriesDataset::new("linear", cols, Tensor::matrix(length, s, data)?, SplitLengths::default_for(length))
}

/// Block-diagonal matrix of damped 2-D rotations with radii in
/// `[r_lo, r_hi]`; its spectral radius is at most `r_hi`.
pub fn random_stable_matrix(dim: usize, r_lo: f64, r_hi: f64, rng: &mut Rng) -> Tensor {
    let mut a = Tensor::zeros(&[dim, dim]);
    let mut i = 0;
    while i + 1 < dim {
        let r = rng.uniform_range(r_lo, r_hi);
        let th = rng.uniform_range(0.05, std::f64::consts::PI - 0.05);
        a.set(i, i, r * th.cos());
        a.set(i, i + 1, -r * th.sin());
        a.set(i + 1, i, r * th.sin());
        a.set(i + 1, i + 1, r * th.cos());
        i += 2;
    }
    if i < dim {
        a.set(i, i, rng.uniform_range(r_lo, r_hi));
    }
    a
}

/// Scalar observation `y_t = Σ h_t` of a hidden random stable linear system.
pub fn gen_scalar_linear(hidden: usize, length: usize, seed: u64) -> SeriesDataset {
    let mut rng = Rng::derive(seed, DATA_STREAM);
    let a = random_stable_matrix(hidden, 0.9, 1.0, &mut rng);
    let mut h: Vec<f64> = (0..hidden).map(|_| rng.normal()).collect();
    let mut ys = Vec::with_capacity(length);
    for _ in 0..length {
        ys.push(h.iter().sum());
        h = (0..hidden)
            .map(|i| a.row(i).iter().zip(&h).map(|(p, q)| p * q).sum())
            .collect();
    }
    SeriesDataset::new(
        "scalar_linear",
        vec!["y".into()],
        Tensor::matrix(length, 1, ys).expect("shape"),
        SplitLengths::default_for(length),
    )
    .expect("shape")
}

/// Stack `(x_t, x_{t+1} − x_t)` for each row `t < T − 1`.
pub fn derivative_augment(values: &Tensor) -> Tensor {
    let (t, c) = (values.rows(), values.cols());
    let mut data = Vec::with_capacity(t.saturating_sub(1) * 2 * c);
    for i in 0..t.saturating_sub(1) {
        let (cur, next) = (values.row(i), values.row(i + 1));
        data.extend_from_slice(cur);
        data.extend(next.iter().zip(cur).map(|(b, a)| b - a));
    }
    Tensor::matrix(t.saturating_sub(1), 2 * c, data).expect("shape")
}

/// Seasonal multi-band "pixel" series: each band is a noisy sinusoid
/// sharing the annual period, with band-specific amplitude and phase.
pub fn gen_seasonal_pixels(bands: usize, length: usize, period: f64, noise: f64, seed: u64) -> SeriesDataset {
    let mut rng = Rng::derive(seed, DATA_STREAM);
    let amps: Vec<f64> = (0..bands).map(|_| rng.uniform_range(0.5, 1.5)).collect();
    let phases: Vec<f64> = (0..bands).map(|_| rng.uniform_range(0.0, 1.0)).collect();
    let base: Vec<f64> = (0..bands).map(|_| rng.uniform_range(-0.5, 0.5)).collect();
    let mut data = Vec::with_capacity(length * bands);
    for t in 0..length {
        let ph = std::f64::consts::TAU * t as f64 / period;
        for bnd in 0..bands {
            let s = ph + std::f64::consts::TAU * phases[bnd];
            data.push(base[bnd] + amps[bnd] * (s.sin() + 0.3 * (2.0 * s).cos()) + noise * rng.normal());
        }
    }
    let cols = (0..bands).map(|b| format!("band{}", b + 1)).collect();
    SeriesDataset::new("seasonal_pixels", cols, Tensor::matrix(length, bands, data).expect("shape"), SplitLengths::default_for(length))
        .expect("shape")
}

/// Descriptions of the synthetic datasets the CLI can emit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "system", rename_all = "snake_case", deny_unknown_fields)]
pub enum SyntheticSpec {
    Linear {
        a: Vec<Vec<f64>>,
        x0: Vec<f64>,
        #[serde(default)]
        noise: f64,
    },
    KoopmanQuadratic {
        a: f64,
        b: f64,
        c: f64,
        x0: [f64; 2],
    },
    ScalarLinear {
        hidden: usize,
    },
    SeasonalPixels {
        bands: usize,
        period: f64,
        #[serde(default)]
        noise: f64,
    },
}

impl SyntheticSpec {
    pub fn generate(&self, length: usize, seed: u64) -> Result<SeriesDataset> {
        match self {
            SyntheticSpec::Linear { a, x0, noise } => {
                let rows: Vec<&[f64]> = a.iter().map(Vec::as_slice).collect();
                if rows.iter().any(|r| r.len() != rows.len()) {
                    return Err(Error::InvalidArgument("linear system matrix must be square".into()));
                }
                let m = Tensor::from_rows(&rows);
                let rho = spectral_radius_bound(&m);
                if rho > 1.05 {
                    return Err(Error::InvalidArgument(format!(
                        "spectral radius {rho:.3} exceeds 1.05; trajectories would blow up"
                    )));
                }
                gen_linear(&m, x0, length, *noise, seed)
            }
            SyntheticSpec::KoopmanQuadratic { a, b, c, x0 } => {
                let ds = gen_koopman_quadratic(*a, *b, *c, length, *x0)?;
                ds.with_splits(SplitLengths::default_for(length))
            }
            SyntheticSpec::ScalarLinear { hidden } => Ok(gen_scalar_linear(*hidden, length, seed)),
            SyntheticSpec::SeasonalPixels { bands, period, noise } => {
                Ok(gen_seasonal_pixels(*bands, length, *period, *noise, seed))
            }
        }
    }
}

/// Spectral radius from the eigenvalues of `A` (`∞` if they fail to converge).
pub fn spectral_radius_bound(a: &Tensor) -> f64 {
    let m = faer::Mat::from_fn(a.rows(), a.cols(), |i, j| a.get(i, j));
    match m.eigenvalues() {
        Ok(ev) => ev.iter().map(|z| z.norm()).fold(0.0, f64::max),
        Err(_) => f64::INFINITY,
    }
}

/// Bernoulli(`rate`) missing-data mask per timestamp; `t = 0` stays observed.
pub fn mask_irregular(ds: &SeriesDataset, rate: f64, seed: u64) -> Result<SeriesDataset> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("missing rate must be in [0, 1), got {rate}")));
    }
    let mut rng = Rng::derive(seed, MASK_STREAM);
    let mask: Vec<bool> = (0..ds.len()).map(|t| t == 0 || !rng.bernoulli(rate)).collect();
    let mut out = ds.clone();
    out.mask = Some(mask);
    Ok(out)
}

// ---- baselines and metrics ----

/// Repeats the last lookback value `t_p` times.
pub fn baseline_persistence(lookback: &Tensor, t_p: usize) -> Result<Tensor> {
    let last = *lookback
        .data()
        .last()
        .ok_or_else(|| Error::InvalidArgument("empty lookback window".into()))?;
    Ok(Tensor::vector(vec![last; t_p]))
}

/// `ŷ = W x` with `W ∈ ℝ^{T_P × T_L}` fitted by least squares.
#[derive(Clone, Debug)]
pub struct LinearBaseline {
    pub w: Tensor,
}

impl LinearBaseline {
    pub fn fit(samples: &[WindowSample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidArgument("linear baseline needs training windows".into()))?;
        let (t_l, t_p) = (first.lookback.len(), first.target.len());
        let xs = Tensor::stack_rows(&samples.iter().map(|s| s.lookback.clone()).collect::<Vec<_>>())?;
        let ys = Tensor::stack_rows(&samples.iter().map(|s| s.target.clone()).collect::<Vec<_>>())?;
        let w = lstsq_map(&xs.transpose(), &ys.transpose())?;
        debug_assert_eq!(w.shape(), &[t_p, t_l]);
        Ok(Self { w })
    }

    pub fn predict(&self, lookback: &Tensor) -> Result<Tensor> {
        let x = Tensor::matrix(lookback.len(), 1, lookback.data().to_vec())?;
        Ok(Tensor::vector(crate::numerics::matmul(&self.w, &x)?.into_data()))
    }

    /// Row-stacked lookbacks to row-stacked forecasts.
    pub fn predict_batch(&self, lookbacks: &Tensor) -> Result<Tensor> {
        crate::numerics::matmul(lookbacks, &self.w.transpose())
    }
}

/// Coordinate-mean squared and absolute error.
pub fn metrics(pred: &Tensor, truth: &Tensor) -> Result<(f64, f64)> {
    if pred.shape() != truth.shape() {
        return Err(Error::dim("metrics", format!("{:?} vs {:?}", pred.shape(), truth.shape())));
    }
    let n = pred.len().max(1) as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for (p, t) in pred.data().iter().zip(truth.data()) {
        se += (p - t) * (p - t);
        ae += (p - t).abs();
    }
    Ok((se / n, ae / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tiny_csv(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_ten_rows_with_splits() {
        let mut body = String::from("date,a,b\n");
        for t in 0..10 {
            body.push_str(&format!("2020-01-01 {t:02}:00,{},{}\n", t, 2 * t));
        }
        let f = tiny_csv(&body);
        let ds = load_csv(f.path(), Some(SplitLengths::new(6, 2, 2))).unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!(ds.channels(), 2);
        assert_eq!(ds.split_range(Split::Val), 6..8);
        assert_eq!(ds.split_range(Split::Test), 8..10);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let f = tiny_csv("date,a\nx,1\ny,oops\n");
        match load_csv(f.path(), None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let f = tiny_csv("date,a,b\nx,1,2\ny,3\n");
        assert!(matches!(load_csv(f.path(), None), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn window_counts() {
        let v = Tensor::matrix(10, 2, (0..20).map(f64::from).collect()).unwrap();
        let ds = SeriesDataset::new("t", vec!["a".into(), "b".into()], v, SplitLengths::new(10, 0, 0)).unwrap();
        assert_eq!(windows(&ds, Split::Train, 3, 2, 1).len(), 12);
        assert_eq!(windows(&ds, Split::Train, 6, 4, 1).len(), 2);
        let w = &windows(&ds, Split::Train, 3, 2, 1)[1];
        assert_eq!(w.lookback.data(), &[2.0, 4.0, 6.0]);
        assert_eq!(w.target.data(), &[8.0, 10.0]);
        assert!(windows(&ds, Split::Train, 8, 4, 1).is_empty());
    }

    #[test]
    fn quadratic_hand_iteration() {
        let ds = gen_koopman_quadratic(0.9, 0.5, 1.0, 3, [1.0, 1.0]).unwrap();
        assert_eq!(ds.values.row(1), &[0.9, 1.5]);
        let r2 = ds.values.row(2);
        assert!((r2[0] - 0.81).abs() < 1e-15 && (r2[1] - 1.56).abs() < 1e-15);
        assert!(gen_koopman_quadratic(1.0, 0.5, 1.0, 3, [1.0, 1.0]).is_err());
    }

    #[test]
    fn quadratic_without_coupling_decays_geometrically() {
        let ds = gen_koopman_quadratic(0.8, -0.5, 0.0, 6, [2.0, 3.0]).unwrap();
        for t in 0..6 {
            assert!((ds.values.get(t, 0) - 2.0 * 0.8f64.powi(t as i32)).abs() < 1e-14);
            assert!((ds.values.get(t, 1) - 3.0 * (-0.5f64).powi(t as i32)).abs() < 1e-14);
        }
    }

    #[test]
    fn masks() {
        let ds = gen_scalar_linear(4, 1000, 1);
        let none = mask_irregular(&ds, 0.0, 3).unwrap();
        assert!(none.mask.as_ref().unwrap().iter().all(|&m| m));
        let half = mask_irregular(&ds, 0.5, 3).unwrap();
        let seen = half.mask.as_ref().unwrap().iter().filter(|&&m| m).count();
        assert!((400..=600).contains(&seen), "{seen}");
        assert_eq!(half.mask, mask_irregular(&ds, 0.5, 3).unwrap().mask);
        for seed in 0..20 {
            assert!(mask_irregular(&ds, 0.99, seed).unwrap().is_observed(0));
        }
        assert!(mask_irregular(&ds, 1.0, 0).is_err());
    }

    #[test]
    fn persistence_and_metrics() {
        let f = baseline_persistence(&Tensor::vector(vec![1.0, 2.0, 3.5]), 4).unwrap();
        assert_eq!(f.data(), &[3.5; 4]);
        let t = Tensor::vector(vec![1.0, 2.0, 3.0]);
        assert_eq!(metrics(&t, &t).unwrap(), (0.0, 0.0));
        assert_eq!(metrics(&t.map(|v| v + 2.0), &t).unwrap(), (4.0, 2.0));
        let p = Tensor::vector(vec![1.0, -3.0]);
        assert_eq!(metrics(&p, &Tensor::zeros(&[2])).unwrap(), (5.0, 2.0));
        assert!(metrics(&t, &p).is_err());
    }

    #[test]
    fn linear_baseline_on_constant_series() {
        let v = Tensor::full(&[40, 1], 2.5);
        let ds = SeriesDataset::new("c", vec!["y".into()], v, SplitLengths::new(40, 0, 0)).unwrap();
        let ws = windows(&ds, Split::Train, 4, 3, 1);
        let lin = LinearBaseline::fit(&ws).unwrap();
        let y = lin.predict(&Tensor::full(&[4], 2.5)).unwrap();
        assert!(y.data().iter().all(|v| (v - 2.5).abs() < 1e-10), "{:?} {:?}", y, lin.w);
    }

    #[test]
    fn derivative_layout() {
        let v = Tensor::from_rows(&[&[1.0, 10.0], &[3.0, 7.0], &[4.0, 7.0]]);
        let d = derivative_augment(&v);
        assert_eq!(d.shape(), &[2, 4]);
        assert_eq!(d.row(0), &[1.0, 10.0, 2.0, -3.0]);
        assert_eq!(d.row(1), &[3.0, 7.0, 1.0, 0.0]);
    }

    #[test]
    fn delayed_sample_layout() {
        let v = Tensor::matrix(12, 1, (0..12).map(f64::from).collect()).unwrap();
        let ds = SeriesDataset::new("s", vec!["y".into()], v, SplitLengths::new(12, 0, 0)).unwrap();
        let s = SampleSet::delayed(&ds, Split::Train, 3, 2, 1);
        // span 3 + 2·3 = 9 → starts 0..=3
        assert_eq!(s.len(), 4);
        let b = s.batch(&[1]);
        assert_eq!(b.x.data(), &[1.0, 2.0, 3.0]);
        assert_eq!(b.futures[0].data(), &[4.0, 5.0, 6.0]);
        assert_eq!(b.futures[1].data(), &[7.0, 8.0, 9.0]);
    }

    #[test]
    fn state_sample_layout() {
        let v = Tensor::matrix(5, 2, (0..10).map(f64::from).collect()).unwrap();
        let ds = SeriesDataset::new("s", vec!["a".into(), "b".into()], v, SplitLengths::new(5, 0, 0)).unwrap();
        let s = SampleSet::states(&ds, Split::Train, 2);
        assert_eq!(s.len(), 3);
        let b = s.batch(&[2]);
        assert_eq!(b.x.data(), &[4.0, 5.0]);
        assert_eq!(b.futures[1].data(), &[8.0, 9.0]);
    }

    #[test]
    fn normalized_view_uses_train_rows() {
        let mut rng = Rng::new(2);
        let v = rng.normal_tensor(&[50, 3], 4.0).map(|x| x + 10.0);
        let ds = SeriesDataset::new("r", vec!["a".into(), "b".into(), "c".into()], v, SplitLengths::new(30, 10, 10)).unwrap();
        let (norm, stats) = ds.normalized();
        let again = norm.train_stats();
        for c in 0..3 {
            assert!(again.mean[c].abs() < 1e-9);
            assert!((again.std[c] - 1.0).abs() < 1e-9);
        }
        let back = SeriesDataset::denormalize(&norm.values, &stats);
        assert!(back.max_abs_diff(&ds.values) < 1e-9);
    }
}
