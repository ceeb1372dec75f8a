//! Exact Gaussian-process regression for residual dynamics.
//!
//! Each output channel is an independent single-output GP over shared inputs,
//! with its own kernel, noise level and constant prior mean.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;

use crate::kernels::{Kernel, ParamKind, Points};
use crate::linalg;
use crate::optim::nelder_mead;
use crate::rng;
use crate::{Error, Result};

const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-4;
const QUERY_CHUNK: usize = 1024;

/// Training inputs, per-channel targets and per-channel noise variances.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Points,
    targets: Vec<Vec<f64>>,
    noise_var: Vec<f64>,
}

impl Dataset {
    pub fn empty(input_dim: usize, noise_var: Vec<f64>) -> Result<Self> {
        for &v in &noise_var {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidHyperparameter { name: "noise_var", value: v });
            }
        }
        if noise_var.is_empty() {
            return Err(Error::InvalidArgument("dataset needs at least one output channel".into()));
        }
        let q = noise_var.len();
        Ok(Self { inputs: Points::new(input_dim), targets: vec![Vec::new(); q], noise_var })
    }

    /// Builds a dataset from row-major inputs (`n × d`) and targets (`n × q`).
    pub fn new(inputs: Points, targets: Points, noise_var: Vec<f64>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::DimensionMismatch { expected: inputs.len(), got: targets.len() });
        }
        if targets.dim() != noise_var.len() {
            return Err(Error::DimensionMismatch { expected: noise_var.len(), got: targets.dim() });
        }
        let mut d = Self::empty(inputs.dim(), noise_var)?;
        for i in 0..inputs.len() {
            d.push(inputs.row(i), targets.row(i))?;
        }
        Ok(d)
    }

    pub fn push(&mut self, x: &[f64], y: &[f64]) -> Result<()> {
        if x.len() != self.inputs.dim() {
            return Err(Error::DimensionMismatch { expected: self.inputs.dim(), got: x.len() });
        }
        if y.len() != self.targets.len() {
            return Err(Error::DimensionMismatch { expected: self.targets.len(), got: y.len() });
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset row"));
        }
        self.inputs.push(x);
        for (t, v) in self.targets.iter_mut().zip(y) {
            t.push(*v);
        }
        Ok(())
    }

    pub fn extend(&mut self, other: &Dataset) -> Result<()> {
        for i in 0..other.len() {
            let y: Vec<f64> = other.targets.iter().map(|t| t[i]).collect();
            self.push(other.inputs.row(i), &y)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.dim()
    }

    pub fn output_dim(&self) -> usize {
        self.targets.len()
    }

    pub fn inputs(&self) -> &Points {
        &self.inputs
    }

    pub fn channel(&self, j: usize) -> &[f64] {
        &self.targets[j]
    }

    pub fn noise_var(&self) -> &[f64] {
        &self.noise_var
    }

    pub fn set_noise_var(&mut self, j: usize, v: f64) -> Result<()> {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidHyperparameter { name: "noise_var", value: v });
        }
        self.noise_var[j] = v;
        Ok(())
    }

    /// Rows `idx` as a new dataset with the same noise levels.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select(idx),
            targets: self.targets.iter().map(|t| idx.iter().map(|&i| t[i]).collect()).collect(),
            noise_var: self.noise_var.clone(),
        }
    }

    /// Writes `x1..xd,y1..yq` CSV.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let header: Vec<String> = (1..=self.input_dim())
            .map(|i| format!("x{i}"))
            .chain((1..=self.output_dim()).map(|j| format!("y{j}")))
            .collect();
        out.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let row: Vec<String> = self
                .inputs
                .row(i)
                .iter()
                .chain(self.targets.iter().map(|t| &t[i]))
                .map(|v| format!("{v:e}"))
                .collect();
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a CSV written by [`Dataset::write_csv`].
    pub fn read_csv<R: Read>(r: R, noise_var: Vec<f64>) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers().map_err(csv_err)?.clone();
        let d = header.iter().filter(|h| h.starts_with('x')).count();
        let q = header.len() - d;
        if q != noise_var.len() {
            return Err(Error::DimensionMismatch { expected: noise_var.len(), got: q });
        }
        let mut data = Dataset::empty(d, noise_var)?;
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidArgument(format!("bad CSV number: {e}")))?;
            data.push(&vals[..d], &vals[d..])?;
        }
        Ok(data)
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("CSV: {e}"))
}

/// Posterior mean and standard deviation at one query, one entry per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Batched predictions: row `i` belongs to query `i`, column `j` to channel `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPrediction {
    pub mean: DMatrix<f64>,
    pub std: DMatrix<f64>,
}

/// Anything that predicts the residual with an uncertainty estimate.
pub trait ResidualModel: Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn predict(&self, x: &[f64]) -> Prediction;

    fn predict_batch(&self, xs: &Points) -> BatchPrediction {
        let q = self.output_dim();
        let mut mean = DMatrix::zeros(xs.len(), q);
        let mut std = DMatrix::zeros(xs.len(), q);
        for i in 0..xs.len() {
            let p = self.predict(xs.row(i));
            for j in 0..q {
                mean[(i, j)] = p.mean[j];
                std[(i, j)] = p.std[j];
            }
        }
        BatchPrediction { mean, std }
    }
}

/// A known residual with zero uncertainty.
pub struct OracleResidual<F> {
    dim: usize,
    outputs: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> Vec<f64> + Sync> OracleResidual<F> {
    pub fn new(dim: usize, outputs: usize, f: F) -> Self {
        Self { dim, outputs, f }
    }
}

impl<F: Fn(&[f64]) -> Vec<f64> + Sync> ResidualModel for OracleResidual<F> {
    fn input_dim(&self) -> usize {
        self.dim
    }
    fn output_dim(&self) -> usize {
        self.outputs
    }
    fn predict(&self, x: &[f64]) -> Prediction {
        Prediction { mean: (self.f)(x), std: vec![0.0; self.outputs] }
    }
}

/// Residual `g ≡ 0` with a constant standard deviation.
#[derive(Debug, Clone)]
pub struct ConstantResidual {
    pub dim: usize,
    pub std: Vec<f64>,
}

impl ResidualModel for ConstantResidual {
    fn input_dim(&self) -> usize {
        self.dim
    }
    fn output_dim(&self) -> usize {
        self.std.len()
    }
    fn predict(&self, _x: &[f64]) -> Prediction {
        Prediction { mean: vec![0.0; self.std.len()], std: self.std.clone() }
    }
}

/// Search box for one hyperparameter role, in natural (not log) units.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }
}

/// Options for maximum-likelihood hyperparameter fitting.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub variance: Range,
    pub lengthscale: Range,
    pub period: Range,
    pub offset: Range,
    /// Fit the noise variance too, never below `noise_floor` times the configured value.
    pub fit_noise: bool,
    pub noise_floor: f64,
    /// Fit on `(y − ȳ)/s` and use `ȳ` as the prior mean.
    pub standardize: bool,
    pub restarts: usize,
    pub max_evals: usize,
    /// Largest subsample the likelihood is evaluated on.
    pub max_points: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            variance: Range::new(1e-4, 1e4),
            lengthscale: Range::new(1e-2, 1e2),
            period: Range::new(1e-1, 1e2),
            offset: Range::new(1e-4, 1e4),
            fit_noise: false,
            noise_floor: 1.0,
            standardize: false,
            restarts: 3,
            max_evals: 300,
            max_points: 300,
            seed: 0,
        }
    }
}

impl FitOptions {
    fn range(&self, kind: ParamKind) -> Range {
        match kind {
            ParamKind::Variance => self.variance,
            ParamKind::Lengthscale => self.lengthscale,
            ParamKind::Period => self.period,
            ParamKind::Offset => self.offset,
        }
    }
}

/// One fitted output channel.
#[derive(Debug, Clone)]
pub struct ChannelPosterior {
    kernel: Kernel,
    noise_var: f64,
    prior_mean: f64,
    jitter: f64,
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
    centered: DVector<f64>,
}

impl ChannelPosterior {
    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn prior_mean(&self) -> f64 {
        self.prior_mean
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn build(
        kernel: Kernel,
        noise_var: f64,
        prior_mean: f64,
        x: &Points,
        y: &[f64],
    ) -> Result<Self> {
        let centered = DVector::from_iterator(y.len(), y.iter().map(|v| v - prior_mean));
        if x.is_empty() {
            return Ok(Self {
                kernel,
                noise_var,
                prior_mean,
                jitter: 0.0,
                chol: DMatrix::zeros(0, 0),
                alpha: DVector::zeros(0),
                centered,
            });
        }
        let k = kernel.symmetric(x);
        let (chol, jitter) = factor_with_jitter(&k, noise_var, kernel.signal_variance())?;
        let alpha = solve_spd(&chol, &centered);
        Ok(Self { kernel, noise_var, prior_mean, jitter, chol, alpha, centered })
    }

    fn log_marginal_likelihood(&self) -> f64 {
        let n = self.alpha.len();
        if n == 0 {
            return 0.0;
        }
        let logdet: f64 = (0..n).map(|i| self.chol[(i, i)].ln()).sum();
        -0.5 * self.centered.dot(&self.alpha) - logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
    }
}

fn factor_with_jitter(
    k: &DMatrix<f64>,
    noise_var: f64,
    signal_var: f64,
) -> Result<(DMatrix<f64>, f64)> {
    let mut rel = 0.0;
    loop {
        let jitter = rel * signal_var;
        let mut a = k.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += noise_var + jitter;
        }
        if linalg::cholesky_in_place(&mut a).is_ok() {
            return Ok((a, jitter));
        }
        if rel >= JITTER_MAX {
            return Err(Error::Factorization { jitter });
        }
        rel = if rel == 0.0 { JITTER_START } else { rel * 10.0 };
    }
}

fn solve_spd(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    linalg::solve_lower_transpose_vec(l, &linalg::solve_lower_vec(l, b))
}

/// Negative log marginal likelihood of one channel for the given hyperparameters,
/// or `+∞` if the Gram matrix cannot be factored.
fn neg_log_likelihood(kernel: &Kernel, noise_var: f64, x: &Points, y: &[f64]) -> f64 {
    match ChannelPosterior::build(kernel.clone(), noise_var, 0.0, x, y) {
        Ok(c) => -c.log_marginal_likelihood(),
        Err(_) => f64::INFINITY,
    }
}

/// Maximizes the marginal likelihood of `y` over log hyperparameters.
/// Returns the fitted kernel, noise variance and prior mean in data units.
fn fit_channel(
    template: &Kernel,
    noise_var: f64,
    x: &Points,
    y: &[f64],
    opts: &FitOptions,
    stream_name: &str,
) -> Result<(Kernel, f64, f64)> {
    let mut rng = rng::stream(opts.seed, stream_name);
    let (x, y): (Points, Vec<f64>) = if x.len() > opts.max_points {
        let mut idx = sample(&mut rng, x.len(), opts.max_points).into_vec();
        idx.sort_unstable();
        (x.select(&idx), idx.iter().map(|&i| y[i]).collect())
    } else {
        (x.clone(), y.to_vec())
    };
    let n = y.len() as f64;
    let (mean, scale) = if opts.standardize && !y.is_empty() {
        let m = y.iter().sum::<f64>() / n;
        let s = (y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
        (m, if s > 0.0 { s } else { 1.0 })
    } else {
        (0.0, 1.0)
    };
    let ys: Vec<f64> = y.iter().map(|v| (v - mean) / scale).collect();
    let s2 = scale * scale;
    let noise_std = noise_var / s2;
    let template = if opts.standardize { template.scale_variance(1.0 / s2) } else { template.clone() };

    let kinds = template.param_kinds();
    let mut lower: Vec<f64> = kinds.iter().map(|k| opts.range(*k).lo.ln()).collect();
    let mut upper: Vec<f64> = kinds.iter().map(|k| opts.range(*k).hi.ln()).collect();
    if opts.fit_noise {
        lower.push((noise_std * opts.noise_floor).ln());
        upper.push((noise_std * opts.noise_floor).max(opts.variance.hi).ln());
    }
    let mut start = template.log_params();
    if opts.fit_noise {
        start.push(noise_std.ln());
    }
    let np = kinds.len();
    let objective = |p: &[f64]| {
        let Ok(k) = template.with_log_params(&p[..np]) else {
            return f64::INFINITY;
        };
        let nv = if opts.fit_noise { p[np].exp() } else { noise_std };
        neg_log_likelihood(&k, nv, &x, &ys)
    };

    let mut best = (start.clone(), f64::INFINITY);
    for r in 0..=opts.restarts {
        let x0: Vec<f64> = if r == 0 {
            start.clone()
        } else {
            lower.iter().zip(&upper).map(|(lo, hi)| rng.random_range(*lo..=*hi)).collect()
        };
        let (p, v) = nelder_mead(objective, &x0, &lower, &upper, 1.0, opts.max_evals, 1e-8);
        if v < best.1 {
            best = (p, v);
        }
    }
    if !best.1.is_finite() {
        return Err(Error::Factorization { jitter: JITTER_MAX * template.signal_variance() });
    }
    let kernel = template.with_log_params(&best.0[..np])?;
    let nv = if opts.fit_noise { best.0[np].exp() } else { noise_std };
    let kernel = if opts.standardize { kernel.scale_variance(s2) } else { kernel };
    Ok((kernel, nv * s2, mean))
}

/// Posterior of `q` independent GPs over shared inputs.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    inputs: Points,
    channels: Vec<ChannelPosterior>,
}

impl GpPosterior {
    /// Conditions a GP with kernel `kernel` on every channel of `data`.
    ///
    /// With `fit`, hyperparameters (starting from `kernel`) are chosen per
    /// channel by maximizing the marginal likelihood.
    pub fn fit(data: &Dataset, kernel: &Kernel, fit: Option<&FitOptions>) -> Result<Self> {
        let kernels = vec![kernel.clone(); data.output_dim()];
        Self::fit_channels(data, &kernels, fit)
    }

    /// As [`GpPosterior::fit`] with one kernel template per channel.
    pub fn fit_channels(data: &Dataset, kernels: &[Kernel], fit: Option<&FitOptions>) -> Result<Self> {
        if kernels.len() != data.output_dim() {
            return Err(Error::DimensionMismatch { expected: data.output_dim(), got: kernels.len() });
        }
        for k in kernels {
            k.validate()?;
            if let Some(d) = k.fixed_dim() {
                if d != data.input_dim() {
                    return Err(Error::DimensionMismatch { expected: d, got: data.input_dim() });
                }
            }
        }
        let mut channels = Vec::with_capacity(kernels.len());
        for (j, template) in kernels.iter().enumerate() {
            let y = data.channel(j);
            let (kernel, noise, mean) = match fit {
                Some(opts) if !data.is_empty() => {
                    fit_channel(template, data.noise_var[j], &data.inputs, y, opts, &format!("gp-fit-{j}"))?
                }
                _ => (template.clone(), data.noise_var[j], 0.0),
            };
            channels.push(ChannelPosterior::build(kernel, noise, mean, &data.inputs, y)?);
        }
        Ok(Self { inputs: data.inputs.clone(), channels })
    }

    /// Conditions on `data` keeping this posterior's hyperparameters and prior means.
    pub fn refit_fixed(&self, data: &Dataset) -> Result<Self> {
        let mut channels = Vec::with_capacity(self.channels.len());
        for (j, c) in self.channels.iter().enumerate() {
            channels.push(ChannelPosterior::build(
                c.kernel.clone(),
                c.noise_var,
                c.prior_mean,
                &data.inputs,
                data.channel(j),
            )?);
        }
        Ok(Self { inputs: data.inputs.clone(), channels })
    }

    /// Re-optimizes hyperparameters on `data`, warm-started from the current ones.
    pub fn refit(&self, data: &Dataset, opts: &FitOptions) -> Result<Self> {
        let kernels: Vec<Kernel> = self.channels.iter().map(|c| c.kernel.clone()).collect();
        Self::fit_channels(data, &kernels, Some(opts))
    }

    pub fn channels(&self) -> &[ChannelPosterior] {
        &self.channels
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &Points {
        &self.inputs
    }

    /// Log marginal likelihood of each channel's training targets.
    pub fn log_marginal_likelihood(&self) -> Vec<f64> {
        self.channels.iter().map(|c| c.log_marginal_likelihood()).collect()
    }

    /// Appends rows, extending each Cholesky factor by a block instead of refactoring.
    /// The result equals conditioning on the concatenated data with the same hyperparameters.
    pub fn update(&self, rows: &Dataset) -> Result<Self> {
        if rows.input_dim() != self.inputs.dim() {
            return Err(Error::DimensionMismatch { expected: self.inputs.dim(), got: rows.input_dim() });
        }
        if rows.output_dim() != self.channels.len() {
            return Err(Error::DimensionMismatch { expected: self.channels.len(), got: rows.output_dim() });
        }
        if rows.is_empty() {
            return Ok(self.clone());
        }
        let mut inputs = self.inputs.clone();
        inputs.extend(&rows.inputs);
        let mut channels = Vec::with_capacity(self.channels.len());
        for (j, c) in self.channels.iter().enumerate() {
            let mut centered: Vec<f64> = c.centered.iter().copied().collect();
            centered.extend(rows.channel(j).iter().map(|v| v - c.prior_mean));
            let centered = DVector::from_vec(centered);
            let appended = if self.inputs.is_empty() {
                None
            } else {
                let cross = c.kernel.cross(&self.inputs, &rows.inputs);
                let mut d = c.kernel.symmetric(&rows.inputs);
                for i in 0..d.nrows() {
                    d[(i, i)] += c.noise_var + c.jitter;
                }
                linalg::cholesky_append(&c.chol, &cross, &d).ok()
            };
            let ch = match appended {
                Some(chol) => {
                    let alpha = solve_spd(&chol, &centered);
                    ChannelPosterior {
                        kernel: c.kernel.clone(),
                        noise_var: c.noise_var,
                        prior_mean: c.prior_mean,
                        jitter: c.jitter,
                        chol,
                        alpha,
                        centered,
                    }
                }
                None => {
                    let y: Vec<f64> = centered.iter().map(|v| v + c.prior_mean).collect();
                    ChannelPosterior::build(c.kernel.clone(), c.noise_var, c.prior_mean, &inputs, &y)?
                }
            };
            channels.push(ch);
        }
        Ok(Self { inputs, channels })
    }

    /// Observation-level standard deviation `√(σ² + σ_n²)` per channel.
    pub fn observation_std(&self, p: &Prediction) -> Vec<f64> {
        p.std
            .iter()
            .zip(&self.channels)
            .map(|(s, c)| (s * s + c.noise_var).sqrt())
            .collect()
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.inputs.dim() {
            return Err(Error::DimensionMismatch { expected: self.inputs.dim(), got: d });
        }
        Ok(())
    }

    /// Checked single-query prediction.
    pub fn try_predict(&self, x: &[f64]) -> Result<Prediction> {
        self.check_dim(x.len())?;
        Ok(ResidualModel::predict(self, x))
    }

    /// Checked batched prediction.
    pub fn try_predict_batch(&self, xs: &Points) -> Result<BatchPrediction> {
        self.check_dim(xs.dim())?;
        Ok(ResidualModel::predict_batch(self, xs))
    }
}

impl ResidualModel for GpPosterior {
    fn input_dim(&self) -> usize {
        self.inputs.dim()
    }

    fn output_dim(&self) -> usize {
        self.channels.len()
    }

    fn predict(&self, x: &[f64]) -> Prediction {
        let n = self.inputs.len();
        let mut mean = Vec::with_capacity(self.channels.len());
        let mut std = Vec::with_capacity(self.channels.len());
        for c in &self.channels {
            let prior = c.kernel.eval_unchecked(x, x);
            if n == 0 {
                mean.push(c.prior_mean);
                std.push(prior.max(0.0).sqrt());
                continue;
            }
            let ks = DVector::from_iterator(n, (0..n).map(|i| c.kernel.eval_unchecked(x, self.inputs.row(i))));
            mean.push(c.prior_mean + ks.dot(&c.alpha));
            let v = linalg::lower_solve_norm_sq(&c.chol, &ks);
            std.push((prior - v).max(0.0).sqrt());
        }
        Prediction { mean, std }
    }

    fn predict_batch(&self, xs: &Points) -> BatchPrediction {
        let m = xs.len();
        let q = self.channels.len();
        let n = self.inputs.len();
        let mut mean = DMatrix::zeros(m, q);
        let mut std = DMatrix::zeros(m, q);
        let mut start = 0;
        while start < m {
            let w = QUERY_CHUNK.min(m - start);
            let idx: Vec<usize> = (start..start + w).collect();
            let chunk = xs.select(&idx);
            for (j, c) in self.channels.iter().enumerate() {
                if n == 0 {
                    for i in 0..w {
                        mean[(start + i, j)] = c.prior_mean;
                        std[(start + i, j)] = c.kernel.eval_unchecked(chunk.row(i), chunk.row(i)).max(0.0).sqrt();
                    }
                    continue;
                }
                // n × w cross-covariance, solved in place to L⁻¹ K(X, X*).
                let mut v = c.kernel.cross(&self.inputs, &chunk);
                let mu = v.tr_mul(&c.alpha);
                linalg::solve_lower_in_place(&c.chol, &mut v);
                for i in 0..w {
                    let prior = c.kernel.eval_unchecked(chunk.row(i), chunk.row(i));
                    let red = v.column(i).norm_squared();
                    mean[(start + i, j)] = c.prior_mean + mu[i];
                    std[(start + i, j)] = (prior - red).max(0.0).sqrt();
                }
            }
            start += w;
        }
        BatchPrediction { mean, std }
    }
}
