//! Covariance functions shared by the exact and sparse GPs.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::{Error, Result};

/// A stationary or dot-product covariance function with its hyperparameters.
///
/// `variance` is the signal variance `σ_f²`. Lengthscales, periods and
/// offsets must be strictly positive; [`Kernel::validate`] enforces this and
/// every constructor calls it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Kernel {
    Rbf {
        variance: f64,
        lengthscale: f64,
    },
    Matern32 {
        variance: f64,
        lengthscale: f64,
    },
    Matern52 {
        variance: f64,
        lengthscale: f64,
    },
    /// `σ_f² (xᵀx' + c)^degree`.
    Polynomial {
        variance: f64,
        #[serde(default = "unit")]
        offset: f64,
        degree: u32,
    },
    /// `σ_f² (xᵀx' + c)`.
    Linear {
        variance: f64,
        #[serde(default = "unit")]
        offset: f64,
    },
    /// `σ_f² exp(−2 Σ_i sin²(π(x_i−x'_i)/p) / ℓ²)`.
    Periodic {
        variance: f64,
        lengthscale: f64,
        period: f64,
    },
    RbfArd {
        variance: f64,
        lengthscales: Vec<f64>,
    },
    Sum {
        left: Box<Kernel>,
        right: Box<Kernel>,
    },
}

fn unit() -> f64 {
    1.0
}

/// Role of a hyperparameter, used to look up search bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Variance,
    Lengthscale,
    Period,
    Offset,
}

fn positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidHyperparameter { name, value })
    }
}

impl Kernel {
    pub fn rbf(variance: f64, lengthscale: f64) -> Result<Self> {
        Self::Rbf { variance, lengthscale }.validated()
    }

    pub fn matern32(variance: f64, lengthscale: f64) -> Result<Self> {
        Self::Matern32 { variance, lengthscale }.validated()
    }

    pub fn matern52(variance: f64, lengthscale: f64) -> Result<Self> {
        Self::Matern52 { variance, lengthscale }.validated()
    }

    pub fn polynomial(variance: f64, offset: f64, degree: u32) -> Result<Self> {
        Self::Polynomial { variance, offset, degree }.validated()
    }

    pub fn linear(variance: f64, offset: f64) -> Result<Self> {
        Self::Linear { variance, offset }.validated()
    }

    pub fn periodic(variance: f64, lengthscale: f64, period: f64) -> Result<Self> {
        Self::Periodic { variance, lengthscale, period }.validated()
    }

    pub fn rbf_ard(variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        Self::RbfArd { variance, lengthscales }.validated()
    }

    pub fn sum(left: Kernel, right: Kernel) -> Result<Self> {
        Self::Sum { left: Box::new(left), right: Box::new(right) }.validated()
    }

    fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    /// Checks every hyperparameter is strictly positive and finite.
    pub fn validate(&self) -> Result<()> {
        match self {
            Kernel::Rbf { variance, lengthscale }
            | Kernel::Matern32 { variance, lengthscale }
            | Kernel::Matern52 { variance, lengthscale } => {
                positive("variance", *variance)?;
                positive("lengthscale", *lengthscale)
            }
            Kernel::Polynomial { variance, offset, degree } => {
                positive("variance", *variance)?;
                positive("offset", *offset)?;
                if *degree == 0 {
                    return Err(Error::InvalidArgument("polynomial degree must be >= 1".into()));
                }
                Ok(())
            }
            Kernel::Linear { variance, offset } => {
                positive("variance", *variance)?;
                positive("offset", *offset)
            }
            Kernel::Periodic { variance, lengthscale, period } => {
                positive("variance", *variance)?;
                positive("lengthscale", *lengthscale)?;
                positive("period", *period)
            }
            Kernel::RbfArd { variance, lengthscales } => {
                positive("variance", *variance)?;
                if lengthscales.is_empty() {
                    return Err(Error::InvalidArgument("ARD kernel needs lengthscales".into()));
                }
                lengthscales.iter().try_for_each(|l| positive("lengthscale", *l))
            }
            Kernel::Sum { left, right } => {
                left.validate()?;
                right.validate()
            }
        }
    }

    /// Input dimension the kernel is tied to, if any (ARD only).
    pub fn fixed_dim(&self) -> Option<usize> {
        match self {
            Kernel::RbfArd { lengthscales, .. } => Some(lengthscales.len()),
            Kernel::Sum { left, right } => left.fixed_dim().or(right.fixed_dim()),
            _ => None,
        }
    }

    /// Signal variance scale used to size the Cholesky jitter.
    pub fn signal_variance(&self) -> f64 {
        match self {
            Kernel::Rbf { variance, .. }
            | Kernel::Matern32 { variance, .. }
            | Kernel::Matern52 { variance, .. }
            | Kernel::Polynomial { variance, .. }
            | Kernel::Linear { variance, .. }
            | Kernel::Periodic { variance, .. }
            | Kernel::RbfArd { variance, .. } => *variance,
            Kernel::Sum { left, right } => left.signal_variance() + right.signal_variance(),
        }
    }

    /// `k(x, x')`, checking dimensions.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
        }
        if let Some(d) = self.fixed_dim() {
            if d != x.len() {
                return Err(Error::DimensionMismatch { expected: d, got: x.len() });
            }
        }
        Ok(self.eval_unchecked(x, y))
    }

    /// `k(x, x')` without dimension checks; callers guarantee equal lengths.
    pub fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Kernel::Rbf { variance, lengthscale } => {
                variance * (-0.5 * sq_dist(x, y) / (lengthscale * lengthscale)).exp()
            }
            Kernel::Matern32 { variance, lengthscale } => {
                let r = 3f64.sqrt() * sq_dist(x, y).sqrt() / lengthscale;
                variance * (1.0 + r) * (-r).exp()
            }
            Kernel::Matern52 { variance, lengthscale } => {
                let r = 5f64.sqrt() * sq_dist(x, y).sqrt() / lengthscale;
                variance * (1.0 + r + r * r / 3.0) * (-r).exp()
            }
            Kernel::Polynomial { variance, offset, degree } => {
                variance * (dot(x, y) + offset).powi(*degree as i32)
            }
            Kernel::Linear { variance, offset } => variance * (dot(x, y) + offset),
            Kernel::Periodic { variance, lengthscale, period } => {
                let mut acc = 0.0;
                for (a, b) in x.iter().zip(y) {
                    let s = (PI * (a - b) / period).sin();
                    acc += s * s;
                }
                variance * (-2.0 * acc / (lengthscale * lengthscale)).exp()
            }
            Kernel::RbfArd { variance, lengthscales } => {
                let mut acc = 0.0;
                for ((a, b), l) in x.iter().zip(y).zip(lengthscales) {
                    let t = (a - b) / l;
                    acc += t * t;
                }
                variance * (-0.5 * acc).exp()
            }
            Kernel::Sum { left, right } => left.eval_unchecked(x, y) + right.eval_unchecked(x, y),
        }
    }

    /// Gram matrix between the rows of `xa` (n × d) and `xb` (m × d).
    pub fn gram(&self, xa: &DMatrix<f64>, xb: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if xa.ncols() != xb.ncols() {
            return Err(Error::DimensionMismatch { expected: xa.ncols(), got: xb.ncols() });
        }
        let a = Points::from_rows(xa);
        let b = Points::from_rows(xb);
        if let Some(d) = self.fixed_dim() {
            if d != a.dim {
                return Err(Error::DimensionMismatch { expected: d, got: a.dim });
            }
        }
        Ok(self.cross(&a, &b))
    }

    pub(crate) fn cross(&self, a: &Points, b: &Points) -> DMatrix<f64> {
        DMatrix::from_fn(a.len(), b.len(), |i, j| self.eval_unchecked(a.row(i), b.row(j)))
    }

    /// Symmetric Gram matrix of `a` with itself (upper half mirrored).
    pub(crate) fn symmetric(&self, a: &Points) -> DMatrix<f64> {
        let n = a.len();
        let mut k = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                let v = self.eval_unchecked(a.row(i), a.row(j));
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    /// Hyperparameters in log space, in a fixed traversal order.
    pub fn log_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_params(&mut |_, v| out.push(v.ln()));
        out
    }

    pub fn param_kinds(&self) -> Vec<ParamKind> {
        let mut out = Vec::new();
        self.visit_params(&mut |k, _| out.push(k));
        out
    }

    fn visit_params(&self, f: &mut dyn FnMut(ParamKind, f64)) {
        match self {
            Kernel::Rbf { variance, lengthscale }
            | Kernel::Matern32 { variance, lengthscale }
            | Kernel::Matern52 { variance, lengthscale } => {
                f(ParamKind::Variance, *variance);
                f(ParamKind::Lengthscale, *lengthscale);
            }
            Kernel::Polynomial { variance, offset, .. } | Kernel::Linear { variance, offset } => {
                f(ParamKind::Variance, *variance);
                f(ParamKind::Offset, *offset);
            }
            Kernel::Periodic { variance, lengthscale, period } => {
                f(ParamKind::Variance, *variance);
                f(ParamKind::Lengthscale, *lengthscale);
                f(ParamKind::Period, *period);
            }
            Kernel::RbfArd { variance, lengthscales } => {
                f(ParamKind::Variance, *variance);
                for l in lengthscales {
                    f(ParamKind::Lengthscale, *l);
                }
            }
            Kernel::Sum { left, right } => {
                left.visit_params(f);
                right.visit_params(f);
            }
        }
    }

    /// Copy of `self` with hyperparameters replaced by `exp(log_params)`.
    pub fn with_log_params(&self, log_params: &[f64]) -> Result<Kernel> {
        let mut k = self.clone();
        let mut it = log_params.iter().map(|v| v.exp());
        k.assign_params(&mut it);
        if it.next().is_some() {
            return Err(Error::DimensionMismatch {
                expected: self.log_params().len(),
                got: log_params.len(),
            });
        }
        k.validate()?;
        Ok(k)
    }

    fn assign_params(&mut self, it: &mut dyn Iterator<Item = f64>) {
        let mut take = |slot: &mut f64| {
            if let Some(v) = it.next() {
                *slot = v;
            }
        };
        match self {
            Kernel::Rbf { variance, lengthscale }
            | Kernel::Matern32 { variance, lengthscale }
            | Kernel::Matern52 { variance, lengthscale } => {
                take(variance);
                take(lengthscale);
            }
            Kernel::Polynomial { variance, offset, .. } | Kernel::Linear { variance, offset } => {
                take(variance);
                take(offset);
            }
            Kernel::Periodic { variance, lengthscale, period } => {
                take(variance);
                take(lengthscale);
                take(period);
            }
            Kernel::RbfArd { variance, lengthscales } => {
                take(variance);
                for l in lengthscales.iter_mut() {
                    take(l);
                }
            }
            Kernel::Sum { left, right } => {
                left.assign_params(it);
                right.assign_params(it);
            }
        }
    }

    /// Multiplies every signal variance by `factor`.
    pub fn scale_variance(&self, factor: f64) -> Kernel {
        let mut k = self.clone();
        k.scale_in_place(factor);
        k
    }

    fn scale_in_place(&mut self, factor: f64) {
        match self {
            Kernel::Rbf { variance, .. }
            | Kernel::Matern32 { variance, .. }
            | Kernel::Matern52 { variance, .. }
            | Kernel::Polynomial { variance, .. }
            | Kernel::Linear { variance, .. }
            | Kernel::Periodic { variance, .. }
            | Kernel::RbfArd { variance, .. } => *variance *= factor,
            Kernel::Sum { left, right } => {
                left.scale_in_place(factor);
                right.scale_in_place(factor);
            }
        }
    }

    /// Constant of the conservative information-gain bound `γ̄_t = c·d·log(t+1)`.
    pub fn information_gain_constant(&self) -> f64 {
        match self {
            Kernel::Rbf { .. } | Kernel::RbfArd { .. } => 1.0,
            Kernel::Sum { left, right } => {
                left.information_gain_constant().max(right.information_gain_constant())
            }
            _ => 2.0,
        }
    }

    /// Human-readable label matching the benchmark tables.
    pub fn label(&self) -> String {
        match self {
            Kernel::Rbf { .. } => "RBF".into(),
            Kernel::Matern32 { .. } => "Matern32".into(),
            Kernel::Matern52 { .. } => "Matern52".into(),
            Kernel::Polynomial { degree, .. } => format!("Polynomial (deg. {degree})"),
            Kernel::Linear { .. } => "Linear".into(),
            Kernel::Periodic { .. } => "Periodic".into(),
            Kernel::RbfArd { .. } => "RBF (ARD)".into(),
            Kernel::Sum { left, right } => format!("{}+{}", left.label(), right.label()),
        }
    }
}

/// The eight kernel configurations of the benchmark comparison for inputs of
/// dimension `dim`, all with unit hyperparameters before fitting.
pub fn benchmark_suite(dim: usize) -> Vec<Kernel> {
    let rbf = Kernel::Rbf { variance: 1.0, lengthscale: 1.0 };
    let m32 = Kernel::Matern32 { variance: 1.0, lengthscale: 1.0 };
    let sum = |a: &Kernel, b: &Kernel| Kernel::Sum { left: Box::new(a.clone()), right: Box::new(b.clone()) };
    vec![
        rbf.clone(),
        m32.clone(),
        Kernel::Matern52 { variance: 1.0, lengthscale: 1.0 },
        sum(&rbf, &m32),
        sum(&Kernel::Periodic { variance: 1.0, lengthscale: 1.0, period: 4.0 }, &rbf),
        sum(&Kernel::Linear { variance: 1.0, offset: 1.0 }, &rbf),
        Kernel::RbfArd { variance: 1.0, lengthscales: vec![1.0; dim] },
        Kernel::Polynomial { variance: 1.0, offset: 1.0, degree: 2 },
    ]
}

#[inline]
fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Row-major point cloud; rows of a column-major `DMatrix` are strided, this is not.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Points {
    data: Vec<f64>,
    dim: usize,
}

impl Points {
    pub fn new(dim: usize) -> Self {
        Self { data: Vec::new(), dim }
    }

    pub fn from_rows(m: &DMatrix<f64>) -> Self {
        let (n, d) = m.shape();
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            for j in 0..d {
                data.push(m[(i, j)]);
            }
        }
        Self { data, dim: d }
    }

    pub fn from_slices<'a>(dim: usize, rows: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut p = Self::new(dim);
        for r in rows {
            p.push(r);
        }
        p
    }

    pub fn push(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.dim);
        self.data.extend_from_slice(row);
    }

    pub fn extend(&mut self, other: &Points) {
        self.data.extend_from_slice(&other.data);
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.dim, &self.data)
    }

    pub fn select(&self, idx: &[usize]) -> Points {
        Points::from_slices(self.dim, idx.iter().map(|&i| self.row(i)))
    }
}
