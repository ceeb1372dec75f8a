//! Truth simulators for the benchmark plants, with RK4 stepping under
//! zero-order hold, sensor noise and exogenous disturbances.

use nalgebra::DMatrix;

use crate::rng::{self, Stream};
use crate::{Error, Result};

mod poly;
mod tank;

pub use poly::PolynomialPlant;
pub use tank::{PumpDisturbance, PumpParams, TankParams, TankPlant};

/// Continuous-time truth dynamics `ẋ = f(x, u, w)` with a scalar exogenous input `w`.
pub trait Plant {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;

    /// `f(x, u, w)` without input checks.
    fn deriv_unchecked(&self, x: &[f64], u: &[f64], w: f64) -> Vec<f64>;

    /// Analytic `(∂f/∂x, ∂f/∂u)` at `(x, u)` with the nominal exogenous input.
    fn jacobian(&self, x: &[f64], u: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)>;

    /// Nominal value of the exogenous input (mean pump flow, zero if absent).
    fn nominal_exogenous(&self) -> f64 {
        0.0
    }

    /// Maps a state back onto the physical domain after an integration step.
    fn project(&self, _x: &mut [f64]) {}

    fn deriv(&self, x: &[f64], u: &[f64], w: f64) -> Result<Vec<f64>> {
        if x.len() != self.state_dim() {
            return Err(Error::DimensionMismatch { expected: self.state_dim(), got: x.len() });
        }
        if u.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: u.len() });
        }
        if x.iter().chain(u).chain([&w]).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("plant state or input"));
        }
        Ok(self.deriv_unchecked(x, u, w))
    }
}

/// One classical RK4 step of length `dt` with `u` and `w` held constant.
pub fn step_rk4<P: Plant + ?Sized>(plant: &P, x: &[f64], u: &[f64], w: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    let k1 = plant.deriv(x, u, w)?;
    let shift = |base: &[f64], k: &[f64], h: f64| -> Vec<f64> {
        base.iter().zip(k).map(|(a, b)| a + h * b).collect()
    };
    let k2 = plant.deriv_unchecked(&shift(x, &k1, dt / 2.0), u, w);
    let k3 = plant.deriv_unchecked(&shift(x, &k2, dt / 2.0), u, w);
    let k4 = plant.deriv_unchecked(&shift(x, &k3, dt), u, w);
    let mut next: Vec<f64> = (0..x.len())
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    plant.project(&mut next);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("integrated state"));
    }
    Ok(next)
}

/// Central finite-difference Jacobians, used to check the analytic ones.
pub fn finite_difference_jacobian<P: Plant + ?Sized>(
    plant: &P,
    x: &[f64],
    u: &[f64],
    h: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, m) = (plant.state_dim(), plant.input_dim());
    let w = plant.nominal_exogenous();
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, m);
    for j in 0..n {
        let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
        xp[j] += h;
        xm[j] -= h;
        let (fp, fm) = (plant.deriv_unchecked(&xp, u, w), plant.deriv_unchecked(&xm, u, w));
        for i in 0..n {
            a[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    for j in 0..m {
        let (mut up, mut um) = (u.to_vec(), u.to_vec());
        up[j] += h;
        um[j] -= h;
        let (fp, fm) = (plant.deriv_unchecked(x, &up, w), plant.deriv_unchecked(x, &um, w));
        for i in 0..n {
            b[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    (a, b)
}

/// Additive Gaussian sensor noise `y = x + ν`, `ν ~ N(0, diag(std²))`.
#[derive(Debug, Clone)]
pub struct Sensor {
    std: Vec<f64>,
    rng: Stream,
}

impl Sensor {
    pub fn new(std: Vec<f64>, seed: u64) -> Result<Self> {
        if std.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::InvalidArgument("sensor noise std must be non-negative".into()));
        }
        Ok(Self { std, rng: rng::stream(seed, "measurement") })
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn measure(&mut self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.std)
            .map(|(v, s)| {
                let e = rng::standard_normal(&mut self.rng);
                if *s == 0.0 {
                    *v
                } else {
                    v + s * e
                }
            })
            .collect()
    }
}

/// Limits a valve command to move at most `r_max·dt` from `prev`.
pub fn rate_limit(prev: &[f64], cmd: &[f64], r_max: f64, dt: f64) -> Vec<f64> {
    let step = r_max * dt;
    prev.iter().zip(cmd).map(|(p, c)| c.clamp(p - step, p + step)).collect()
}
