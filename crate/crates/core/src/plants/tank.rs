use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::Plant;
use crate::rng::{self, Stream};
use crate::{Error, Result};

/// AR(1)-modulated pump inflow parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpParams {
    /// Mean inflow `q̄_p` in m³/s.
    pub mean: f64,
    /// Std of the multiplicative noise `ε_k`.
    pub sigma_eps: f64,
    pub rho_d: f64,
    /// Std of the AR(1) innovation `ω_k` in m³/s.
    pub sigma_d: f64,
}

impl Default for PumpParams {
    fn default() -> Self {
        Self { mean: 1.5e-5, sigma_eps: 0.02, rho_d: 0.98, sigma_d: 1e-7 }
    }
}

/// Physical primitives of the three-tank process, SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TankParams {
    pub areas: [f64; 3],
    pub outlet_areas: [f64; 3],
    pub outlet_discharge: [f64; 3],
    /// Orifice areas between tanks (1,2) and (2,3).
    pub coupling_areas: [f64; 2],
    pub coupling_discharge: [f64; 2],
    pub gravity: f64,
    pub h_min: f64,
    pub h_max: f64,
    /// Valve slew limit in 1/s.
    pub r_max: f64,
    pub dt: f64,
    pub pump: PumpParams,
}

impl Default for TankParams {
    fn default() -> Self {
        Self {
            areas: [0.015; 3],
            outlet_areas: [5.0e-5; 3],
            outlet_discharge: [0.62; 3],
            coupling_areas: [3.0e-5; 2],
            coupling_discharge: [0.62; 2],
            gravity: 9.81,
            h_min: 0.12,
            h_max: 0.30,
            r_max: 1.0,
            dt: 1.0,
            pump: PumpParams::default(),
        }
    }
}

/// Three cross-coupled tanks with valve-controlled Torricelli outlets and a
/// pump feeding tank 2. State `h` (m), input valve openings `v ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TankPlant {
    pub params: TankParams,
    c_out: [f64; 3],
    c12: f64,
    c23: f64,
}

impl TankPlant {
    pub fn new(params: TankParams) -> Result<Self> {
        let all = params
            .areas
            .iter()
            .chain(&params.outlet_areas)
            .chain(&params.outlet_discharge)
            .chain(&params.coupling_areas)
            .chain(&params.coupling_discharge)
            .chain([&params.gravity, &params.r_max, &params.dt]);
        for v in all {
            if !(*v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("tank parameters must be positive, got {v}")));
            }
        }
        if !(0.0 < params.h_min && params.h_min < params.h_max) {
            return Err(Error::InvalidArgument("need 0 < h_min < h_max".into()));
        }
        if !(0.0..1.0).contains(&params.pump.rho_d) || params.pump.mean < 0.0 {
            return Err(Error::InvalidArgument("pump needs rho_d in [0,1) and a non-negative mean".into()));
        }
        let s = (2.0 * params.gravity).sqrt();
        let c_out = [0, 1, 2].map(|i| params.outlet_discharge[i] * params.outlet_areas[i] * s);
        let c12 = params.coupling_discharge[0] * params.coupling_areas[0] * s;
        let c23 = params.coupling_discharge[1] * params.coupling_areas[1] * s;
        Ok(Self { params, c_out, c12, c23 })
    }

    pub fn outlet_coefficients(&self) -> [f64; 3] {
        self.c_out
    }

    pub fn coupling_coefficients(&self) -> [f64; 2] {
        [self.c12, self.c23]
    }

    /// Outlet flow `v c √max(h, 0)` of tank `i`.
    pub fn outflow(&self, i: usize, h: f64, v: f64) -> f64 {
        v * self.c_out[i] * h.max(0.0).sqrt()
    }

    /// One-directional orifice flow `c √max(h_from − h_to, 0)`.
    fn orifice(c: f64, from: f64, to: f64) -> f64 {
        c * (from - to).max(0.0).sqrt()
    }

    /// Valve openings that hold `h` at rest under the mean pump flow,
    /// found by bisection on each tank's balance.
    pub fn steady_state_inputs(&self, h: &[f64]) -> Result<Vec<f64>> {
        let w = self.params.pump.mean;
        let mut v = vec![0.0; 3];
        for i in 0..3 {
            let balance = |vi: f64| {
                let mut u = [0.0; 3];
                u[i] = vi;
                self.deriv_unchecked(h, &u, w)[i]
            };
            let (mut lo, mut hi) = (0.0, 1.0);
            if balance(lo) < 0.0 || balance(hi) > 0.0 {
                return Err(Error::InvalidArgument(format!("no valve opening in [0,1] holds tank {} at {}", i + 1, h[i])));
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if balance(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-15 {
                    break;
                }
            }
            v[i] = 0.5 * (lo + hi);
        }
        Ok(v)
    }
}

impl Plant for TankPlant {
    fn state_dim(&self) -> usize {
        3
    }

    fn input_dim(&self) -> usize {
        3
    }

    fn nominal_exogenous(&self) -> f64 {
        self.params.pump.mean
    }

    fn project(&self, x: &mut [f64]) {
        for h in x.iter_mut() {
            *h = h.max(0.0);
        }
    }

    fn deriv_unchecked(&self, h: &[f64], v: &[f64], qp: f64) -> Vec<f64> {
        let a = &self.params.areas;
        let q12 = Self::orifice(self.c12, h[0], h[1]);
        let q21 = Self::orifice(self.c12, h[1], h[0]);
        let q23 = Self::orifice(self.c23, h[1], h[2]);
        let q32 = Self::orifice(self.c23, h[2], h[1]);
        vec![
            (q21 - q12 - self.outflow(0, h[0], v[0])) / a[0],
            (qp + q12 - q21 + q32 - q23 - self.outflow(1, h[1], v[1])) / a[1],
            (q23 - q32 - self.outflow(2, h[2], v[2])) / a[2],
        ]
    }

    fn jacobian(&self, h: &[f64], v: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        for (i, hi) in h.iter().enumerate() {
            if !(*hi > 0.0) {
                return Err(Error::NotDifferentiable(format!("tank {} is empty", i + 1)));
            }
        }
        if h[0] == h[1] || h[1] == h[2] {
            return Err(Error::NotDifferentiable("equal heads across a coupling orifice".into()));
        }
        let ar = &self.params.areas;
        // Net flow from j into i is c·sign(Δ)·√|Δ| with Δ = h_j − h_i; its slope is c/(2√|Δ|).
        let s12 = self.c12 / (2.0 * (h[0] - h[1]).abs().sqrt());
        let s23 = self.c23 / (2.0 * (h[1] - h[2]).abs().sqrt());
        let dout = |i: usize| v[i] * self.c_out[i] / (2.0 * h[i].sqrt());
        let mut a = DMatrix::zeros(3, 3);
        a[(0, 0)] = (-s12 - dout(0)) / ar[0];
        a[(0, 1)] = s12 / ar[0];
        a[(1, 0)] = s12 / ar[1];
        a[(1, 1)] = (-s12 - s23 - dout(1)) / ar[1];
        a[(1, 2)] = s23 / ar[1];
        a[(2, 1)] = s23 / ar[2];
        a[(2, 2)] = (-s23 - dout(2)) / ar[2];
        let mut b = DMatrix::zeros(3, 3);
        for i in 0..3 {
            b[(i, i)] = -self.c_out[i] * h[i].sqrt() / ar[i];
        }
        Ok((a, b))
    }
}

/// Pump inflow `q_p = q̄_p(1 + ε_k) + d_k` with `d_{k+1} = ρ_d d_k + ω_k`.
#[derive(Debug, Clone)]
pub struct PumpDisturbance {
    params: PumpParams,
    d: f64,
    rng: Stream,
}

impl PumpDisturbance {
    pub fn new(params: PumpParams, seed: u64) -> Self {
        Self { params, d: 0.0, rng: rng::stream(seed, "pump") }
    }

    pub fn state(&self) -> f64 {
        self.d
    }

    /// Current inflow (floored at zero); advances the AR(1) state.
    pub fn next_inflow(&mut self) -> f64 {
        let p = &self.params;
        let eps = p.sigma_eps * rng::standard_normal(&mut self.rng);
        let omega = p.sigma_d * rng::standard_normal(&mut self.rng);
        let q = (p.mean * (1.0 + eps) + self.d).max(0.0);
        self.d = p.rho_d * self.d + omega;
        q
    }
}
