//! Confidence scaling: the GP-UCB `β_t` schedule, per-step risk budgets and
//! the variance inflation `γ*` fitted on held-out residuals.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;

const GAMMA_MAX: f64 = 1e6;
const GAMMA_RESOLUTION: f64 = 1e-3;
const MIN_VALIDATION: usize = 20;

/// How the total risk `δ` is spread over control steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum RiskSplit {
    /// `δ_t = δ / horizon` for `t < horizon`.
    Uniform { horizon: u64 },
    /// `δ_t = 6δ / (π² t²)`, summable over an unbounded horizon.
    Summable,
}

/// Total risk budget and the parameters of the `β_t` formula.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskSchedule {
    pub delta: f64,
    pub split: RiskSplit,
    /// RKHS norm bound `B` of the residual.
    pub rkhs_bound: f64,
    pub noise_std: f64,
    /// Input dimension `d` in the information-gain bound.
    pub dim: usize,
    /// Kernel-family constant `c` in `γ̄_t = c·d·log(t+1)`.
    pub gain_constant: f64,
}

impl RiskSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidArgument(format!("risk delta must be in (0,1), got {}", self.delta)));
        }
        if !(self.rkhs_bound >= 0.0) || !(self.noise_std >= 0.0) || !(self.gain_constant >= 0.0) {
            return Err(Error::InvalidArgument("schedule constants must be non-negative".into()));
        }
        if let RiskSplit::Uniform { horizon: 0 } = self.split {
            return Err(Error::InvalidArgument("uniform risk split needs a positive horizon".into()));
        }
        Ok(())
    }

    /// Per-step budget `δ_t` for step `t ≥ 1`.
    pub fn delta_at(&self, t: u64) -> f64 {
        let t = t.max(1);
        match self.split {
            RiskSplit::Uniform { horizon } => {
                if t <= horizon {
                    self.delta / horizon as f64
                } else {
                    0.0
                }
            }
            RiskSplit::Summable => 6.0 * self.delta / (std::f64::consts::PI.powi(2) * (t * t) as f64),
        }
    }

    /// `Σ_{k=1}^{t} δ_k`.
    pub fn cumulative(&self, t: u64) -> f64 {
        (1..=t).map(|k| self.delta_at(k)).sum()
    }

    /// Conservative information-gain bound `γ̄_t`.
    pub fn gain_bound(&self, t: u64) -> f64 {
        information_gain_bound(t, self.dim, self.gain_constant)
    }

    /// `β_t` using `γ̄_{t−1}`.
    pub fn beta(&self, t: u64) -> Result<f64> {
        beta(self.noise_std, self.gain_bound(t.saturating_sub(1)), self.delta_at(t), self.rkhs_bound)
    }
}

/// `γ̄_t = c·d·log(t+1)`.
pub fn information_gain_bound(t: u64, dim: usize, c: f64) -> f64 {
    c * dim as f64 * ((t + 1) as f64).ln()
}

/// `β = σ_n √(2(γ + 1 + ln(1/δ))) + B`.
pub fn beta(noise_std: f64, gain: f64, delta: f64, rkhs_bound: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("per-step risk must be in (0,1), got {delta}")));
    }
    Ok(noise_std * (2.0 * (gain + 1.0 + (1.0 / delta).ln())).sqrt() + rkhs_bound)
}

/// Where `β` comes from in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BetaSource {
    Constant { value: f64 },
    Schedule(RiskSchedule),
}

impl BetaSource {
    pub fn beta(&self, t: u64) -> Result<f64> {
        match self {
            BetaSource::Constant { value } => {
                if *value > 0.0 && value.is_finite() {
                    Ok(*value)
                } else {
                    Err(Error::InvalidArgument(format!("beta must be positive, got {value}")))
                }
            }
            BetaSource::Schedule(s) => s.beta(t),
        }
    }
}

/// Fraction of `|r_i| ≤ z·s_i`.
pub fn coverage(residuals: &[f64], stds: &[f64], z: f64) -> Result<f64> {
    if residuals.len() != stds.len() {
        return Err(Error::DimensionMismatch { expected: residuals.len(), got: stds.len() });
    }
    if residuals.is_empty() {
        return Err(Error::InvalidArgument("coverage of an empty sample".into()));
    }
    let hits = residuals.iter().zip(stds).filter(|(r, s)| r.abs() <= z * **s).count();
    Ok(hits as f64 / residuals.len() as f64)
}

/// Smallest `γ* ≥ 1` (to within 1e-3) such that intervals `μ ± 1.96√γ*·σ`
/// cover at least `target` of the validation residuals.
pub fn calibrate_gamma(residuals: &[f64], stds: &[f64], target: f64) -> Result<f64> {
    if residuals.len() != stds.len() {
        return Err(Error::DimensionMismatch { expected: residuals.len(), got: stds.len() });
    }
    if residuals.len() < MIN_VALIDATION {
        return Err(Error::InvalidArgument(format!(
            "calibration needs at least {MIN_VALIDATION} validation pairs, got {}",
            residuals.len()
        )));
    }
    if stds.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::InvalidArgument("validation stds must be positive".into()));
    }
    let cov = |g: f64| coverage(residuals, stds, Z95 * g.sqrt()).unwrap_or(0.0);
    if cov(1.0) >= target {
        return Ok(1.0);
    }
    if cov(GAMMA_MAX) < target {
        return Err(Error::CalibrationUnreachable { target, max_gamma: GAMMA_MAX });
    }
    let (mut lo, mut hi) = (1.0, GAMMA_MAX);
    while hi - lo > GAMMA_RESOLUTION {
        let mid = 0.5 * (lo + hi);
        if cov(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_relative_eq;

    #[test]
    fn beta_hand_values() {
        let b = beta(0.1, 10.0, 0.05, 1.0).unwrap();
        assert_relative_eq!(b, 0.1 * (2.0 * (11.0 + 20f64.ln())).sqrt() + 1.0, epsilon = 1e-14);
        assert_relative_eq!(b, 1.52907, epsilon = 1e-5);
        let edge = beta(1.0, 0.0, 1.0 - 1e-15, 0.0).unwrap();
        assert_relative_eq!(edge, 2f64.sqrt(), epsilon = 1e-7);
        assert!(beta(1.0, 0.0, 1.0, 0.0).is_err());
        assert!(beta(1.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn constant_source_returns_value() {
        let s = BetaSource::Constant { value: 2.5373 };
        assert_eq!(s.beta(17).unwrap(), 2.5373);
    }

    #[test]
    fn schedule_respects_budget_and_grows() {
        for split in [RiskSplit::Uniform { horizon: 500 }, RiskSplit::Summable] {
            let s = RiskSchedule {
                delta: 0.05,
                split,
                rkhs_bound: 0.5,
                noise_std: 0.1,
                dim: 2,
                gain_constant: 1.0,
            };
            assert!(s.cumulative(500) <= 0.05 + 1e-15);
            let mut prev = 0.0;
            for t in 1..=500 {
                let b = s.beta(t).unwrap();
                assert!(b >= prev);
                prev = b;
            }
        }
    }

    #[test]
    fn coverage_edges() {
        assert_eq!(coverage(&[0.0; 5], &[1.0; 5], Z95).unwrap(), 1.0);
        assert_eq!(coverage(&[3.0; 5], &[1.0; 5], Z95).unwrap(), 0.0);
        assert!(coverage(&[], &[], Z95).is_err());
        assert!(coverage(&[0.0], &[1.0, 2.0], Z95).is_err());
    }

    #[test]
    fn gamma_for_zero_and_doubled_residuals() {
        assert_eq!(calibrate_gamma(&[0.0; 30], &[1.0; 30], 0.95).unwrap(), 1.0);

        let mut s = rng::stream(11, "calib");
        let r: Vec<f64> = (0..10_000).map(|_| 2.0 * rng::standard_normal(&mut s)).collect();
        let g = calibrate_gamma(&r, &vec![1.0; r.len()], 0.95).unwrap();
        assert!((g - 4.0).abs() <= 0.15 * 4.0, "gamma={g}");
    }

    #[test]
    fn gamma_is_minimal() {
        let mut s = rng::stream(3, "calib-min");
        let r: Vec<f64> = (0..500).map(|_| 1.7 * rng::standard_normal(&mut s)).collect();
        let sd = vec![1.0; r.len()];
        let g = calibrate_gamma(&r, &sd, 0.95).unwrap();
        assert!(g > 1.0);
        assert!(coverage(&r, &sd, Z95 * g.sqrt()).unwrap() >= 0.95);
        assert!(coverage(&r, &sd, Z95 * (g - 1e-3).sqrt()).unwrap() < 0.95);
    }

    #[test]
    fn gamma_input_errors() {
        assert!(calibrate_gamma(&[0.0; 5], &[1.0; 5], 0.95).is_err());
        assert!(calibrate_gamma(&[0.0; 30], &[0.0; 30], 0.95).is_err());
        let r = vec![f64::INFINITY; 30];
        assert!(matches!(
            calibrate_gamma(&r, &[1.0; 30], 0.95),
            Err(Error::CalibrationUnreachable { .. })
        ));
    }
}
