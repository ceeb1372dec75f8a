//! Learning, uncertainty, safety and timing metrics.

use std::time::Instant;

use rand::Rng;

use crate::calibration::Z95;
use crate::gp::ResidualModel;
use crate::kernels::Points;
use crate::pcis::BoxSet;
use crate::{rng, Error, Result};

pub use crate::calibration::coverage;

fn check_pair(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::DimensionMismatch { expected: target.len(), got: pred.len() });
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("metrics need at least one sample".into()));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    let sse: f64 = pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// `1 − SS_res/SS_tot`, or NaN when the targets are constant.
pub fn r2(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    let mean = target.iter().sum::<f64>() / target.len() as f64;
    let ss_tot: f64 = target.iter().map(|t| (t - mean).powi(2)).sum();
    let ss_res: f64 = pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum();
    Ok(if ss_tot == 0.0 { f64::NAN } else { 1.0 - ss_res / ss_tot })
}

/// Mean width of the central 95% interval.
pub fn mpiw(mean_std: f64) -> f64 {
    2.0 * Z95 * mean_std
}

pub fn calibration_error(coverage: f64) -> f64 {
    (coverage - 0.95).abs()
}

/// Scores of one output channel on a held-out set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelScores {
    pub rmse: f64,
    pub mae: f64,
    pub r2: f64,
    pub coverage: f64,
    pub mean_std: f64,
}

impl ChannelScores {
    pub fn mpiw(&self) -> f64 {
        mpiw(self.mean_std)
    }

    pub fn calibration_error(&self) -> f64 {
        calibration_error(self.coverage)
    }
}

/// Scores of channel `j` of `model` against `targets` at `inputs`.
/// `extra_var` is added to the predictive variance (observation noise).
pub fn score_channel(
    model: &dyn ResidualModel,
    inputs: &Points,
    targets: &[f64],
    j: usize,
    extra_var: f64,
) -> Result<ChannelScores> {
    if j >= model.output_dim() {
        return Err(Error::DimensionMismatch { expected: model.output_dim(), got: j + 1 });
    }
    let pred = model.predict_batch(inputs);
    let mean: Vec<f64> = pred.mean.column(j).iter().copied().collect();
    let std: Vec<f64> = pred.std.column(j).iter().map(|s| (s * s + extra_var).sqrt()).collect();
    let residuals: Vec<f64> = mean.iter().zip(targets).map(|(m, t)| t - m).collect();
    Ok(ChannelScores {
        rmse: rmse(&mean, targets)?,
        mae: mae(&mean, targets)?,
        r2: r2(&mean, targets)?,
        coverage: coverage(&residuals, &std, Z95)?,
        mean_std: std.iter().sum::<f64>() / std.len() as f64,
    })
}

/// `n` points drawn uniformly from `region`, seeded by stream "test-grid".
pub fn uniform_test_points(region: &BoxSet, n: usize, seed: u64) -> Points {
    let mut s = rng::stream(seed, "test-grid");
    let mut p = Points::new(region.dim());
    for _ in 0..n {
        let x: Vec<f64> = region.lo.iter().zip(&region.hi).map(|(l, h)| l + (h - l) * s.random::<f64>()).collect();
        p.push(&x);
    }
    p
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafetyReport {
    /// Samples with a state outside the state box or an input outside the input box.
    pub violations: usize,
    /// Minimum over time of the signed distance to the nearest state-box face.
    pub min_distance: f64,
    pub first_violation: Option<f64>,
}

pub fn safety_report(times: &[f64], states: &[Vec<f64>], inputs: &[Vec<f64>], x_box: &BoxSet, u_box: &BoxSet) -> Result<SafetyReport> {
    if states.is_empty() {
        return Err(Error::InvalidArgument("empty log".into()));
    }
    if times.len() != states.len() {
        return Err(Error::DimensionMismatch { expected: states.len(), got: times.len() });
    }
    let mut violations = 0;
    let mut min_distance = f64::INFINITY;
    let mut first_violation = None;
    for (k, x) in states.iter().enumerate() {
        let d = x_box.signed_distance(x);
        min_distance = min_distance.min(d);
        let u_bad = inputs.get(k).is_some_and(|u| !u_box.contains(u));
        if d < 0.0 || u_bad {
            violations += 1;
            first_violation.get_or_insert(times[k]);
        }
    }
    Ok(SafetyReport { violations, min_distance, first_violation })
}

/// Monotone wall clock reporting seconds.
#[derive(Debug, Clone, Copy)]
pub struct Timer(Instant);

impl Timer {
    pub fn start() -> Self {
        Self(Instant::now())
    }

    pub fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Runs `f` and returns its value with the elapsed seconds.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Timer::start();
    let v = f();
    (v, t.seconds())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hand_vectors() {
        assert_relative_eq!(rmse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 5.0]).unwrap(), (4.0f64 / 3.0).sqrt());
        assert_relative_eq!(mae(&[1.0, 2.0, 3.0], &[1.0, 2.0, 5.0]).unwrap(), 2.0 / 3.0);
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(r2(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(r2(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!(r2(&[1.0, 2.0], &[3.0, 3.0]).unwrap().is_nan());
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn interval_metrics() {
        assert_relative_eq!(mpiw(0.052), 0.20384, epsilon = 1e-12);
        assert_relative_eq!(mpiw(0.177), 0.69384, epsilon = 1e-12);
        assert_eq!(mpiw(0.0), 0.0);
        assert_relative_eq!(calibration_error(0.37), 0.58, epsilon = 1e-12);
        assert_relative_eq!(calibration_error(1.0), 0.05, epsilon = 1e-12);
        assert_eq!(calibration_error(0.95), 0.0);
    }

    #[test]
    fn safety_fixtures() {
        let xb = BoxSet::new(vec![0.0], vec![2.0]).unwrap();
        let ub = BoxSet::new(vec![-1.0], vec![1.0]).unwrap();
        let t = [0.0, 1.0, 2.0];
        let r = safety_report(&t, &vec![vec![1.0]; 3], &vec![vec![0.0]; 3], &xb, &ub).unwrap();
        assert_eq!(r.violations, 0);
        assert_eq!(r.min_distance, 1.0);
        let r = safety_report(&t, &[vec![1.0], vec![2.5], vec![1.0]], &vec![vec![0.0]; 3], &xb, &ub).unwrap();
        assert_eq!(r.violations, 1);
        assert_eq!(r.first_violation, Some(1.0));
        assert_eq!(r.min_distance, -0.5);
    }

    #[test]
    fn timer_resolution() {
        let (_, s) = timed(|| std::thread::sleep(std::time::Duration::from_millis(5)));
        assert!(s >= 0.004);
    }
}
