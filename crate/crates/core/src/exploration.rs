//! The online exploration loop: measure, query the residual posterior, filter
//! the nominal input through the safety QP, apply it, log, and at iteration
//! boundaries grow the dataset, recalibrate and recertify. Also the unfiltered
//! LQR tracking baseline.

use std::io::Write;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate_gamma, BetaSource, Z95};
use crate::control::{Clf, LinearModel};
use crate::gp::{csv_err, Dataset, FitOptions, GpPosterior, ResidualModel};
use crate::kernels::{Kernel, Points};
use crate::metrics::{self, Timer};
use crate::pcis::{max_level_set, BoxSet, CertifiedSet, GridSpec, PcisPredicate};
use crate::plants::{rate_limit, step_rk4, Plant, PumpDisturbance, PumpParams, Sensor};
use crate::safe_qp::{safe_step, Exploration};
use crate::{rng, Error, Result};

/// How the state target of each iteration is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetMode {
    /// Largest `β‖σ̃‖` over certified nodes inside the invariant level set.
    Ucb,
    /// Cycle through these plant-coordinate targets, one per iteration.
    Fixed { points: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplorationConfig {
    pub iterations: usize,
    pub steps_per_iteration: usize,
    pub dt: f64,
    pub initial_points: usize,
    /// Half-widths of the box around the operating point the initial states are drawn from.
    pub initial_spread: Vec<f64>,
    /// Half-widths of the random inputs applied to the initial states.
    pub initial_input_spread: Vec<f64>,
    /// Keep every `stride`-th transition as a training sample.
    pub stride: usize,
    /// Re-optimize hyperparameters every this many iterations.
    pub refit_every: usize,
    /// Grid nodes per axis for certification.
    pub grid: usize,
    pub shrink: f64,
    pub beta: BetaSource,
    pub eta: bool,
    pub eta_safety: f64,
    pub rho: Option<f64>,
    pub explore_alpha: f64,
    pub targets: TargetMode,
    /// Radius, as a fraction of the certification box diagonal, around earlier
    /// targets that later targets avoid.
    pub target_exclusion: f64,
    pub test_points: usize,
    pub calibration_fraction: f64,
    pub seed: u64,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        Self {
            iterations: 12,
            steps_per_iteration: 300,
            dt: 0.01,
            initial_points: 100,
            initial_spread: vec![1.0, 1.0],
            initial_input_spread: vec![1.0],
            stride: 1,
            refit_every: 3,
            grid: 81,
            shrink: 0.9,
            beta: BetaSource::Constant { value: 2.5373 },
            eta: true,
            eta_safety: 2.0,
            rho: None,
            explore_alpha: 0.0,
            targets: TargetMode::Ucb,
            target_exclusion: 0.15,
            test_points: 200,
            calibration_fraction: 0.2,
            seed: 0,
        }
    }
}

impl ExplorationConfig {
    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        let bad = |s: &str| Err(Error::Config(s.to_string()));
        if self.iterations == 0 || self.steps_per_iteration == 0 {
            return bad("iterations and steps_per_iteration must be positive");
        }
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if self.stride == 0 || self.refit_every == 0 {
            return bad("stride and refit_every must be positive");
        }
        if !(self.shrink > 0.0 && self.shrink <= 1.0) {
            return bad("shrink must lie in (0, 1]");
        }
        if !(self.target_exclusion >= 0.0) {
            return bad("target_exclusion must be non-negative");
        }
        if !(self.calibration_fraction > 0.0 && self.calibration_fraction < 1.0) {
            return bad("calibration_fraction must lie in (0, 1)");
        }
        if self.initial_spread.len() != n || self.initial_input_spread.len() != m {
            return bad("initial spreads must match the state and input dimensions");
        }
        if self.initial_points < 40 {
            return bad("need at least 40 initial points to hold out a calibration split");
        }
        if let TargetMode::Fixed { points } = &self.targets {
            if points.is_empty() || points.iter().any(|p| p.len() != n) {
                return bad("fixed targets must be non-empty state vectors");
            }
        }
        self.beta.beta(1).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

/// Everything a run needs about the plant and its nominal design.
pub struct Scenario {
    pub plant: Box<dyn Plant + Send + Sync>,
    /// Continuous nominal model around `(x_op, u_op)`.
    pub model: LinearModel,
    pub clf: Clf,
    /// State constraint in plant coordinates.
    pub x_box: BoxSet,
    /// Input constraint in plant coordinates.
    pub u_box: BoxSet,
    /// Per-axis tightening of `x_box` used for certification.
    pub state_margin: Vec<f64>,
    pub sensor_std: Vec<f64>,
    pub kernels: Vec<Kernel>,
    pub fit: FitOptions,
    pub pump: Option<PumpParams>,
    /// Valve slew limit in 1/s.
    pub slew: Option<f64>,
    pub x0: Vec<f64>,
}

impl Scenario {
    pub fn x_op(&self) -> &[f64] {
        self.model.x_op.as_slice()
    }

    pub fn u_op(&self) -> &[f64] {
        self.model.u_op.as_slice()
    }

    pub fn to_model(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.x_op()).map(|(a, b)| a - b).collect()
    }

    /// Certification box in model coordinates.
    pub fn certification_box(&self) -> Result<BoxSet> {
        let neg: Vec<f64> = self.x_op().iter().map(|v| -v).collect();
        Ok(self.x_box.shrink(&self.state_margin)?.shift(&neg))
    }

    pub fn input_box_model(&self) -> BoxSet {
        let neg: Vec<f64> = self.u_op().iter().map(|v| -v).collect();
        self.u_box.shift(&neg)
    }

    /// `f(x, u, w) − A(x − x_op) − B(u − u_op)` in plant coordinates.
    pub fn true_residual(&self, x: &[f64], u: &[f64], w: f64) -> Vec<f64> {
        let f = self.plant.deriv_unchecked(x, u, w);
        let z = DVector::from_vec(self.to_model(x));
        let du = DVector::from_iterator(u.len(), u.iter().zip(self.u_op()).map(|(a, b)| a - b));
        let lin = &self.model.a * z + &self.model.b * du;
        f.iter().zip(lin.iter()).map(|(a, b)| a - b).collect()
    }

    /// `u_ff(z*) − K(z − z*)` in model coordinates.
    pub fn nominal_input(&self, z: &[f64], target: &[f64]) -> DVector<f64> {
        let zt = DVector::from_column_slice(target);
        let err = DVector::from_column_slice(z) - &zt;
        self.model.steady_state_input(&zt, None) - &self.clf.k * err
    }

    pub fn nominal_exogenous(&self) -> f64 {
        self.plant.nominal_exogenous()
    }
}

/// Midpoint attribution of a finite-difference residual: the sample
/// `(ẏ − A z_mid − B(u − u_op))` is placed at `z_mid`.
pub fn residual_sample(model: &LinearModel, y0: &[f64], y1: &[f64], u: &[f64], dt: f64) -> (Vec<f64>, Vec<f64>) {
    let n = y0.len();
    let mid = DVector::from_iterator(n, (0..n).map(|i| 0.5 * (y0[i] + y1[i]) - model.x_op[i]));
    let du = DVector::from_iterator(u.len(), u.iter().zip(model.u_op.iter()).map(|(a, b)| a - b));
    let lin = &model.a * &mid + &model.b * du;
    let r = (0..n).map(|i| (y1[i] - y0[i]) / dt - lin[i]).collect();
    (mid.iter().copied().collect(), r)
}

/// Chosen target with the acquisition statistics at it.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    /// Model coordinates.
    pub z: Vec<f64>,
    pub mu: f64,
    pub sigma: f64,
    pub rho: f64,
}

/// Argmax of `β‖σ̃‖` over certified nodes with `V ≤ level`; ties go to the
/// node farthest from `current`. Nodes within `radius` of a point in
/// `visited` are skipped unless that leaves nothing.
#[allow(clippy::too_many_arguments)]
pub fn select_target(
    set: &CertifiedSet,
    model: &dyn ResidualModel,
    clf: &Clf,
    beta: f64,
    gamma: f64,
    level: f64,
    current: &[f64],
    visited: &[Vec<f64>],
    radius: f64,
) -> Result<Target> {
    let inside: Vec<Vec<f64>> = set
        .member_nodes()
        .map(|(_, x)| x)
        .filter(|x| clf.value(&DVector::from_column_slice(x)) <= level)
        .collect();
    if inside.is_empty() {
        return Err(Error::CertificationCollapse);
    }
    let near = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() < radius * radius;
    // Most recent targets are excluded first; older ones only while candidates remain.
    let mut pool: Vec<&Vec<f64>> = inside.iter().collect();
    for v in visited.iter().rev() {
        let rest: Vec<&Vec<f64>> = pool.iter().copied().filter(|x| !near(x, v)).collect();
        if rest.is_empty() {
            break;
        }
        pool = rest;
    }
    let cand = Points::from_slices(set.grid.dim(), pool.iter().map(|x| x.as_slice()));
    let pred = model.predict_batch(&cand);
    let scale = gamma.sqrt();
    let dist = |x: &[f64]| x.iter().zip(current).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let mut best: Option<(f64, f64, usize)> = None;
    for i in 0..cand.len() {
        let s = beta * scale * pred.std.row(i).norm();
        let d = dist(cand.row(i));
        let better = match best {
            None => true,
            Some((bs, bd, _)) => {
                let tol = 1e-12 * bs.abs().max(1e-300);
                s > bs + tol || (s >= bs - tol && d > bd)
            }
        };
        if better {
            best = Some((s, d, i));
        }
    }
    let (_, _, i) = best.expect("non-empty candidates");
    let mu = pred.mean.row(i).norm();
    let sigma = scale * pred.std.row(i).norm();
    Ok(Target { z: cand.row(i).to_vec(), mu, sigma, rho: if mu > 0.0 { beta * sigma / mu } else { f64::INFINITY } })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub iteration: usize,
    /// True state, plant coordinates.
    pub x: Vec<f64>,
    /// Applied input, plant coordinates.
    pub u: Vec<f64>,
    pub s: f64,
    pub b: f64,
    pub margin: f64,
    pub beta: f64,
    pub sigma_agg: f64,
    pub v: f64,
    pub envelope_violation: bool,
    pub violation: bool,
    pub outside_set: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub set_size: usize,
    pub rmse: f64,
    pub mae: f64,
    pub r2: f64,
    pub coverage: f64,
    pub mean_std: f64,
    pub train_points: usize,
    pub mu: f64,
    pub sigma: f64,
    pub rho: f64,
    pub target_shift: f64,
    pub gamma: f64,
    pub alpha_c: f64,
    pub target: Vec<f64>,
    pub update_seconds: f64,
    pub certify_seconds: f64,
    pub step_seconds: f64,
}

impl IterationRecord {
    pub fn mpiw(&self) -> f64 {
        metrics::mpiw(self.mean_std)
    }

    pub fn calibration_error(&self) -> f64 {
        metrics::calibration_error(self.coverage)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub steps: Vec<StepRecord>,
    pub iterations: Vec<IterationRecord>,
    pub initial_set: Option<CertifiedSet>,
    pub final_set: Option<CertifiedSet>,
    pub eta: f64,
    pub collapsed: bool,
    /// The state blew up and the rollout was cut short.
    pub diverged: bool,
}

impl RunLog {
    pub fn violations(&self) -> usize {
        self.steps.iter().filter(|s| s.violation).count()
    }

    pub fn set_exits(&self) -> usize {
        self.steps.iter().filter(|s| s.outside_set).count()
    }

    pub fn envelope_violations(&self) -> usize {
        self.steps.iter().filter(|s| s.envelope_violation).count()
    }

    pub fn interventions(&self) -> usize {
        self.steps.iter().filter(|s| s.s > 0.0).count()
    }

    pub fn write_steps_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let (n, m) = self.steps.first().map_or((0, 0), |s| (s.x.len(), s.u.len()));
        let mut header = vec!["t".to_string(), "iteration".into()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        header.extend(
            ["s", "b", "margin", "beta", "sigma_agg", "V", "envelope_violation", "violation", "outside_set"]
                .map(String::from),
        );
        out.write_record(&header).map_err(csv_err)?;
        for s in &self.steps {
            let mut row = vec![format!("{}", s.t), s.iteration.to_string()];
            row.extend(s.x.iter().chain(&s.u).map(|v| format!("{v:e}")));
            row.extend([s.s, s.b, s.margin, s.beta, s.sigma_agg, s.v].map(|v| format!("{v:e}")));
            row.extend([s.envelope_violation, s.violation, s.outside_set].map(|f| u8::from(f).to_string()));
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Per-iteration safe-set size and learning metrics.
    pub fn write_iterations_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["Iter", "|S|", "RMSE", "MAE", "R^2", "Coverage", "sigma_bar", "Train pts"])
            .map_err(csv_err)?;
        for r in &self.iterations {
            out.write_record([
                r.iteration.to_string(),
                r.set_size.to_string(),
                format!("{:.4}", r.rmse),
                format!("{:.4}", r.mae),
                format!("{:.4}", r.r2),
                format!("{:.1}%", 100.0 * r.coverage),
                format!("{:.4}", r.mean_std),
                r.train_points.to_string(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Per-iteration calibration, sharpness and acquisition statistics.
    pub fn write_derived_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["Iter", "Cal. Err.", "MPIW", "mu_k", "sigma_k", "rho_k", "||x*_k - x_{k-1}||", "gamma", "alpha_c"])
            .map_err(csv_err)?;
        for r in &self.iterations {
            out.write_record([
                r.iteration.to_string(),
                format!("{:.2}", r.calibration_error()),
                format!("{:.3}", r.mpiw()),
                format!("{:.4}", r.mu),
                format!("{:.4}", r.sigma),
                format!("{:.3}", r.rho),
                format!("{:.3}", r.target_shift),
                format!("{:.4}", r.gamma),
                format!("{:.6e}", r.alpha_c),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_timings_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["Iter", "update_s", "certify_s", "steps_s"]).map_err(csv_err)?;
        for r in &self.iterations {
            out.write_record([
                r.iteration.to_string(),
                format!("{:.3}", r.update_seconds),
                format!("{:.3}", r.certify_seconds),
                format!("{:.3}", r.step_seconds),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Held-out states inside `{V ≤ α_m}` with their noiseless residuals at `u_op`.
struct TestSet {
    inputs: Points,
    targets: Vec<Vec<f64>>,
}

fn test_set(sc: &Scenario, region: &BoxSet, alpha_m: f64, n: usize, seed: u64) -> TestSet {
    let mut inputs = Points::new(region.dim());
    let mut round = 0u64;
    while inputs.len() < n {
        let batch = metrics::uniform_test_points(region, 4 * n, seed.wrapping_add(round));
        for i in 0..batch.len() {
            if inputs.len() < n && sc.clf.value(&DVector::from_column_slice(batch.row(i))) <= alpha_m {
                inputs.push(batch.row(i));
            }
        }
        round += 1;
    }
    let w = sc.nominal_exogenous();
    let q = sc.model.state_dim();
    let mut targets = vec![Vec::with_capacity(n); q];
    for i in 0..n {
        let x: Vec<f64> = inputs.row(i).iter().zip(sc.x_op()).map(|(a, b)| a + b).collect();
        let g = sc.true_residual(&x, sc.u_op(), w);
        for (j, t) in targets.iter_mut().enumerate() {
            t.push(g[j]);
        }
    }
    TestSet { inputs, targets }
}

/// `safety · max |V(x_RK4) − V(x_Euler)| / Δt²` over LQR steps from `states`.
pub fn estimate_eta(sc: &Scenario, states: &Points, dt: f64, safety: f64) -> Result<f64> {
    let w = sc.nominal_exogenous();
    let ub = sc.input_box_model();
    let mut worst: f64 = 0.0;
    for i in 0..states.len() {
        let z = states.row(i);
        let x: Vec<f64> = z.iter().zip(sc.x_op()).map(|(a, b)| a + b).collect();
        let um = ub.clamp((-(&sc.clf.k) * DVector::from_column_slice(z)).as_slice());
        let u: Vec<f64> = um.iter().zip(sc.u_op()).map(|(a, b)| a + b).collect();
        let rk = step_rk4(sc.plant.as_ref(), &x, &u, w, dt)?;
        let f = sc.plant.deriv(&x, &u, w)?;
        let eu: Vec<f64> = x.iter().zip(&f).map(|(a, b)| a + dt * b).collect();
        let v = |y: &[f64]| sc.clf.value(&DVector::from_vec(sc.to_model(y)));
        worst = worst.max((v(&rk) - v(&eu)).abs());
    }
    Ok(safety * worst / (dt * dt))
}

/// Inflation `γ*` from a random held-out split: the posterior is conditioned
/// on the rest with fixed hyperparameters and scored on observation intervals.
fn calibrate(gp: &GpPosterior, data: &Dataset, fraction: f64, seed: u64) -> Result<f64> {
    let n = data.len();
    let k = ((fraction * n as f64).round() as usize).max(20).min(n.saturating_sub(20));
    if k < 20 {
        return Err(Error::InvalidArgument("too few samples to calibrate".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, "calibration"));
    let (held, kept) = idx.split_at(k);
    let mut kept = kept.to_vec();
    kept.sort_unstable();
    let post = gp.refit_fixed(&data.select(&kept))?;
    let val = data.select(held);
    let pred = post.predict_batch(val.inputs());
    let mut res = Vec::with_capacity(k * data.output_dim());
    let mut std = Vec::with_capacity(k * data.output_dim());
    for (j, c) in post.channels().iter().enumerate() {
        for (i, y) in val.channel(j).iter().enumerate() {
            res.push(y - pred.mean[(i, j)]);
            std.push((pred.std[(i, j)].powi(2) + c.noise_var()).sqrt());
        }
    }
    calibrate_gamma(&res, &std, 0.95)
}

/// Pooled test-set scores over all channels.
fn score(gp: &GpPosterior, gamma: f64, test: &TestSet) -> Result<metrics::ChannelScores> {
    let pred = gp.predict_batch(&test.inputs);
    let (mut mean, mut std, mut truth) = (Vec::new(), Vec::new(), Vec::new());
    for (j, t) in test.targets.iter().enumerate() {
        for (i, y) in t.iter().enumerate() {
            mean.push(pred.mean[(i, j)]);
            std.push(gamma.sqrt() * pred.std[(i, j)]);
            truth.push(*y);
        }
    }
    let res: Vec<f64> = mean.iter().zip(&truth).map(|(m, t)| t - m).collect();
    Ok(metrics::ChannelScores {
        rmse: metrics::rmse(&mean, &truth)?,
        mae: metrics::mae(&mean, &truth)?,
        r2: metrics::r2(&mean, &truth)?,
        coverage: metrics::coverage(&res, &std, Z95)?,
        mean_std: std.iter().sum::<f64>() / std.len() as f64,
    })
}

/// Shared state of a run up to the first certification.
struct Setup {
    zbox: BoxSet,
    ubox: BoxSet,
    grid: GridSpec,
    test: TestSet,
    eta_dt2: f64,
    data: Dataset,
    gp: GpPosterior,
    gamma: f64,
}

fn noise_variances(sc: &Scenario, dt: f64) -> Vec<f64> {
    sc.sensor_std.iter().map(|s| (2.0 * s * s / (dt * dt)).max(1e-12)).collect()
}

fn setup(sc: &Scenario, cfg: &ExplorationConfig) -> Result<(Setup, CertifiedSet, f64)> {
    let n = sc.model.state_dim();
    let m = sc.model.input_dim();
    cfg.validate(n, m)?;
    if sc.sensor_std.len() != n || sc.state_margin.len() != n || sc.x0.len() != n || sc.kernels.len() != n {
        return Err(Error::Config("scenario vectors must match the state dimension".into()));
    }
    let zbox = sc.certification_box()?;
    let ubox = sc.input_box_model();
    let grid = GridSpec::over(&zbox, cfg.grid)?;
    let alpha_m = max_level_set(&sc.clf.p, &zbox)?;
    let probe = test_set(sc, &zbox, alpha_m, cfg.test_points, cfg.seed);
    let eta_dt2 = if cfg.eta { estimate_eta(sc, &probe.inputs, cfg.dt, cfg.eta_safety)? * cfg.dt * cfg.dt } else { 0.0 };

    // Initial data: one-step transitions from random states under random inputs.
    let mut draw = rng::stream(cfg.seed, "initial-data");
    let mut sensor = Sensor::new(sc.sensor_std.clone(), cfg.seed.wrapping_add(1))?;
    let mut pump = sc.pump.map(|p| PumpDisturbance::new(p, cfg.seed.wrapping_add(1)));
    let mut data = Dataset::empty(n, noise_variances(sc, cfg.dt))?;
    use rand::Rng;
    for _ in 0..cfg.initial_points {
        let z: Vec<f64> = cfg.initial_spread.iter().map(|h| draw.random_range(-1.0..=1.0) * h).collect();
        let x = zbox.clamp(&z).iter().zip(sc.x_op()).map(|(a, b)| a + b).collect::<Vec<_>>();
        let du: Vec<f64> = cfg.initial_input_spread.iter().map(|h| draw.random_range(-1.0..=1.0) * h).collect();
        let u = sc.u_box.clamp(&du.iter().zip(sc.u_op()).map(|(a, b)| a + b).collect::<Vec<_>>());
        let w = pump.as_mut().map_or(0.0, |p| p.next_inflow());
        let next = step_rk4(sc.plant.as_ref(), &x, &u, w, cfg.dt)?;
        let (y0, y1) = (sensor.measure(&x), sensor.measure(&next));
        let (zi, r) = residual_sample(&sc.model, &y0, &y1, &u, cfg.dt);
        data.push(&zi, &r)?;
    }
    let fit = FitOptions { seed: cfg.seed, ..sc.fit.clone() };
    let gp = GpPosterior::fit_channels(&data, &sc.kernels, Some(&fit))?;
    let gamma = calibrate(&gp, &data, cfg.calibration_fraction, cfg.seed)?;
    let mut s = Setup { zbox, ubox, grid, test: probe, eta_dt2, data, gp, gamma };

    // Held-out scores are taken over the initially certified sublevel set.
    let set = certify(sc, &s, cfg.beta.beta(1)?)?;
    let alpha_c = set.invariant_level(&sc.clf, cfg.shrink);
    if alpha_c > 0.0 {
        s.test = test_set(sc, &s.zbox, alpha_c, cfg.test_points, cfg.seed);
    }
    Ok((s, set, alpha_c))
}

fn certify(sc: &Scenario, s: &Setup, beta: f64) -> Result<CertifiedSet> {
    PcisPredicate {
        model: &sc.model,
        clf: &sc.clf,
        residual: &s.gp,
        beta,
        gamma: s.gamma,
        eta_dt2: s.eta_dt2,
        level: 0.0,
        u_box: &s.ubox,
        x_box: &s.zbox,
    }
    .certify_grid(&s.grid)
}

fn fixed_target(sc: &Scenario, points: &[Vec<f64>], it: usize) -> Vec<f64> {
    sc.to_model(&points[(it - 1) % points.len()])
}

/// Certified set and invariant level obtained from the initial data alone.
pub fn initial_certificate(sc: &Scenario, cfg: &ExplorationConfig) -> Result<(CertifiedSet, f64)> {
    let (_, set, alpha_c) = setup(sc, cfg)?;
    Ok((set, alpha_c))
}

/// Runs the filtered exploration loop. A certification collapse ends the run
/// early with `collapsed` set.
pub fn run_safe(sc: &Scenario, cfg: &ExplorationConfig) -> Result<RunLog> {
    let t_setup = Timer::start();
    let (mut s, mut set, mut alpha_c) = setup(sc, cfg)?;
    let mut update_seconds = t_setup.seconds();
    let n = sc.model.state_dim();
    let mut sensor = Sensor::new(sc.sensor_std.clone(), cfg.seed)?;
    let mut pump = sc.pump.map(|p| PumpDisturbance::new(p, cfg.seed));
    let mut log = RunLog { steps: vec![], iterations: vec![], initial_set: None, final_set: None, eta: 0.0, collapsed: false, diverged: false };
    log.eta = s.eta_dt2 / (cfg.dt * cfg.dt);
    let fit = FitOptions { seed: cfg.seed, ..sc.fit.clone() };
    let explore = Exploration {
        alpha: cfg.explore_alpha,
        weights: vec![],
        dt: cfg.dt,
    };

    let mut x = sc.x0.clone();
    let mut y = sensor.measure(&x);
    let mut u_prev: Vec<f64> = sc.u_op().to_vec();
    let mut t_index: u64 = 0;

    let mut certify_seconds = 0.0;
    log.initial_set = Some(set.clone());
    let radius = cfg.target_exclusion
        * s.zbox.lo.iter().zip(&s.zbox.hi).map(|(l, h)| (h - l).powi(2)).sum::<f64>().sqrt();
    let mut visited: Vec<Vec<f64>> = Vec::new();

    for it in 1..=cfg.iterations {
        if set.count() == 0 || alpha_c <= 0.0 {
            log.collapsed = true;
            break;
        }
        let beta_now = cfg.beta.beta(t_index + 1)?;
        let z_now = sc.to_model(&x);
        let target = match &cfg.targets {
            TargetMode::Ucb => {
                let t = select_target(&set, &s.gp, &sc.clf, beta_now, s.gamma, alpha_c, &z_now, &visited, radius)?;
                visited.push(t.z.clone());
                t
            }
            TargetMode::Fixed { points } => {
                let z = fixed_target(sc, points, it);
                let p = s.gp.predict(&z);
                let mu = DVector::from_vec(p.mean).norm();
                let sigma = s.gamma.sqrt() * DVector::from_vec(p.std).norm();
                Target { z, mu, sigma, rho: if mu > 0.0 { beta_now * sigma / mu } else { f64::INFINITY } }
            }
        };
        let sc_ = score(&s.gp, s.gamma, &s.test)?;
        let shift = target.z.iter().zip(&z_now).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let mut rec = IterationRecord {
            iteration: it,
            set_size: set.count(),
            rmse: sc_.rmse,
            mae: sc_.mae,
            r2: sc_.r2,
            coverage: sc_.coverage,
            mean_std: sc_.mean_std,
            train_points: s.data.len(),
            mu: target.mu,
            sigma: target.sigma,
            rho: target.rho,
            target_shift: shift,
            gamma: s.gamma,
            alpha_c,
            target: target.z.iter().zip(sc.x_op()).map(|(a, b)| a + b).collect(),
            update_seconds,
            certify_seconds,
            step_seconds: 0.0,
        };

        let t_steps = Timer::start();
        let mut pending = Dataset::empty(n, s.data.noise_var().to_vec())?;
        for k in 0..cfg.steps_per_iteration {
            t_index += 1;
            let beta = cfg.beta.beta(t_index)?;
            let pred = PcisPredicate {
                model: &sc.model,
                clf: &sc.clf,
                residual: &s.gp,
                beta,
                gamma: s.gamma,
                eta_dt2: s.eta_dt2,
                level: alpha_c,
                u_box: &s.ubox,
                x_box: &s.zbox,
            };
            let z_meas = sc.to_model(&y);
            let u_lin = sc.nominal_input(&z_meas, &target.z);
            let (u_m, diag) = safe_step(&pred, &z_meas, u_lin.as_slice(), None, cfg.rho, Some(&explore))?;
            let mut u: Vec<f64> = u_m.iter().zip(sc.u_op()).map(|(a, b)| a + b).collect();
            if let Some(r) = sc.slew {
                u = rate_limit(&u_prev, &u, r, cfg.dt);
            }
            let w = pump.as_mut().map_or(sc.nominal_exogenous(), |p| p.next_inflow());

            let z_true = sc.to_model(&x);
            let g = sc.true_residual(&x, &u, w);
            let p = s.gp.predict(&z_true);
            let band = beta * s.gamma.sqrt();
            let envelope_violation = (0..n).any(|i| (g[i] - p.mean[i]).abs() > band * p.std[i]);
            let v = sc.clf.value(&DVector::from_vec(z_true));
            log.steps.push(StepRecord {
                t: (t_index - 1) as f64 * cfg.dt,
                iteration: it,
                x: x.clone(),
                u: u.clone(),
                s: diag.s,
                b: diag.b,
                margin: diag.margin,
                beta,
                sigma_agg: s.gamma.sqrt() * DVector::from_vec(p.std).norm(),
                v,
                envelope_violation,
                violation: !sc.x_box.contains(&x) || !sc.u_box.contains(&u),
                outside_set: v > alpha_c,
            });

            let next = step_rk4(sc.plant.as_ref(), &x, &u, w, cfg.dt)?;
            let y_next = sensor.measure(&next);
            if k % cfg.stride == 0 {
                let (zi, r) = residual_sample(&sc.model, &y, &y_next, &u, cfg.dt);
                pending.push(&zi, &r)?;
            }
            x = next;
            y = y_next;
            u_prev = u;
        }
        rec.step_seconds = t_steps.seconds();
        log.iterations.push(rec);

        let t_upd = Timer::start();
        s.data.extend(&pending)?;
        s.gp = if it % cfg.refit_every == 0 { s.gp.refit(&s.data, &fit)? } else { s.gp.update(&pending)? };
        s.gamma = calibrate(&s.gp, &s.data, cfg.calibration_fraction, cfg.seed.wrapping_add(it as u64))?;
        update_seconds = t_upd.seconds();
        let t_cert = Timer::start();
        set = certify(sc, &s, cfg.beta.beta(t_index + 1)?)?;
        certify_seconds = t_cert.seconds();
        alpha_c = set.invariant_level(&sc.clf, cfg.shrink);
    }
    if set.count() == 0 {
        log.collapsed = true;
    }
    log.final_set = Some(set);
    Ok(log)
}

/// Pure LQR tracking with input clamping only. Set exits are counted against
/// the invariant level certified from the initial data.
pub fn run_unsafe_baseline(sc: &Scenario, cfg: &ExplorationConfig, targets: &[Vec<f64>]) -> Result<RunLog> {
    if targets.is_empty() {
        return Err(Error::Config("the baseline needs at least one target".into()));
    }
    let (s, set, alpha_c) = setup(sc, cfg)?;
    let mut sensor = Sensor::new(sc.sensor_std.clone(), cfg.seed)?;
    let mut pump = sc.pump.map(|p| PumpDisturbance::new(p, cfg.seed));
    let mut log = RunLog {
        steps: vec![],
        iterations: vec![],
        initial_set: Some(set.clone()),
        final_set: Some(set),
        eta: s.eta_dt2 / (cfg.dt * cfg.dt),
        collapsed: false,
        diverged: false,
    };
    let mut x = sc.x0.clone();
    let mut y = sensor.measure(&x);
    let mut u_prev: Vec<f64> = sc.u_op().to_vec();
    let mut t_index = 0u64;
    'run: for it in 1..=cfg.iterations {
        let zt = fixed_target(sc, targets, it);
        for _ in 0..cfg.steps_per_iteration {
            t_index += 1;
            let u_lin = sc.nominal_input(&sc.to_model(&y), &zt);
            let mut u: Vec<f64> = sc.u_box.clamp(&u_lin.iter().zip(sc.u_op()).map(|(a, b)| a + b).collect::<Vec<_>>());
            if let Some(r) = sc.slew {
                u = rate_limit(&u_prev, &u, r, cfg.dt);
            }
            let w = pump.as_mut().map_or(sc.nominal_exogenous(), |p| p.next_inflow());
            let v = sc.clf.value(&DVector::from_vec(sc.to_model(&x)));
            log.steps.push(StepRecord {
                t: (t_index - 1) as f64 * cfg.dt,
                iteration: it,
                x: x.clone(),
                u: u.clone(),
                s: 0.0,
                b: f64::NAN,
                margin: f64::NAN,
                beta: f64::NAN,
                sigma_agg: f64::NAN,
                v,
                envelope_violation: false,
                violation: !sc.x_box.contains(&x) || !sc.u_box.contains(&u),
                outside_set: v > alpha_c,
            });
            x = match step_rk4(sc.plant.as_ref(), &x, &u, w, cfg.dt) {
                Ok(next) => next,
                Err(Error::NonFinite(_)) => {
                    log.diverged = true;
                    break 'run;
                }
                Err(e) => return Err(e),
            };
            y = sensor.measure(&x);
            u_prev = u;
        }
    }
    Ok(log)
}
