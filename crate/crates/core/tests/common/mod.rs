#![allow(dead_code)]

use gp_pcis::config::poly2d_default;
use gp_pcis::control::{lqr, LinearModel};
use gp_pcis::exploration::{run_safe, RunLog};
use gp_pcis::gp::{ConstantResidual, Dataset, GpPosterior, ResidualModel};
use gp_pcis::kernels::{Kernel, Points};
use gp_pcis::pcis::{BoxSet, PcisPredicate};
use gp_pcis::plants::PolynomialPlant;
use gp_pcis::safe_qp::{solve_qp, ConstraintMode, QpProblem};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

pub type Check = std::result::Result<(), TestCaseError>;

pub fn kernel_strategy(dim: usize) -> impl Strategy<Value = Kernel> {
    let v = 0.1f64..5.0;
    let l = 0.1f64..3.0;
    prop_oneof![
        (v.clone(), l.clone()).prop_map(|(v, l)| Kernel::rbf(v, l).unwrap()),
        (v.clone(), l.clone()).prop_map(|(v, l)| Kernel::matern32(v, l).unwrap()),
        (v.clone(), l.clone()).prop_map(|(v, l)| Kernel::matern52(v, l).unwrap()),
        (v.clone(), 0.1f64..2.0, 1u32..4).prop_map(|(v, c, d)| Kernel::polynomial(v, c, d).unwrap()),
        (v.clone(), l.clone(), 0.5f64..4.0).prop_map(|(v, l, p)| Kernel::periodic(v, l, p).unwrap()),
        (v.clone(), prop::collection::vec(0.1f64..3.0, dim)).prop_map(|(v, ls)| Kernel::rbf_ard(v, ls).unwrap()),
        (v.clone(), l.clone(), v, 0.1f64..2.0)
            .prop_map(|(a, l, b, c)| Kernel::sum(Kernel::rbf(a, l).unwrap(), Kernel::linear(b, c).unwrap()).unwrap()),
    ]
}

pub fn points_strategy(dim: usize, lo: usize, hi: usize) -> impl Strategy<Value = Points> {
    prop::collection::vec(prop::collection::vec(-2.0f64..2.0, dim), lo..hi)
        .prop_map(move |rows| Points::from_slices(dim, rows.iter().map(|r| r.as_slice())))
}

/// Gram matrices are symmetric and positive semidefinite up to round-off.
pub fn kernel_psd(kernel: &Kernel, x: &Points) -> Check {
    let m = x.to_matrix();
    let k = kernel.gram(&m, &m).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let scale = k.diagonal().amax().max(1.0);
    for i in 0..k.nrows() {
        for j in 0..i {
            prop_assert!((k[(i, j)] - k[(j, i)]).abs() <= 1e-12 * scale);
        }
    }
    let min = k.symmetric_eigenvalues().min();
    prop_assert!(min >= -1e-9 * scale * k.nrows() as f64, "min eigenvalue {min}");
    Ok(())
}

/// Conditioning on one more observation never raises the predictive variance.
pub fn variance_monotone(kernel: &Kernel, x: &Points, extra: &[f64], queries: &Points) -> Check {
    let n = x.len();
    let y: Vec<f64> = (0..n).map(|i| x.row(i).iter().map(|v| v.sin()).sum()).collect();
    let noise = vec![1e-2];
    let data = Dataset::new(x.clone(), Points::from_slices(1, y.chunks(1)), noise.clone()).unwrap();
    let gp = GpPosterior::fit(&data, kernel, None).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let more = Dataset::new(Points::from_slices(x.dim(), [extra]), Points::from_slices(1, [&[0.5][..]]), noise).unwrap();
    let gp2 = gp.update(&more).map_err(|e| TestCaseError::fail(e.to_string()))?;
    for i in 0..queries.len() {
        let q = queries.row(i);
        let (s1, s2) = (gp.predict(q).std[0], gp2.predict(q).std[0]);
        prop_assert!(s2 <= s1 + 1e-7 * (1.0 + s1), "std grew from {s1} to {s2} at {q:?}");
        prop_assert!(s2 >= 0.0);
    }
    Ok(())
}

pub fn poly_design() -> (LinearModel, gp_pcis::control::Clf) {
    let (a, b) = PolynomialPlant::nominal();
    let model = LinearModel::continuous(a, b).unwrap();
    let clf = lqr(&model, &DMatrix::identity(2, 2), &DMatrix::identity(1, 1), None).unwrap();
    (model, clf)
}

/// A state certified under a larger uncertainty stays certified under a smaller one.
pub fn pcis_sigma_monotone(x: &[f64], s_small: [f64; 2], grow: [f64; 2], beta: f64) -> Check {
    let (model, clf) = poly_design();
    let u_box = BoxSet::new(vec![-10.0], vec![10.0]).unwrap();
    let x_box = BoxSet::new(vec![-2.0, -4.0], vec![2.0, 4.0]).unwrap();
    let small = ConstantResidual { dim: 2, std: s_small.to_vec() };
    let large = ConstantResidual { dim: 2, std: vec![s_small[0] + grow[0], s_small[1] + grow[1]] };
    let pred = |r: &dyn ResidualModel| {
        PcisPredicate { model: &model, clf: &clf, residual: r, beta, gamma: 1.0, eta_dt2: 0.0, level: 0.0, u_box: &u_box, x_box: &x_box }
            .is_member(x)
    };
    let (ms, ml) = (pred(&small), pred(&large));
    prop_assert!(ms.margin <= ml.margin + 1e-12, "margin {} > {}", ms.margin, ml.margin);
    if ml.member {
        prop_assert!(ms.member);
    }
    Ok(())
}

pub fn qp_strategy(m: usize) -> impl Strategy<Value = QpProblem> {
    (
        prop::collection::vec(-3.0f64..3.0, m),
        prop::collection::vec(-2.0f64..2.0, m),
        -3.0f64..3.0,
        prop::collection::vec(0.1f64..2.0, m),
        prop::collection::vec(0.1f64..2.0, m),
        prop::collection::vec(-1.0f64..1.0, m * m),
        0.2f64..20.0,
    )
        .prop_map(move |(ul, a, b, lo, hi, l, rho)| {
            let l = DMatrix::from_vec(m, m, l);
            let r_s = &l * l.transpose() + DMatrix::identity(m, m) * 0.2;
            let mut p = QpProblem::new(
                DVector::from_vec(ul),
                DVector::from_vec(a),
                b,
                -DVector::from_vec(lo),
                DVector::from_vec(hi),
            )
            .with_rho(rho);
            p.r_s = r_s;
            p
        })
}

/// With a nominal input that already satisfies the constraint inside the
/// box, the filter returns it unchanged with zero slack.
pub fn filter_transparent(p: &QpProblem) -> Check {
    let u = DVector::from_fn(p.u_lin.len(), |i, _| p.u_lin[i].clamp(p.lo[i], p.hi[i]));
    let mut p = p.clone();
    p.u_lin = u.clone();
    let g = p.constraint(&u);
    if g > 0.0 {
        p.b -= g + 0.1;
    }
    let sol = solve_qp(&p).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(sol.mode, ConstraintMode::Inactive);
    prop_assert_eq!(sol.s, 0.0);
    prop_assert!((sol.u - u).amax() <= 1e-12);
    Ok(())
}

/// The active-set solution is no worse than any box point (vertices, random
/// samples) and has a small KKT residual.
pub fn qp_optimal(p: &QpProblem, probes: &[Vec<f64>]) -> Check {
    let sol = solve_qp(p).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert!(sol.kkt_residual <= 1e-8, "kkt {}", sol.kkt_residual);
    let m = p.u_lin.len();
    for t in probes {
        let u = DVector::from_fn(m, |i, _| p.lo[i] + (p.hi[i] - p.lo[i]) * t[i]);
        prop_assert!(sol.objective <= p.objective(&u) + 1e-9 * (1.0 + sol.objective.abs()));
    }
    Ok(())
}

/// Tiny exploration run: fast enough to replay many seeds.
pub fn tiny_run(seed: u64) -> RunLog {
    let mut cfg = poly2d_default();
    cfg.set_seed(seed);
    cfg.exploration.iterations = 2;
    cfg.exploration.steps_per_iteration = 15;
    cfg.exploration.initial_points = 40;
    cfg.exploration.grid = 21;
    cfg.exploration.test_points = 20;
    cfg.gp.fit.restarts = 0;
    cfg.gp.fit.max_evals = 40;
    let sc = cfg.scenario().unwrap();
    run_safe(&sc, &cfg.exploration).unwrap()
}

/// Two runs with the same seed agree bit for bit on everything but timings.
pub fn deterministic_replay(seed: u64) -> Check {
    let strip = |mut log: RunLog| {
        for r in &mut log.iterations {
            r.update_seconds = 0.0;
            r.certify_seconds = 0.0;
            r.step_seconds = 0.0;
        }
        log
    };
    let (a, b) = (strip(tiny_run(seed)), strip(tiny_run(seed)));
    prop_assert!(a.steps == b.steps, "step logs differ for seed {seed}");
    prop_assert!(a.iterations == b.iterations, "iteration logs differ for seed {seed}");
    prop_assert!(a.final_set == b.final_set);
    Ok(())
}

/// Runs `check` over `cases` generated inputs and reports the first failure.
pub fn sweep<S: Strategy>(cases: u32, strategy: S, check: impl Fn(S::Value) -> Check) -> std::result::Result<(), String> {
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, check).map_err(|e| e.to_string())
}
