//! Python bindings: GP regression, LQR, the filter QP, plant constants and
//! the command-line driver.

use clap::Parser;
use gp_pcis::cli::{run, Cli};
use gp_pcis::config::{poly2d_default, tank3_default};
use gp_pcis::control::care;
use gp_pcis::gp::{Dataset, GpPosterior, ResidualModel};
use gp_pcis::kernels::{Kernel, Points};
use gp_pcis::plants::{TankParams, TankPlant};
use gp_pcis::safe_qp::{solve_qp as solve, QpProblem};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != c) {
        return Err(value_err("ragged matrix"));
    }
    Ok(DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn points(rows: &[Vec<f64>]) -> PyResult<Points> {
    let m = matrix(rows)?;
    Ok(Points::from_rows(&m))
}

fn kernel(name: &str, variance: f64, lengthscale: f64) -> PyResult<Kernel> {
    match name {
        "rbf" => Kernel::rbf(variance, lengthscale),
        "matern32" => Kernel::matern32(variance, lengthscale),
        "matern52" => Kernel::matern52(variance, lengthscale),
        "poly2" => Kernel::polynomial(variance, lengthscale, 2),
        other => return Err(value_err(format!("unknown kernel {other:?}"))),
    }
    .map_err(value_err)
}

/// Posterior mean and standard deviation of a single-output GP.
#[pyfunction]
#[pyo3(signature = (x, y, queries, kernel_name = "rbf", variance = 1.0, lengthscale = 1.0, noise_var = 1e-4))]
fn gp_predict(
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    queries: Vec<Vec<f64>>,
    kernel_name: &str,
    variance: f64,
    lengthscale: f64,
    noise_var: f64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let targets = Points::from_slices(1, y.chunks(1));
    let data = Dataset::new(points(&x)?, targets, vec![noise_var]).map_err(value_err)?;
    let gp = GpPosterior::fit(&data, &kernel(kernel_name, variance, lengthscale)?, None).map_err(value_err)?;
    let pred = gp.predict_batch(&points(&queries)?);
    Ok((pred.mean.column(0).iter().copied().collect(), pred.std.column(0).iter().copied().collect()))
}

/// Continuous-time LQR: returns `(P, K)`.
#[pyfunction]
fn lqr(
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let (p, k) = care(&matrix(&a)?, &matrix(&b)?, &matrix(&q)?, &matrix(&r)?).map_err(value_err)?;
    Ok((rows(&p), rows(&k)))
}

/// Filter QP with `R_s = I`: returns `(u, s, objective)`.
#[pyfunction]
fn solve_qp(u_lin: Vec<f64>, a: Vec<f64>, b: f64, lo: Vec<f64>, hi: Vec<f64>, rho: f64) -> PyResult<(Vec<f64>, f64, f64)> {
    let p = QpProblem::new(
        DVector::from_vec(u_lin),
        DVector::from_vec(a),
        b,
        DVector::from_vec(lo),
        DVector::from_vec(hi),
    )
    .with_rho(rho);
    let sol = solve(&p).map_err(value_err)?;
    Ok((sol.u.iter().copied().collect(), sol.s, sol.objective))
}

/// Outlet and coupling coefficients of the default three-tank plant.
#[pyfunction]
fn tank_coefficients() -> PyResult<(Vec<f64>, Vec<f64>)> {
    let p = TankPlant::new(TankParams::default()).map_err(value_err)?;
    Ok((p.outlet_coefficients().to_vec(), p.coupling_coefficients().to_vec()))
}

/// Default experiment config (`"poly2d"` or `"tank3"`) as TOML.
#[pyfunction]
fn default_config(name: &str) -> PyResult<String> {
    let cfg = match name {
        "poly2d" => poly2d_default(),
        "tank3" => tank3_default(),
        other => return Err(value_err(format!("unknown benchmark {other:?}"))),
    };
    cfg.to_toml().map_err(value_err)
}

/// Runs a `gp-pcis` subcommand, e.g. `["certify", "-c", "cfg.toml", "-o", "out"]`,
/// and returns its summary.
#[pyfunction]
fn run_cli(args: Vec<String>) -> PyResult<String> {
    let cli = Cli::try_parse_from(std::iter::once("gp-pcis".to_string()).chain(args)).map_err(value_err)?;
    run(&cli).map_err(value_err)
}

#[pymodule]
fn pygppcis(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(gp_predict, m)?)?;
    m.add_function(wrap_pyfunction!(lqr, m)?)?;
    m.add_function(wrap_pyfunction!(solve_qp, m)?)?;
    m.add_function(wrap_pyfunction!(tank_coefficients, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
