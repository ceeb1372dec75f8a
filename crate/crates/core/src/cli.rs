//! Command-line driver. Every subcommand reads one config file and writes a
//! run directory holding a config snapshot, CSV tables and `summary.txt`.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::exploration::{initial_certificate, run_safe, run_unsafe_baseline, RunLog, Scenario};
use crate::gp::{csv_err, Dataset, GpPosterior, ResidualModel};
use crate::kernels::benchmark_suite;
use crate::metrics::{score_channel, timed, uniform_test_points};
use crate::pcis::BoxSet;
use crate::sparse_gp::SparsePosterior;
use crate::{rng, Error, Result};

#[derive(Debug, Parser)]
#[command(name = "gp-pcis", version, about = "Safe exploration with GP residual models and a CLF-QP filter")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compare the benchmark kernels on one residual dataset.
    KernelBench(Common),
    /// Compare the exact GP with FITC at several inducing-set sizes.
    SparseBench(Common),
    /// Run the exploration loop with or without the safety filter.
    Explore {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "unsafe_run")]
        safe: bool,
        #[arg(long = "unsafe")]
        unsafe_run: bool,
    },
    /// Certify the initial set and report its extent.
    Certify(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML experiment file.
    #[arg(short, long)]
    pub config: PathBuf,
    /// Overrides every seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory, created if missing.
    #[arg(short, long, default_value = "run")]
    pub out: PathBuf,
}

/// Process exit code for an error: 2 for configuration problems, 3 for a
/// certification collapse, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::CertificationCollapse => 3,
        _ => 1,
    }
}

/// Runs a parsed command line and returns the summary text.
pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::KernelBench(c) => with_run_dir(c, kernel_bench),
        Command::SparseBench(c) => with_run_dir(c, sparse_bench),
        Command::Explore { common, unsafe_run, .. } => {
            with_run_dir(common, |cfg, out| explore(cfg, out, !unsafe_run))
        }
        Command::Certify(c) => with_run_dir(c, certify),
    }
}

/// Summary text of a finished subcommand, and whether certification collapsed.
struct Outcome {
    summary: String,
    collapsed: bool,
}

impl From<String> for Outcome {
    fn from(summary: String) -> Self {
        Self { summary, collapsed: false }
    }
}

fn with_run_dir(c: &Common, f: impl FnOnce(&ExperimentConfig, &Path) -> Result<Outcome>) -> Result<String> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.set_seed(seed);
    }
    fs::create_dir_all(&c.out).map_err(|e| io_err(&c.out, e))?;
    write_text(&c.out.join("config.toml"), &cfg.to_toml()?)?;
    let outcome = f(&cfg, &c.out)?;
    write_text(&c.out.join("summary.txt"), &outcome.summary)?;
    if outcome.collapsed {
        return Err(Error::CertificationCollapse);
    }
    Ok(outcome.summary)
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::InvalidArgument(format!("{}: {e}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

/// Residuals at `n` uniform states of `region` (model coordinates) with the
/// input at the operating point, plus Gaussian noise of std `noise_std`.
fn residual_dataset(sc: &Scenario, region: &BoxSet, n: usize, noise_std: f64, seed: u64, stream: &str) -> Result<Dataset> {
    let q = sc.model.state_dim();
    let xs = uniform_test_points(region, n, seed);
    let mut noise = rng::stream(seed, &format!("{stream}-noise"));
    let mut data = Dataset::empty(q, vec![(noise_std * noise_std).max(1e-12); q])?;
    let w = sc.nominal_exogenous();
    for i in 0..xs.len() {
        let z = xs.row(i);
        let x: Vec<f64> = z.iter().zip(sc.x_op()).map(|(a, b)| a + b).collect();
        let y: Vec<f64> =
            sc.true_residual(&x, sc.u_op(), w).iter().map(|g| g + noise_std * rng::standard_normal(&mut noise)).collect();
        data.push(z, &y)?;
    }
    Ok(data)
}

/// Channels whose targets vary; a constant channel has no meaningful R².
fn informative_channels(data: &Dataset) -> Vec<usize> {
    (0..data.output_dim())
        .filter(|&j| {
            let y = data.channel(j);
            y.iter().any(|v| (v - y[0]).abs() > 0.0)
        })
        .collect()
}

fn targets(data: &Dataset, j: usize) -> Vec<f64> {
    data.channel(j).to_vec()
}

fn kernel_bench(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let kb = &cfg.kernel_bench;
    let sc = cfg.scenario()?;
    let region = BoxSet::new(kb.lo.clone(), kb.hi.clone()).map_err(|e| Error::Config(format!("kernel_bench box: {e}")))?;
    if region.dim() != sc.model.state_dim() {
        return Err(Error::Config("kernel_bench box must match the state dimension".into()));
    }
    let seed = kb.fit.seed;
    let train = residual_dataset(&sc, &region, kb.train_points, kb.noise_std, seed, "kernel-train")?;
    let test = residual_dataset(&sc, &region, kb.test_points, 0.0, seed.wrapping_add(1), "kernel-test")?;
    let channels = informative_channels(&test);

    let path = out.join("kernel_bench.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["kernel", "channel", "rmse", "mae", "r2", "log_lik", "coverage", "sigma_bar", "train_s", "predict_s"])
        .map_err(csv_err)?;
    let mut summary = format!("kernel benchmark: {} train, {} test points\n", train.len(), test.len());
    for kernel in benchmark_suite(region.dim()) {
        let label = kernel.label();
        let fitted = timed(|| GpPosterior::fit(&train, &kernel, Some(&kb.fit)));
        let (gp, train_s) = (fitted.0?, fitted.1);
        let ll = gp.log_marginal_likelihood();
        for &j in &channels {
            let (scores, predict_s) = timed(|| score_channel(&gp, test.inputs(), &targets(&test, j), j, 0.0));
            let s = scores?;
            w.write_record([
                label.clone(),
                (j + 1).to_string(),
                s.rmse.to_string(),
                s.mae.to_string(),
                s.r2.to_string(),
                ll[j].to_string(),
                s.coverage.to_string(),
                s.mean_std.to_string(),
                train_s.to_string(),
                predict_s.to_string(),
            ])
            .map_err(csv_err)?;
            let _ = writeln!(
                summary,
                "{label:<16} ch{} RMSE {:.4e} R2 {:.4} coverage {:.1}% sigma_bar {:.4e}",
                j + 1,
                s.rmse,
                s.r2,
                100.0 * s.coverage,
                s.mean_std
            );
        }
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    Ok(summary.into())
}

fn sparse_bench(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let sb = &cfg.sparse_bench;
    let kb = &cfg.kernel_bench;
    let sc = cfg.scenario()?;
    let region = BoxSet::new(kb.lo.clone(), kb.hi.clone()).map_err(|e| Error::Config(format!("kernel_bench box: {e}")))?;
    if region.dim() != sc.model.state_dim() {
        return Err(Error::Config("kernel_bench box must match the state dimension".into()));
    }
    if sb.repeats == 0 {
        return Err(Error::Config("sparse_bench.repeats must be positive".into()));
    }
    let seed = kb.fit.seed;
    let train = residual_dataset(&sc, &region, sb.train_points, kb.noise_std, seed, "sparse-train")?;
    let test = residual_dataset(&sc, &region, kb.test_points, 0.0, seed.wrapping_add(1), "sparse-test")?;
    let channels = informative_channels(&test);
    let exact = GpPosterior::fit_channels(&train, &sc.kernels, Some(&kb.fit))?;

    let path = out.join("sparse_bench.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["model", "inducing", "channel", "rmse", "coverage", "sigma_bar", "predict_s", "speedup"])
        .map_err(csv_err)?;
    let mut summary = format!("exact vs FITC: {} train, {} test points\n", train.len(), test.len());

    let predict_time = |model: &dyn ResidualModel| {
        let mut total = 0.0;
        for _ in 0..sb.repeats {
            total += timed(|| model.predict_batch(test.inputs())).1;
        }
        total / sb.repeats as f64
    };
    let t_exact = predict_time(&exact);
    let mut rows: Vec<(String, usize, Box<dyn ResidualModel>, f64)> = vec![("exact".into(), train.len(), Box::new(exact.clone()), t_exact)];
    for &m in &sb.inducing {
        if m > train.len() {
            return Err(Error::Config(format!("sparse_bench: M = {m} exceeds {} training points", train.len())));
        }
        let sparse = SparsePosterior::from_exact(&exact, &train, m, seed)?;
        let t = predict_time(&sparse);
        rows.push(("fitc".into(), m, Box::new(sparse), t));
    }
    for (name, m, model, t) in &rows {
        for &j in &channels {
            let s = score_channel(model.as_ref(), test.inputs(), &targets(&test, j), j, 0.0)?;
            let speedup = t_exact / t.max(f64::MIN_POSITIVE);
            w.write_record([
                name.clone(),
                m.to_string(),
                (j + 1).to_string(),
                s.rmse.to_string(),
                s.coverage.to_string(),
                s.mean_std.to_string(),
                t.to_string(),
                speedup.to_string(),
            ])
            .map_err(csv_err)?;
            let _ = writeln!(
                summary,
                "{name:<5} M={m:<4} ch{} RMSE {:.4e} coverage {:.1}% predict {:.3e} s speedup {:.1}x",
                j + 1,
                s.rmse,
                100.0 * s.coverage,
                t,
                speedup
            );
        }
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    Ok(summary.into())
}

fn write_log(log: &RunLog, out: &Path) -> Result<()> {
    let files: [(&str, fn(&RunLog, BufWriter<File>) -> Result<()>); 4] = [
        ("steps.csv", |l, w| l.write_steps_csv(w)),
        ("iterations.csv", |l, w| l.write_iterations_csv(w)),
        ("derived.csv", |l, w| l.write_derived_csv(w)),
        ("timings.csv", |l, w| l.write_timings_csv(w)),
    ];
    for (name, write) in files {
        write(log, create(&out.join(name))?)?;
    }
    Ok(())
}

fn explore(cfg: &ExperimentConfig, out: &Path, safe: bool) -> Result<Outcome> {
    let sc = cfg.scenario()?;
    let log = if safe {
        run_safe(&sc, &cfg.exploration)?
    } else {
        run_unsafe_baseline(&sc, &cfg.exploration, &cfg.baseline.targets)?
    };
    write_log(&log, out)?;
    if let Some(set) = &log.final_set {
        set.write_csv(create(&out.join("final_set.csv"))?, sc.x_op())?;
    }
    let mut s = String::new();
    let _ = writeln!(s, "mode: {}", if safe { "safe" } else { "unsafe" });
    let _ = writeln!(s, "steps: {}", log.steps.len());
    let _ = writeln!(s, "violations: {}", log.violations());
    let _ = writeln!(s, "set exits: {}", log.set_exits());
    let _ = writeln!(s, "envelope violations: {}", log.envelope_violations());
    let _ = writeln!(s, "slack activations: {}", log.interventions());
    let _ = writeln!(s, "eta: {:.6e}", log.eta);
    if log.diverged {
        let _ = writeln!(s, "state diverged; rollout cut short");
    }
    if let (Some(a), Some(b)) = (&log.initial_set, &log.final_set) {
        let _ = writeln!(s, "|S| initial: {}  final: {}", a.count(), b.count());
    }
    if let (Some(first), Some(last)) = (log.iterations.first(), log.iterations.last()) {
        let _ = writeln!(s, "RMSE iteration {}: {:.6e}  iteration {}: {:.6e}", first.iteration, first.rmse, last.iteration, last.rmse);
    }
    for (i, lo_hi) in level_ranges(&log).iter().enumerate() {
        let _ = writeln!(s, "x{} range: [{:.6}, {:.6}]", i + 1, lo_hi.0, lo_hi.1);
    }
    if log.collapsed {
        let _ = writeln!(s, "certification collapsed");
    }
    Ok(Outcome { summary: s, collapsed: log.collapsed })
}

fn level_ranges(log: &RunLog) -> Vec<(f64, f64)> {
    let d = log.steps.first().map_or(0, |r| r.x.len());
    let mut out = vec![(f64::INFINITY, f64::NEG_INFINITY); d];
    for r in &log.steps {
        for (o, x) in out.iter_mut().zip(&r.x) {
            *o = (o.0.min(*x), o.1.max(*x));
        }
    }
    out
}

fn certify(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let sc = cfg.scenario()?;
    let (set, alpha_c) = initial_certificate(&sc, &cfg.exploration)?;
    set.write_csv(create(&out.join("certified_set.csv"))?, sc.x_op())?;
    let mut s = String::new();
    let _ = writeln!(s, "grid nodes: {}", set.grid.len());
    let _ = writeln!(s, "|S|: {}", set.count());
    let _ = writeln!(s, "alpha_m: {:.6e}", set.alpha_m);
    let _ = writeln!(s, "alpha_c: {:.6e}", alpha_c);
    let ranges = set.axis_ranges();
    match &ranges {
        Some(r) => {
            for (i, ((lo, hi), o)) in r.iter().zip(sc.x_op()).enumerate() {
                let _ = writeln!(s, "x{} in [{:.4}, {:.4}]", i + 1, lo + o, hi + o);
            }
        }
        None => {
            let _ = writeln!(s, "certification collapsed");
        }
    }
    Ok(Outcome { summary: s, collapsed: ranges.is_none() || alpha_c <= 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::CertificationCollapse), 3);
        assert_eq!(exit_code(&Error::NonFinite("x")), 1);
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from(["gp-pcis", "explore", "--unsafe", "-c", "a.toml", "--seed", "7"]).unwrap();
        match cli.command {
            Command::Explore { common, safe, unsafe_run } => {
                assert!(unsafe_run && !safe);
                assert_eq!(common.seed, Some(7));
            }
            _ => panic!("wrong subcommand"),
        }
        assert!(Cli::try_parse_from(["gp-pcis", "explore", "--safe", "--unsafe", "-c", "a"]).is_err());
    }
}
