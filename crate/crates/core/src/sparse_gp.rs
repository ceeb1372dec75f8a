//! FITC sparse GP with inducing inputs picked by farthest-point sampling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::gp::{BatchPrediction, Dataset, GpPosterior, Prediction, ResidualModel};
use crate::kernels::{Kernel, Points};
use crate::linalg;
use crate::rng;
use crate::{Error, Result};

const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-4;

/// Picks `m` spread-out rows of `x`: a seeded random first row, then repeatedly
/// the row farthest from everything chosen so far.
pub fn farthest_point_indices(x: &Points, m: usize, seed: u64) -> Result<Vec<usize>> {
    let n = x.len();
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!("need 1 <= M <= n, got M={m}, n={n}")));
    }
    let mut rng = rng::stream(seed, "inducing");
    let first = rng.random_range(0..n);
    let mut chosen = vec![first];
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(first))).collect();
    while chosen.len() < m {
        let mut best = 0;
        for i in 1..n {
            if dist[i] > dist[best] {
                best = i;
            }
        }
        chosen.push(best);
        let row = x.row(best);
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), row));
        }
    }
    Ok(chosen)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

#[derive(Debug, Clone)]
struct SparseChannel {
    kernel: Kernel,
    noise_var: f64,
    prior_mean: f64,
    chol_mm: DMatrix<f64>,
    chol_b: DMatrix<f64>,
    weights: DVector<f64>,
    min_correction: f64,
}

/// FITC posterior of `q` independent channels sharing inducing inputs `Z`.
#[derive(Debug, Clone)]
pub struct SparsePosterior {
    inducing: Points,
    channels: Vec<SparseChannel>,
}

impl SparsePosterior {
    /// Fits with fixed kernels (one per channel) and `m` farthest-point inducing inputs.
    pub fn fit(data: &Dataset, kernels: &[Kernel], m: usize, seed: u64) -> Result<Self> {
        let idx = farthest_point_indices(data.inputs(), m, seed)?;
        let z = data.inputs().select(&idx);
        let prior = vec![0.0; data.output_dim()];
        Self::fit_with_inducing(data, kernels, &prior, z)
    }

    /// Reuses the hyperparameters and prior means of an exact posterior.
    pub fn from_exact(gp: &GpPosterior, data: &Dataset, m: usize, seed: u64) -> Result<Self> {
        let kernels: Vec<Kernel> = gp.channels().iter().map(|c| c.kernel().clone()).collect();
        let means: Vec<f64> = gp.channels().iter().map(|c| c.prior_mean()).collect();
        let mut data = data.clone();
        for (j, c) in gp.channels().iter().enumerate() {
            data.set_noise_var(j, c.noise_var())?;
        }
        let idx = farthest_point_indices(data.inputs(), m, seed)?;
        let z = data.inputs().select(&idx);
        Self::fit_with_inducing(&data, &kernels, &means, z)
    }

    /// Fits with explicit inducing inputs `z` (rows) and constant prior means.
    pub fn fit_with_inducing(
        data: &Dataset,
        kernels: &[Kernel],
        prior_means: &[f64],
        z: Points,
    ) -> Result<Self> {
        if kernels.len() != data.output_dim() || prior_means.len() != data.output_dim() {
            return Err(Error::DimensionMismatch { expected: data.output_dim(), got: kernels.len() });
        }
        if z.is_empty() || z.len() > data.len().max(1) {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= M <= n, got M={}, n={}",
                z.len(),
                data.len()
            )));
        }
        if z.dim() != data.input_dim() {
            return Err(Error::DimensionMismatch { expected: data.input_dim(), got: z.dim() });
        }
        let x = data.inputs();
        let mut channels = Vec::with_capacity(kernels.len());
        for (j, kernel) in kernels.iter().enumerate() {
            kernel.validate()?;
            let noise_var = data.noise_var()[j];
            let kmm = kernel.symmetric(&z);
            let chol_mm = factor_jittered(&kmm, kernel.signal_variance())?;
            // V = L_M⁻¹ K_Mn, column i belongs to training row i.
            let mut v = kernel.cross(&z, x);
            linalg::solve_lower_in_place(&chol_mm, &mut v);
            let n = x.len();
            let mut lambda = DVector::zeros(n);
            let mut min_correction = f64::INFINITY;
            for i in 0..n {
                let corr = kernel.eval_unchecked(x.row(i), x.row(i)) - v.column(i).norm_squared();
                min_correction = min_correction.min(corr);
                lambda[i] = corr.max(0.0) + noise_var;
            }
            let resid = DVector::from_iterator(n, data.channel(j).iter().map(|y| y - prior_means[j]));
            let mut v_scaled = v.clone();
            for i in 0..n {
                let s = 1.0 / lambda[i].sqrt();
                v_scaled.column_mut(i).scale_mut(s);
            }
            let mut b = DMatrix::identity(z.len(), z.len());
            b.gemm(1.0, &v_scaled, &v_scaled.transpose(), 1.0);
            let chol_b = factor_jittered(&b, 1.0)?;
            let r = resid.component_div(&lambda);
            let weights = linalg::solve_lower_vec(&chol_b, &(&v * r));
            channels.push(SparseChannel {
                kernel: kernel.clone(),
                noise_var,
                prior_mean: prior_means[j],
                chol_mm,
                chol_b,
                weights,
                min_correction,
            });
        }
        Ok(Self { inducing: z, channels })
    }

    pub fn inducing(&self) -> &Points {
        &self.inducing
    }

    pub fn num_inducing(&self) -> usize {
        self.inducing.len()
    }

    /// Smallest FITC diagonal correction `k(x,x) − Q(x,x)` seen in training, before clamping.
    pub fn min_correction(&self) -> f64 {
        self.channels.iter().map(|c| c.min_correction).fold(f64::INFINITY, f64::min)
    }

    pub fn noise_var(&self) -> Vec<f64> {
        self.channels.iter().map(|c| c.noise_var).collect()
    }
}

fn factor_jittered(a: &DMatrix<f64>, scale: f64) -> Result<DMatrix<f64>> {
    let mut rel = 0.0;
    loop {
        let mut m = a.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += rel * scale;
        }
        if linalg::cholesky_in_place(&mut m).is_ok() {
            return Ok(m);
        }
        if rel >= JITTER_MAX {
            return Err(Error::Factorization { jitter: rel * scale });
        }
        rel = if rel == 0.0 { JITTER_START } else { rel * 10.0 };
    }
}

impl ResidualModel for SparsePosterior {
    fn input_dim(&self) -> usize {
        self.inducing.dim()
    }

    fn output_dim(&self) -> usize {
        self.channels.len()
    }

    fn predict(&self, x: &[f64]) -> Prediction {
        let q = Points::from_slices(x.len(), [x]);
        let b = self.predict_batch(&q);
        Prediction {
            mean: b.mean.row(0).iter().copied().collect(),
            std: b.std.row(0).iter().copied().collect(),
        }
    }

    fn predict_batch(&self, xs: &Points) -> BatchPrediction {
        let m = xs.len();
        let mut mean = DMatrix::zeros(m, self.channels.len());
        let mut std = DMatrix::zeros(m, self.channels.len());
        for (j, c) in self.channels.iter().enumerate() {
            let mut v = c.kernel.cross(&self.inducing, xs);
            linalg::solve_lower_in_place(&c.chol_mm, &mut v);
            let mut w = v.clone();
            linalg::solve_lower_in_place(&c.chol_b, &mut w);
            let mu = w.tr_mul(&c.weights);
            for i in 0..m {
                let prior = c.kernel.eval_unchecked(xs.row(i), xs.row(i));
                let var = prior - v.column(i).norm_squared() + w.column(i).norm_squared();
                mean[(i, j)] = c.prior_mean + mu[i];
                std[(i, j)] = var.max(0.0).sqrt();
            }
        }
        BatchPrediction { mean, std }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn data(n: usize, noise: f64) -> Dataset {
        let rows: Vec<[f64; 2]> =
            (0..n).map(|i| [(i as f64 * 0.61).sin() * 2.0, (i as f64 * 0.37).cos() * 1.5]).collect();
        let y: Vec<f64> = rows.iter().map(|p| p[0] * p[1] + p[1].sin()).collect();
        Dataset::new(
            Points::from_slices(2, rows.iter().map(|p| &p[..])),
            Points::from_slices(1, y.iter().map(std::slice::from_ref)),
            vec![noise],
        )
        .unwrap()
    }

    #[test]
    fn inducing_at_training_inputs_matches_exact() {
        let d = data(40, 0.05);
        let k = Kernel::matern52(1.0, 0.9).unwrap();
        let exact = GpPosterior::fit(&d, &k, None).unwrap();
        let sparse = SparsePosterior::fit_with_inducing(&d, &[k], &[0.0], d.inputs().clone()).unwrap();
        for i in 0..20 {
            let q = [(i as f64 * 0.3).cos() * 2.2, (i as f64 * 0.7).sin()];
            let (a, b) = (exact.predict(&q), sparse.predict(&q));
            assert_relative_eq!(a.mean[0], b.mean[0], max_relative = 1e-6, epsilon = 1e-8);
            assert_relative_eq!(a.std[0], b.std[0], max_relative = 1e-6, epsilon = 1e-6);
        }
    }

    #[test]
    fn single_inducing_point_on_constant_data() {
        let d = {
            let rows: Vec<[f64; 1]> = (0..30).map(|i| [i as f64 * 0.01]).collect();
            Dataset::new(
                Points::from_slices(1, rows.iter().map(|p| &p[..])),
                Points::from_slices(1, (0..30).map(|_| &[3.0][..])),
                vec![1e-4],
            )
            .unwrap()
        };
        let k = Kernel::rbf(10.0, 1.0).unwrap();
        let s = SparsePosterior::fit(&d, &[k], 1, 7).unwrap();
        let z = s.inducing().row(0)[0];
        assert_relative_eq!(s.predict(&[z]).mean[0], 3.0, max_relative = 1e-3);
    }

    #[test]
    fn too_many_inducing_points_rejected() {
        let d = data(5, 0.1);
        assert!(SparsePosterior::fit(&d, &[Kernel::rbf(1.0, 1.0).unwrap()], 6, 0).is_err());
        assert!(SparsePosterior::fit(&d, &[Kernel::rbf(1.0, 1.0).unwrap()], 0, 0).is_err());
    }

    #[test]
    fn farthest_point_is_deterministic_and_distinct() {
        let d = data(100, 0.1);
        let a = farthest_point_indices(d.inputs(), 10, 3).unwrap();
        assert_eq!(a, farthest_point_indices(d.inputs(), 10, 3).unwrap());
        let mut s = a.clone();
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 10);
    }

    #[test]
    fn variances_nonnegative() {
        let d = data(80, 0.01);
        let s = SparsePosterior::fit(&d, &[Kernel::rbf(1.0, 0.5).unwrap()], 10, 1).unwrap();
        let grid: Vec<[f64; 2]> = (0..50).map(|i| [-3.0 + 0.12 * i as f64, 0.5]).collect();
        let b = s.predict_batch(&Points::from_slices(2, grid.iter().map(|p| &p[..])));
        assert!(b.std.iter().all(|v| *v >= 0.0 && v.is_finite()));
    }
}
