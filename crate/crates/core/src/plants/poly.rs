use nalgebra::DMatrix;

use super::Plant;
use crate::Result;

/// `ẋ₁ = x₂`, `ẋ₂ = −2x₂ + x₂² + u`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PolynomialPlant;

impl PolynomialPlant {
    /// Residual of the truth against its linearization at the origin.
    pub fn residual(x: &[f64]) -> Vec<f64> {
        vec![0.0, x[1] * x[1]]
    }

    pub fn nominal() -> (DMatrix<f64>, DMatrix<f64>) {
        (DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, -2.0]), DMatrix::from_row_slice(2, 1, &[0.0, 1.0]))
    }
}

impl Plant for PolynomialPlant {
    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn deriv_unchecked(&self, x: &[f64], u: &[f64], _w: f64) -> Vec<f64> {
        vec![x[1], -2.0 * x[1] + x[1] * x[1] + u[0]]
    }

    fn jacobian(&self, x: &[f64], _u: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, -2.0 + 2.0 * x[1]]);
        Ok((a, DMatrix::from_row_slice(2, 1, &[0.0, 1.0])))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plants::finite_difference_jacobian;

    #[test]
    fn linearization_at_origin() {
        let (a, b) = PolynomialPlant.jacobian(&[0.0, 0.0], &[0.0]).unwrap();
        let (a0, b0) = PolynomialPlant::nominal();
        assert_eq!(a, a0);
        assert_eq!(b, b0);
    }

    #[test]
    fn residual_identity() {
        let (a, b) = PolynomialPlant::nominal();
        for &(x1, x2, u) in &[(0.3, -1.7, 2.0), (-4.0, 4.5, -9.0), (0.0, 0.25, 0.0)] {
            let f = PolynomialPlant.deriv(&[x1, x2], &[u], 0.0).unwrap();
            let lin = [a[(0, 0)] * x1 + a[(0, 1)] * x2 + b[(0, 0)] * u, a[(1, 0)] * x1 + a[(1, 1)] * x2 + b[(1, 0)] * u];
            let g = PolynomialPlant::residual(&[x1, x2]);
            assert!((f[0] - lin[0] - g[0]).abs() <= 1e-12 * (1.0 + g[0].abs()));
            assert!((f[1] - lin[1] - g[1]).abs() <= 1e-12 * (1.0 + g[1].abs()));
        }
    }

    #[test]
    fn analytic_jacobian_matches_differences() {
        let x = [0.4, 1.3];
        let (a, b) = PolynomialPlant.jacobian(&x, &[0.7]).unwrap();
        let (fa, fb) = finite_difference_jacobian(&PolynomialPlant, &x, &[0.7], 1e-6);
        assert!((a - fa).abs().max() < 1e-8);
        assert!((b - fb).abs().max() < 1e-8);
    }
}
