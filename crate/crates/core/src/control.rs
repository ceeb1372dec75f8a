//! LQR synthesis, quadratic Lyapunov functions and zero-order-hold discretization.

use nalgebra::{Complex, DMatrix, DVector};

use crate::{Error, Result};

const NEWTON_MAX_ITERS: usize = 100;
const RICCATI_ODE_MAX_STEPS: usize = 2_000_000;
const VALUE_ITERATION_MAX: usize = 1_000_000;

/// Nominal `ẋ = Ax + Bu` (or `x⁺ = Ax + Bu` when `dt` is set) in coordinates
/// shifted to the operating point `(x_op, u_op)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub dt: Option<f64>,
    pub x_op: DVector<f64>,
    pub u_op: DVector<f64>,
}

impl LinearModel {
    pub fn continuous(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let (n, m) = (a.nrows(), b.ncols());
        let m = Self { a, b, dt: None, x_op: DVector::zeros(n), u_op: DVector::zeros(m) };
        m.check()?;
        Ok(m)
    }

    pub fn with_operating_point(mut self, x_op: DVector<f64>, u_op: DVector<f64>) -> Result<Self> {
        self.x_op = x_op;
        self.u_op = u_op;
        self.check()?;
        Ok(self)
    }

    fn check(&self) -> Result<()> {
        let n = self.a.nrows();
        if self.a.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.a.ncols() });
        }
        if self.b.nrows() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.b.nrows() });
        }
        if self.x_op.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.x_op.len() });
        }
        if self.u_op.len() != self.b.ncols() {
            return Err(Error::DimensionMismatch { expected: self.b.ncols(), got: self.u_op.len() });
        }
        if self.a.iter().chain(self.b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("linear model"));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Least-squares input holding `x_target` at rest: `argmin_u ‖A x + B u + offset‖`.
    pub fn steady_state_input(&self, x_target: &DVector<f64>, offset: Option<&DVector<f64>>) -> DVector<f64> {
        let mut rhs = -(&self.a * x_target);
        if let Some(o) = offset {
            rhs -= o;
        }
        let svd = self.b.clone().svd(true, true);
        svd.solve(&rhs, 1e-12).unwrap_or_else(|_| DVector::zeros(self.input_dim()))
    }
}

/// Decrease condition attached to a Lyapunov function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decay {
    /// `dV/dt ≤ −λ V`.
    Continuous(f64),
    /// `V(x⁺) ≤ (1 − v̄) V(x)`.
    Discrete(f64),
}

/// `V(x) = xᵀPx` with the LQR gain that makes it decrease.
#[derive(Debug, Clone, PartialEq)]
pub struct Clf {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub decay: Decay,
}

impl Clf {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.p * x))
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (&self.p * x) * 2.0
    }

    pub fn rate(&self) -> f64 {
        match self.decay {
            Decay::Continuous(l) | Decay::Discrete(l) => l,
        }
    }
}

/// Rejects pairs that no feedback can stabilize.
///
/// Every input column must act on the state, and each eigenvalue of `A` with
/// non-negative real part (non-negative `|λ|−1` when `discrete`) must pass the
/// PBH rank test `rank[A − λI, B] = n`.
pub fn check_stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>, discrete: bool) -> Result<()> {
    let n = a.nrows();
    for j in 0..b.ncols() {
        if b.column(j).iter().all(|v| *v == 0.0) {
            return Err(Error::NotStabilizable(format!("input {j} has no effect on the state")));
        }
    }
    let eig = a.complex_eigenvalues();
    let scale = a.norm().max(b.norm()).max(1.0);
    for lam in eig.iter() {
        let unstable = if discrete { lam.norm() >= 1.0 - 1e-12 } else { lam.re >= -1e-12 };
        if !unstable {
            continue;
        }
        let mut m = DMatrix::<Complex<f64>>::zeros(n, n + b.ncols());
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = Complex::new(a[(i, j)], 0.0);
            }
            m[(i, i)] -= *lam;
            for j in 0..b.ncols() {
                m[(i, n + j)] = Complex::new(b[(i, j)], 0.0);
            }
        }
        let sv = m.singular_values();
        let smallest = sv.iter().copied().fold(f64::INFINITY, f64::min);
        if smallest <= 1e-10 * scale {
            return Err(Error::NotStabilizable(format!("uncontrollable mode at {lam}")));
        }
    }
    Ok(())
}

/// Solves `AᵀX + XA = −C` by vectorization (small systems only).
pub fn solve_lyapunov(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    let op = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_column_slice((-c).as_slice());
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidArgument("singular Lyapunov operator".into()))?;
    let x = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok((&x + x.transpose()) * 0.5)
}

/// Solves `AᵀXA − X = −C` by vectorization.
pub fn solve_discrete_lyapunov(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let at = a.transpose();
    let op = at.kronecker(&at) - DMatrix::<f64>::identity(n * n, n * n);
    let rhs = DVector::from_column_slice((-c).as_slice());
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidArgument("singular Stein operator".into()))?;
    let x = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok((&x + x.transpose()) * 0.5)
}

/// `AᵀP + PA − PBR⁻¹BᵀP + Q`.
pub fn care_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    let rinv = r.clone().try_inverse().unwrap_or_else(|| DMatrix::zeros(r.nrows(), r.ncols()));
    a.transpose() * p + p * a - p * b * rinv * b.transpose() * p + q
}

pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max)
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max)
}

fn check_weights(n: usize, m: usize, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if q.shape() != (n, n) {
        return Err(Error::DimensionMismatch { expected: n, got: q.nrows() });
    }
    if r.shape() != (m, m) {
        return Err(Error::DimensionMismatch { expected: m, got: r.nrows() });
    }
    if crate::linalg::min_symmetric_eigenvalue(q) < -1e-12 {
        return Err(Error::InvalidArgument("Q must be positive semidefinite".into()));
    }
    r.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::InvalidArgument("R must be positive definite".into()))
}

/// Stabilizing gain from Bass's method, `K = BᵀW⁻¹` with
/// `(A + sI)W + W(A + sI)ᵀ = 2BBᵀ`. Needs a controllable pair.
fn bass_gain(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let s = a.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max) + a.norm() * 1e-3 + 1.0;
    let shifted = -(a + DMatrix::identity(n, n) * s);
    // shiftedᵀ-form: solve M W + W Mᵀ = −2BBᵀ with M = shifted, via the transposed Lyapunov solver.
    let w = solve_lyapunov(&shifted.transpose(), &(b * b.transpose() * 2.0)).ok()?;
    let winv = w.clone().cholesky()?.inverse();
    let k = b.transpose() * winv;
    (spectral_abscissa(&(a - b * &k)) < 0.0).then_some(k)
}

/// Integrates the Riccati differential equation forward from `P = 0`.
fn riccati_flow(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, rinv: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let s = b * rinv * b.transpose();
    let f = |p: &DMatrix<f64>| a.transpose() * p + p * a - p * &s * p + q;
    let scale = a.norm() + s.norm() + q.norm() + 1.0;
    let mut h = 0.1 / scale;
    let mut p = DMatrix::zeros(n, n);
    for _ in 0..RICCATI_ODE_MAX_STEPS {
        let k1 = f(&p);
        let k2 = f(&(&p + &k1 * (h / 2.0)));
        let k3 = f(&(&p + &k2 * (h / 2.0)));
        let k4 = f(&(&p + &k3 * h));
        let next = &p + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if next.iter().any(|v| !v.is_finite()) || next.norm() > 1e12 {
            return Err(Error::RiccatiDivergence(0));
        }
        let change = (&next - &p).norm();
        p = next;
        if change <= 1e-12 * (1.0 + p.norm()) {
            return Ok(p);
        }
        h = (h * 1.001).min(10.0 / scale);
    }
    Err(Error::RiccatiDivergence(RICCATI_ODE_MAX_STEPS))
}

/// Continuous algebraic Riccati equation by Newton–Kleinman iteration.
/// Returns `(P, K)` with `K = R⁻¹BᵀP`.
pub fn care(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let rinv = check_weights(n, b.ncols(), q, r)?;
    check_stabilizable(a, b, false)?;
    let mut k = if spectral_abscissa(a) < 0.0 {
        DMatrix::zeros(b.ncols(), n)
    } else if let Some(k) = bass_gain(a, b) {
        k
    } else {
        &rinv * b.transpose() * riccati_flow(a, b, q, &rinv)?
    };
    let mut p = DMatrix::zeros(n, n);
    for it in 0..NEWTON_MAX_ITERS {
        let ac = a - b * &k;
        let c = q + k.transpose() * r * &k;
        let next = solve_lyapunov(&ac, &c).map_err(|_| Error::RiccatiDivergence(it))?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::RiccatiDivergence(it));
        }
        k = &rinv * b.transpose() * &next;
        let change = (&next - &p).norm();
        p = next;
        if change <= 1e-14 * (1.0 + p.norm()) {
            break;
        }
    }
    if spectral_abscissa(&(a - b * &k)) >= 0.0 {
        return Err(Error::RiccatiDivergence(NEWTON_MAX_ITERS));
    }
    Ok((p, k))
}

/// Discrete algebraic Riccati equation: value iteration until the gain is
/// stabilizing, then Hewer's Newton iteration. Returns `(P, K)` with
/// `K = (R + BᵀPB)⁻¹BᵀPA`.
pub fn dare(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    check_weights(n, b.ncols(), q, r)?;
    check_stabilizable(a, b, true)?;
    let gain = |p: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let s = r + b.transpose() * p * b;
        let inv = s.try_inverse().ok_or(Error::RiccatiDivergence(0))?;
        Ok(inv * b.transpose() * p * a)
    };
    let mut k = DMatrix::zeros(b.ncols(), n);
    if spectral_radius(a) >= 1.0 {
        let mut p = q.clone();
        let mut ok = false;
        for _ in 0..VALUE_ITERATION_MAX {
            k = gain(&p)?;
            p = a.transpose() * &p * (a - b * &k) + q;
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::RiccatiDivergence(0));
            }
            if spectral_radius(&(a - b * &k)) < 1.0 {
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::RiccatiDivergence(VALUE_ITERATION_MAX));
        }
    }
    let mut p = DMatrix::zeros(n, n);
    for it in 0..NEWTON_MAX_ITERS {
        let ac = a - b * &k;
        let c = q + k.transpose() * r * &k;
        let next = solve_discrete_lyapunov(&ac, &c).map_err(|_| Error::RiccatiDivergence(it))?;
        k = gain(&next)?;
        let change = (&next - &p).norm();
        p = next;
        if change <= 1e-14 * (1.0 + p.norm()) {
            break;
        }
    }
    if spectral_radius(&(a - b * &k)) >= 1.0 {
        return Err(Error::RiccatiDivergence(NEWTON_MAX_ITERS));
    }
    Ok((p, k))
}

/// Largest `λ` with `(Q + KᵀRK) ⪰ λP`, i.e. the guaranteed decay rate of `V`
/// along the nominal closed loop.
pub fn certified_decay(p: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<f64> {
    let l = p
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("P must be positive definite".into()))?
        .l();
    let linv = l.try_inverse().ok_or_else(|| Error::InvalidArgument("singular P".into()))?;
    Ok(crate::linalg::min_symmetric_eigenvalue(&(&linv * m * linv.transpose())))
}

/// LQR design. Continuous models use the CARE with decay rate
/// `λ = min(0.5·min|Re eig(A−BK)|, 0.9·certified)` unless `lambda` is given;
/// discrete models use the DARE with `v̄` derived the same way from the
/// one-step contraction.
pub fn lqr(model: &LinearModel, q: &DMatrix<f64>, r: &DMatrix<f64>, lambda: Option<f64>) -> Result<Clf> {
    match model.dt {
        None => {
            let (p, k) = care(&model.a, &model.b, q, r)?;
            let ac = &model.a - &model.b * &k;
            let lam = match lambda {
                Some(l) if l > 0.0 => l,
                Some(l) => return Err(Error::InvalidArgument(format!("decay rate must be positive, got {l}"))),
                None => {
                    let slowest = ac.complex_eigenvalues().iter().map(|l| l.re.abs()).fold(f64::INFINITY, f64::min);
                    let cert = certified_decay(&p, &(q + k.transpose() * r * &k))?;
                    (0.5 * slowest).min(0.9 * cert)
                }
            };
            Ok(Clf { p, k, decay: Decay::Continuous(lam) })
        }
        Some(_) => {
            let (p, k) = dare(&model.a, &model.b, q, r)?;
            let vbar = match lambda {
                Some(l) if l > 0.0 && l < 1.0 => l,
                Some(l) => return Err(Error::InvalidArgument(format!("discrete decrease must be in (0,1), got {l}"))),
                None => {
                    // V(x⁺) − V(x) = −xᵀ(Q + KᵀRK)x along the closed loop.
                    let cert = certified_decay(&p, &(q + k.transpose() * r * &k))?;
                    (0.9 * cert).min(0.5)
                }
            };
            Ok(Clf { p, k, decay: Decay::Discrete(vbar) })
        }
    }
}

/// `exp(M)` and `φ₁(M) = Σ Mᵏ/(k+1)!` by Taylor series with scaling and squaring.
pub fn expm_phi1(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let norm = m.abs().row_sum().max();
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = m / 2f64.powi(s);
    let eye = DMatrix::<f64>::identity(n, n);
    let mut term = eye.clone();
    let mut e = eye.clone();
    let mut phi = eye.clone();
    for k in 1..=24 {
        term = &term * &scaled / k as f64;
        e += &term;
        phi += &term / (k + 1) as f64;
    }
    for _ in 0..s {
        phi = (&e + &eye) * &phi * 0.5;
        e = &e * &e;
    }
    (e, phi)
}

/// Zero-order-hold discretization `A_d = e^{AΔt}`, `B_d = ∫₀^{Δt} e^{As} ds B`.
pub fn discretize_zoh(model: &LinearModel, dt: f64) -> Result<LinearModel> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    if model.dt.is_some() {
        return Err(Error::InvalidArgument("model is already discrete".into()));
    }
    let (e, phi) = expm_phi1(&(&model.a * dt));
    Ok(LinearModel {
        a: e,
        b: phi * &model.b * dt,
        dt: Some(dt),
        x_op: model.x_op.clone(),
        u_op: model.u_op.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn poly() -> (DMatrix<f64>, DMatrix<f64>) {
        (DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, -2.0]), DMatrix::from_row_slice(2, 1, &[0.0, 1.0]))
    }

    #[test]
    fn scalar_care() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let (p, k) = care(&DMatrix::zeros(1, 1), &one, &one, &one).unwrap();
        assert_relative_eq!(p[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(k[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn polynomial_benchmark_lqr() {
        let (a, b) = poly();
        let q = DMatrix::identity(2, 2) * 0.1;
        let r = DMatrix::from_element(1, 1, 0.1);
        let (p, k) = care(&a, &b, &q, &r).unwrap();
        assert!(care_residual(&a, &b, &q, &r, &p).norm() <= 1e-8 * q.norm());
        // Reference values from an independent Hamiltonian-eigenvector solve.
        let expect = DMatrix::from_row_slice(2, 2, &[0.264575, 0.1, 0.1, 0.064575]);
        assert!((&p - expect).abs().max() < 1e-6);
        assert_relative_eq!(k[(0, 0)], 1.0, epsilon = 1e-9);
        assert_relative_eq!(k[(0, 1)], 0.645751, epsilon = 1e-6);
        assert!(spectral_abscissa(&(&a - &b * &k)) < 0.0);

        let clf = lqr(&LinearModel::continuous(a, b).unwrap(), &q, &r, None).unwrap();
        let Decay::Continuous(l) = clf.decay else { panic!() };
        assert_relative_eq!(l, 0.5 * 0.456850, epsilon = 1e-5);
    }

    #[test]
    fn riccati_flow_agrees_with_newton() {
        let (a, b) = poly();
        let q = DMatrix::identity(2, 2) * 0.1;
        let r = DMatrix::from_element(1, 1, 0.1);
        let p_ode = riccati_flow(&a, &b, &q, &DMatrix::from_element(1, 1, 10.0)).unwrap();
        let (p, _) = care(&a, &b, &q, &r).unwrap();
        assert!((p_ode - p).abs().max() < 1e-8);
    }

    #[test]
    fn unstabilizable_pairs_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(check_stabilizable(&a, &b, false), Err(Error::NotStabilizable(_))));
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let q = DMatrix::identity(2, 2);
        let r = DMatrix::identity(1, 1);
        assert!(care(&a, &b, &q, &r).is_err());
    }

    #[test]
    fn stabilizable_but_uncontrollable_uses_flow_seed() {
        // Unstable mode is controllable, stable mode is not: Bass fails, flow seeds Newton.
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let q = DMatrix::identity(2, 2);
        let r = DMatrix::identity(1, 1);
        let (p, k) = care(&a, &b, &q, &r).unwrap();
        assert!(care_residual(&a, &b, &q, &r, &p).norm() < 1e-9);
        assert!(spectral_abscissa(&(&a - &b * &k)) < 0.0);
        assert_relative_eq!(p[(0, 0)], 1.0 + 2f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn dare_fixed_point() {
        let (a, b) = poly();
        let d = discretize_zoh(&LinearModel::continuous(a, b).unwrap(), 0.1).unwrap();
        let q = DMatrix::identity(2, 2);
        let r = DMatrix::identity(1, 1);
        let (p, k) = dare(&d.a, &d.b, &q, &r).unwrap();
        let s = &r + d.b.transpose() * &p * &d.b;
        let rhs = d.a.transpose() * &p * &d.a
            - d.a.transpose() * &p * &d.b * s.try_inverse().unwrap() * d.b.transpose() * &p * &d.a
            + &q;
        assert!((rhs - &p).norm() < 1e-9);
        assert!(spectral_radius(&(&d.a - &d.b * k)) < 1.0);
    }

    #[test]
    fn zoh_edge_cases_and_oracle() {
        let b = DMatrix::from_row_slice(2, 1, &[0.3, -1.0]);
        let zero = LinearModel::continuous(DMatrix::zeros(2, 2), b.clone()).unwrap();
        let d = discretize_zoh(&zero, 0.25).unwrap();
        assert_eq!(d.a, DMatrix::identity(2, 2));
        assert!((d.b - &b * 0.25).abs().max() < 1e-15);

        let scalar = LinearModel::continuous(DMatrix::from_element(1, 1, -1.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let d = discretize_zoh(&scalar, 1.0).unwrap();
        assert_relative_eq!(d.a[(0, 0)], (-1f64).exp(), epsilon = 1e-14);
        assert_relative_eq!(d.b[(0, 0)], 1.0 - (-1f64).exp(), epsilon = 1e-14);

        let a = DMatrix::from_row_slice(3, 3, &[-0.4, 2.0, 0.0, -3.0, 0.1, 1.0, 0.5, 0.0, -7.0]);
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, -1.0, 0.5]);
        let dt = 1.7;
        let d = discretize_zoh(&LinearModel::continuous(a.clone(), b.clone()).unwrap(), dt).unwrap();
        let mut aug = DMatrix::zeros(5, 5);
        aug.view_mut((0, 0), (3, 3)).copy_from(&(&a * dt));
        aug.view_mut((0, 3), (3, 2)).copy_from(&(&b * dt));
        let ex = aug.exp();
        assert!((d.a - ex.view((0, 0), (3, 3))).abs().max() < 1e-10);
        assert!((d.b - ex.view((0, 3), (3, 2))).abs().max() < 1e-10);
    }

    #[test]
    fn steady_state_input_least_squares() {
        let (a, b) = poly();
        let m = LinearModel::continuous(a, b).unwrap();
        let u = m.steady_state_input(&DVector::from_vec(vec![2.0, 0.0]), None);
        assert_eq!(u[0], 0.0);
        let u = m.steady_state_input(&DVector::from_vec(vec![0.0, 0.0]), Some(&DVector::from_vec(vec![0.0, 1.5])));
        assert_relative_eq!(u[0], -1.5, epsilon = 1e-12);
    }
}
