//! Safety filter: a small convex QP over the input box with one soft linear
//! constraint, solved exactly by active-set enumeration.

use nalgebra::{DMatrix, DVector};

use crate::gp::ResidualModel;
use crate::pcis::PcisPredicate;
use crate::{Error, Result};

/// Variance-seeking linear term `−α·wᵀσ(x_{k+1})`, linearized in `u`
/// through one Euler step of length `dt`. Empty `weights` select the
/// channel with the largest `σ` at the current state.
#[derive(Debug, Clone, PartialEq)]
pub struct Exploration {
    pub alpha: f64,
    pub weights: Vec<f64>,
    pub dt: f64,
}

/// `min (u−u_lin)ᵀR_s(u−u_lin) + cᵀu + ρs`  s.t.  `aᵀu + b ≤ s`, `s ≥ 0`, `lo ≤ u ≤ hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub u_lin: DVector<f64>,
    pub r_s: DMatrix<f64>,
    pub rho: f64,
    pub linear: DVector<f64>,
    pub a: DVector<f64>,
    pub b: f64,
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    Free,
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintMode {
    /// `aᵀu + b < 0`, no slack.
    Inactive,
    /// `aᵀu + b = 0`, no slack.
    Tight,
    /// `s = aᵀu + b > 0`.
    Slack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u: DVector<f64>,
    pub s: f64,
    pub objective: f64,
    pub bounds: Vec<Bound>,
    pub mode: ConstraintMode,
    pub kkt_residual: f64,
}

impl QpProblem {
    /// Problem with `R_s = I`, no exploration term and the default penalty.
    pub fn new(u_lin: DVector<f64>, a: DVector<f64>, b: f64, lo: DVector<f64>, hi: DVector<f64>) -> Self {
        let m = u_lin.len();
        let r_s = DMatrix::identity(m, m);
        Self { rho: default_rho(&r_s), u_lin, r_s, linear: DVector::zeros(m), a, b, lo, hi }
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    fn validate(&self) -> Result<()> {
        let m = self.u_lin.len();
        for len in [self.a.len(), self.lo.len(), self.hi.len(), self.linear.len(), self.r_s.nrows(), self.r_s.ncols()] {
            if len != m {
                return Err(Error::DimensionMismatch { expected: m, got: len });
            }
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::InvalidHyperparameter { name: "rho", value: self.rho });
        }
        if self.lo.iter().zip(self.hi.iter()).any(|(l, h)| !(l <= h)) {
            return Err(Error::InvalidArgument("input box needs lo <= hi".into()));
        }
        if self.r_s.clone().cholesky().is_none() {
            return Err(Error::InvalidArgument("R_s must be positive definite".into()));
        }
        let finite = self.u_lin.iter().chain(self.a.iter()).chain(self.linear.iter()).all(|v| v.is_finite());
        if !finite || !self.b.is_finite() {
            return Err(Error::NonFinite("QP data"));
        }
        Ok(())
    }

    pub fn constraint(&self, u: &DVector<f64>) -> f64 {
        self.a.dot(u) + self.b
    }

    /// True objective with the slack eliminated: `q(u) + ρ·max(0, aᵀu + b)`.
    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        let d = u - &self.u_lin;
        d.dot(&(&self.r_s * &d)) + self.linear.dot(u) + self.rho * self.constraint(u).max(0.0)
    }

    /// Gradient of the smooth part `q`.
    fn grad_q(&self, u: &DVector<f64>) -> DVector<f64> {
        (&self.r_s * (u - &self.u_lin)) * 2.0 + &self.linear
    }
}

/// `10³·λ_max(R_s)`.
pub fn default_rho(r_s: &DMatrix<f64>) -> f64 {
    1e3 * r_s.clone().symmetric_eigenvalues().max()
}

/// Assembles the filter QP at `x`: `a = Bᵀ∇V(x)`, `b` is the robust margin
/// term of the predicate and `u_lin` is the nominal input.
pub fn build_qp(
    pred: &PcisPredicate<'_>,
    x: &[f64],
    u_lin: &[f64],
    r_s: Option<&DMatrix<f64>>,
    rho: Option<f64>,
    explore: Option<&Exploration>,
) -> Result<QpProblem> {
    let n = pred.model.state_dim();
    let m = pred.model.input_dim();
    if x.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x.len() });
    }
    if u_lin.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: u_lin.len() });
    }
    let p = pred.residual.predict(x);
    let xv = DVector::from_column_slice(x);
    let (a, b) = pred.affine_terms(&xv, &p.mean, &p.std);
    let r_s = r_s.cloned().unwrap_or_else(|| DMatrix::identity(m, m));
    let rho = rho.unwrap_or_else(|| default_rho(&r_s));
    let mut linear = DVector::zeros(m);
    if let Some(e) = explore.filter(|e| e.alpha > 0.0) {
        let jac = sigma_jacobian(pred.residual, x);
        let w = if e.weights.is_empty() {
            let j = p.std.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(j, _)| j);
            DVector::from_fn(p.std.len(), |i, _| if i == j { 1.0 } else { 0.0 })
        } else {
            DVector::from_column_slice(&e.weights)
        };
        linear = -(pred.model.b.transpose() * jac.transpose() * w) * (e.alpha * e.dt);
    }
    Ok(QpProblem {
        u_lin: DVector::from_column_slice(u_lin),
        r_s,
        rho,
        linear,
        a,
        b,
        lo: DVector::from_column_slice(&pred.u_box.lo),
        hi: DVector::from_column_slice(&pred.u_box.hi),
    })
}

fn sigma_jacobian(res: &dyn ResidualModel, x: &[f64]) -> DMatrix<f64> {
    let q = res.output_dim();
    let mut jac = DMatrix::zeros(q, x.len());
    for j in 0..x.len() {
        let h = 1e-5 * (1.0 + x[j].abs());
        let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
        xp[j] += h;
        xm[j] -= h;
        let (sp, sm) = (res.predict(&xp).std, res.predict(&xm).std);
        for i in 0..q {
            jac[(i, j)] = (sp[i] - sm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Minimizes the quadratic over the free coordinates with the others pinned,
/// optionally on the hyperplane `aᵀu + b = 0`. Returns `None` when singular.
fn solve_face(p: &QpProblem, tags: &[Bound], extra: &DVector<f64>, on_plane: bool) -> Option<DVector<f64>> {
    let m = p.u_lin.len();
    let mut u = DVector::zeros(m);
    let mut free = Vec::new();
    for (i, t) in tags.iter().enumerate() {
        match t {
            Bound::Lower => u[i] = p.lo[i],
            Bound::Upper => u[i] = p.hi[i],
            Bound::Free => free.push(i),
        }
    }
    let h = &p.r_s * 2.0;
    let g = -(&h * &p.u_lin) + &p.linear + extra;
    let k = free.len();
    let plane = on_plane && free.iter().any(|&i| p.a[i] != 0.0);
    if on_plane && !plane {
        // Nothing to move: the pinned point is on the plane or it is not.
        return (p.constraint(&u).abs() <= 1e-12 * (1.0 + p.b.abs())).then_some(u);
    }
    if k == 0 {
        return Some(u);
    }
    let dim = k + usize::from(plane);
    let mut kkt = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    for (r, &i) in free.iter().enumerate() {
        let mut fixed = g[i];
        for j in 0..m {
            if tags[j] != Bound::Free {
                fixed += h[(i, j)] * u[j];
            }
        }
        rhs[r] = -fixed;
        for (c, &j) in free.iter().enumerate() {
            kkt[(r, c)] = h[(i, j)];
        }
        if plane {
            kkt[(r, k)] = p.a[i];
            kkt[(k, r)] = p.a[i];
        }
    }
    if plane {
        rhs[k] = -p.b - (0..m).filter(|&j| tags[j] != Bound::Free).map(|j| p.a[j] * u[j]).sum::<f64>();
    }
    let sol = kkt.lu().solve(&rhs)?;
    for (r, &i) in free.iter().enumerate() {
        u[i] = sol[r];
    }
    Some(u)
}

fn lexicographic_lt(a: &DVector<f64>, b: &DVector<f64>) -> bool {
    for (x, y) in a.iter().zip(b.iter()) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

/// Global minimizer by enumerating the `3^m` box faces against the three
/// constraint modes and keeping the best feasible candidate.
pub fn solve_qp(p: &QpProblem) -> Result<QpSolution> {
    p.validate()?;
    let m = p.u_lin.len();
    let tol = 1e-10 * (1.0 + p.b.abs() + p.a.amax() * (p.lo.amax() + p.hi.amax()));
    let mut best: Option<(f64, DVector<f64>, Vec<Bound>, ConstraintMode)> = None;
    let zero = DVector::zeros(m);
    let slack_grad = &p.a * p.rho;
    for code in 0..3usize.pow(m as u32) {
        let mut c = code;
        let tags: Vec<Bound> = (0..m)
            .map(|_| {
                let t = [Bound::Free, Bound::Lower, Bound::Upper][c % 3];
                c /= 3;
                t
            })
            .collect();
        for mode in [ConstraintMode::Inactive, ConstraintMode::Tight, ConstraintMode::Slack] {
            let cand = match mode {
                ConstraintMode::Inactive => solve_face(p, &tags, &zero, false),
                ConstraintMode::Tight => solve_face(p, &tags, &zero, true),
                ConstraintMode::Slack => solve_face(p, &tags, &slack_grad, false),
            };
            let Some(u) = cand else { continue };
            let in_box = (0..m).all(|i| u[i] >= p.lo[i] - 1e-12 && u[i] <= p.hi[i] + 1e-12);
            let g = p.constraint(&u);
            let consistent = match mode {
                ConstraintMode::Inactive => g <= tol,
                ConstraintMode::Tight => true,
                ConstraintMode::Slack => g >= -tol,
            };
            if !in_box || !consistent {
                continue;
            }
            let u = DVector::from_fn(m, |i, _| u[i].clamp(p.lo[i], p.hi[i]));
            let obj = p.objective(&u);
            let better = match &best {
                None => true,
                Some((bo, bu, _, _)) => {
                    obj < bo - 1e-12 * (1.0 + bo.abs()) || (obj <= bo + 1e-12 * (1.0 + bo.abs()) && lexicographic_lt(&u, bu))
                }
            };
            if better {
                best = Some((obj, u, tags.clone(), mode));
            }
        }
    }
    let (objective, u, _, _) = best.ok_or_else(|| Error::InvalidArgument("no feasible QP candidate".into()))?;
    let bounds = (0..m)
        .map(|i| {
            if p.lo[i] == p.hi[i] || u[i] <= p.lo[i] {
                Bound::Lower
            } else if u[i] >= p.hi[i] {
                Bound::Upper
            } else {
                Bound::Free
            }
        })
        .collect::<Vec<_>>();
    let g = p.constraint(&u);
    let mode = if g > tol {
        ConstraintMode::Slack
    } else if g >= -tol {
        ConstraintMode::Tight
    } else {
        ConstraintMode::Inactive
    };
    let s = if mode == ConstraintMode::Slack { g } else { 0.0 };
    let kkt_residual = kkt_residual(p, &u, s, &bounds, mode);
    Ok(QpSolution { u, s, objective, bounds, mode, kkt_residual })
}

/// Largest violation of stationarity, primal and dual feasibility and
/// complementarity, with multipliers recovered from the active set.
fn kkt_residual(p: &QpProblem, u: &DVector<f64>, s: f64, bounds: &[Bound], mode: ConstraintMode) -> f64 {
    let gq = p.grad_q(u);
    let scale = 1.0 + gq.amax() + p.rho * p.a.amax();
    let stationarity = |nu: f64| -> f64 {
        let mut worst: f64 = 0.0;
        for (i, t) in bounds.iter().enumerate() {
            let r = gq[i] + nu * p.a[i];
            let v = match t {
                Bound::Free => r.abs(),
                Bound::Lower if p.lo[i] == p.hi[i] => 0.0,
                Bound::Lower => (-r).max(0.0),
                Bound::Upper => r.max(0.0),
            };
            worst = worst.max(v);
        }
        worst
    };
    let nu = match mode {
        ConstraintMode::Inactive => 0.0,
        ConstraintMode::Slack => p.rho,
        ConstraintMode::Tight => {
            // Convex piecewise-linear in ν, so a ternary search on [0, ρ] finds the best multiplier.
            let (mut lo, mut hi) = (0.0, p.rho);
            for _ in 0..200 {
                let m1 = lo + (hi - lo) / 3.0;
                let m2 = hi - (hi - lo) / 3.0;
                if stationarity(m1) <= stationarity(m2) {
                    hi = m2;
                } else {
                    lo = m1;
                }
            }
            0.5 * (lo + hi)
        }
    };
    let g = p.constraint(u);
    let primal = (g - s).max(0.0).max((-s).max(0.0));
    let comp = (nu * (g - s)).abs().max(((p.rho - nu) * s).abs());
    let box_viol = (0..u.len()).map(|i| (p.lo[i] - u[i]).max(u[i] - p.hi[i]).max(0.0)).fold(0.0, f64::max);
    (stationarity(nu) / scale).max(primal).max(comp / scale).max(box_viol)
}

/// Per-step record of the filter.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub b: f64,
    pub s: f64,
    pub mode: ConstraintMode,
    pub bounds: Vec<Bound>,
    /// `aᵀu* + b` at the applied input.
    pub margin: f64,
    pub kkt_residual: f64,
}

/// Builds and solves the filter QP at `x`.
pub fn safe_step(
    pred: &PcisPredicate<'_>,
    x: &[f64],
    u_lin: &[f64],
    r_s: Option<&DMatrix<f64>>,
    rho: Option<f64>,
    explore: Option<&Exploration>,
) -> Result<(Vec<f64>, StepDiagnostics)> {
    let qp = build_qp(pred, x, u_lin, r_s, rho, explore)?;
    let sol = solve_qp(&qp)?;
    let diag = StepDiagnostics {
        b: qp.b,
        s: sol.s,
        mode: sol.mode,
        bounds: sol.bounds.clone(),
        margin: qp.constraint(&sol.u),
        kkt_residual: sol.kkt_residual,
    };
    Ok((sol.u.iter().copied().collect(), diag))
}
