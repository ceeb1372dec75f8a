//! Probabilistic control-invariant sets: the pointwise robust CLF-decrease
//! predicate, grid certification and ellipsoid sizing.
//!
//! All states and inputs here are in model coordinates, i.e. shifted by the
//! linearization's operating point.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::control::{Clf, LinearModel};
use crate::gp::{csv_err, ResidualModel};
use crate::kernels::Points;
use crate::{Error, Result};

const MAX_GRID_NODES: usize = 10_000_000;
const MIN_RESOLUTION: usize = 20;

/// Axis-aligned box `lo ≤ x ≤ hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxSet {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch { expected: lo.len(), got: hi.len() });
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::InvalidArgument("box needs finite lo <= hi".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    /// Box shrunk by `margin` on every face.
    pub fn shrink(&self, margin: &[f64]) -> Result<Self> {
        let lo = self.lo.iter().zip(margin).map(|(l, m)| l + m).collect();
        let hi = self.hi.iter().zip(margin).map(|(h, m)| h - m).collect();
        Self::new(lo, hi)
    }

    pub fn shift(&self, offset: &[f64]) -> Self {
        Self {
            lo: self.lo.iter().zip(offset).map(|(l, o)| l + o).collect(),
            hi: self.hi.iter().zip(offset).map(|(h, o)| h + o).collect(),
        }
    }

    /// Signed distance to the nearest face; negative outside.
    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (l, h))| (v - l).min(h - v))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.lo.iter().zip(&self.hi)).map(|(v, (l, h))| v.clamp(*l, *h)).collect()
    }
}

/// Largest `α` with `{xᵀPx ≤ α} ⊂ X`: `min_i min(lo_i², hi_i²) / (P⁻¹)_ii`.
pub fn max_level_set(p: &DMatrix<f64>, x_box: &BoxSet) -> Result<f64> {
    if p.nrows() != x_box.dim() {
        return Err(Error::DimensionMismatch { expected: p.nrows(), got: x_box.dim() });
    }
    if !x_box.contains(&vec![0.0; x_box.dim()]) {
        return Err(Error::InvalidArgument("origin lies outside the state box".into()));
    }
    let pinv = p
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("P must be positive definite".into()))?
        .inverse();
    Ok((0..x_box.dim())
        .map(|i| x_box.lo[i].powi(2).min(x_box.hi[i].powi(2)) / pinv[(i, i)])
        .fold(f64::INFINITY, f64::min))
}

/// Outcome of the pointwise test.
#[derive(Debug, Clone, PartialEq)]
pub struct Membership {
    pub member: bool,
    /// Minimal left-hand side over the input box.
    pub margin: f64,
    /// Minimizing input; meaningful when `member`.
    pub witness: Vec<f64>,
}

/// The robust decrease test
///
/// `min_{u∈U} ∇V(x)ᵀ(Ax + Bu + μ(x)) + β Σ_i σ̃_i(x)|∇V_i(x)| + λ(V(x) − level) + ηΔt² ≤ 0`
///
/// with `σ̃ = √γ*·σ`. `level = 0` is the plain decrease condition; a positive
/// level only constrains the decrease near and outside `{V ≤ level}`.
pub struct PcisPredicate<'a> {
    pub model: &'a LinearModel,
    pub clf: &'a Clf,
    pub residual: &'a dyn ResidualModel,
    pub beta: f64,
    pub gamma: f64,
    pub eta_dt2: f64,
    pub level: f64,
    pub u_box: &'a BoxSet,
    pub x_box: &'a BoxSet,
}

impl PcisPredicate<'_> {
    /// Robust margin split as `aᵀu + b` for fixed `x`, given the residual prediction.
    pub fn affine_terms(&self, x: &DVector<f64>, mean: &[f64], std: &[f64]) -> (DVector<f64>, f64) {
        let grad = self.clf.gradient(x);
        let a = self.model.b.tr_mul(&grad);
        let drift = &self.model.a * x + DVector::from_column_slice(mean);
        let scale = self.beta * self.gamma.sqrt();
        let envelope: f64 = grad.iter().zip(std).map(|(g, s)| scale * s * g.abs()).sum();
        let b = grad.dot(&drift) + envelope + self.clf.rate() * (self.clf.value(x) - self.level) + self.eta_dt2;
        (a, b)
    }

    /// Minimizes `aᵀu + b` over the input box: each coordinate sits at the
    /// bound opposite the sign of `a_i`, or at the box point nearest zero if `a_i = 0`.
    fn minimize(&self, a: &DVector<f64>, b: f64) -> (f64, Vec<f64>) {
        let u: Vec<f64> = (0..a.len())
            .map(|i| {
                if a[i] > 0.0 {
                    self.u_box.lo[i]
                } else if a[i] < 0.0 {
                    self.u_box.hi[i]
                } else {
                    0.0f64.clamp(self.u_box.lo[i], self.u_box.hi[i])
                }
            })
            .collect();
        let val = b + a.iter().zip(&u).map(|(ai, ui)| ai * ui).sum::<f64>();
        (val, u)
    }

    fn decide(&self, x: &[f64], mean: &[f64], std: &[f64]) -> Membership {
        if !self.x_box.contains(x) || self.u_box.lo.iter().zip(&self.u_box.hi).any(|(l, h)| l > h) {
            return Membership { member: false, margin: f64::INFINITY, witness: vec![] };
        }
        let xv = DVector::from_column_slice(x);
        let (a, b) = self.affine_terms(&xv, mean, std);
        let (margin, witness) = self.minimize(&a, b);
        Membership { member: margin <= 0.0, margin, witness }
    }

    pub fn is_member(&self, x: &[f64]) -> Membership {
        let p = self.residual.predict(x);
        self.decide(x, &p.mean, &p.std)
    }

    /// Evaluates the predicate on every node of `grid`.
    pub fn certify_grid(&self, grid: &GridSpec) -> Result<CertifiedSet> {
        let nodes = grid.nodes()?;
        let pred = self.residual.predict_batch(&nodes);
        let q = pred.mean.ncols();
        let mut members = Vec::with_capacity(nodes.len());
        let mut margins = Vec::with_capacity(nodes.len());
        let mut mean = vec![0.0; q];
        let mut std = vec![0.0; q];
        for i in 0..nodes.len() {
            for j in 0..q {
                mean[j] = pred.mean[(i, j)];
                std[j] = pred.std[(i, j)];
            }
            let m = self.decide(nodes.row(i), &mean, &std);
            members.push(m.member);
            margins.push(m.margin);
        }
        let alpha_m = max_level_set(&self.clf.p, self.x_box)?;
        let origin = vec![0.0; grid.dim()];
        let p0 = self.residual.predict(&origin);
        let m0 = self.decide(&origin, &p0.mean, &p0.std).margin;
        Ok(CertifiedSet::new(grid.clone(), members, margins, alpha_m).with_origin_margin(m0))
    }
}

/// Post-hoc check of the discrete decrease `V(x⁺) ≤ (1 − λΔt)V(x)` for an
/// Euler step with the residual anywhere in `mean ± band`. Returns the worst
/// `V(x⁺) − (1 − λΔt)V(x)`; non-positive means the step decreases `V` enough.
pub fn discrete_decrease_margin(
    model: &LinearModel,
    clf: &Clf,
    dt: f64,
    x: &[f64],
    u: &[f64],
    mean: &[f64],
    band: &[f64],
) -> f64 {
    let n = x.len();
    let xv = DVector::from_column_slice(x);
    let drift = &model.a * &xv + &model.b * DVector::from_column_slice(u) + DVector::from_column_slice(mean);
    let mut worst = f64::NEG_INFINITY;
    // V is convex, so the worst residual sits at a corner of the band.
    for corner in 0..(1usize << n) {
        let e = DVector::from_fn(n, |i, _| if corner >> i & 1 == 1 { band[i] } else { -band[i] });
        let next = &xv + (&drift + e) * dt;
        worst = worst.max(clf.value(&next));
    }
    worst - (1.0 - clf.rate() * dt) * clf.value(&xv)
}

/// Tensor grid with `n[i]` equispaced nodes on `[lo[i], hi[i]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub n: Vec<usize>,
}

impl GridSpec {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, n: Vec<usize>) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != n.len() {
            return Err(Error::DimensionMismatch { expected: lo.len(), got: n.len() });
        }
        if n.iter().any(|k| *k < MIN_RESOLUTION) {
            return Err(Error::InvalidArgument(format!("grid needs at least {MIN_RESOLUTION} nodes per axis")));
        }
        let g = Self { lo, hi, n };
        let total = g.len();
        if total > MAX_GRID_NODES {
            return Err(Error::GridTooLarge { nodes: total, limit: MAX_GRID_NODES });
        }
        Ok(g)
    }

    pub fn over(b: &BoxSet, n: usize) -> Result<Self> {
        Self::new(b.lo.clone(), b.hi.clone(), vec![n; b.dim()])
    }

    pub fn dim(&self) -> usize {
        self.n.len()
    }

    pub fn len(&self) -> usize {
        self.n.iter().fold(1usize, |acc, k| acc.saturating_mul(*k))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coordinates of node `idx`; the first axis varies fastest.
    pub fn node(&self, mut idx: usize) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dim());
        for d in 0..self.dim() {
            let k = idx % self.n[d];
            idx /= self.n[d];
            let t = if self.n[d] > 1 { k as f64 / (self.n[d] - 1) as f64 } else { 0.5 };
            x.push(self.lo[d] + t * (self.hi[d] - self.lo[d]));
        }
        x
    }

    pub fn nodes(&self) -> Result<Points> {
        let total = self.len();
        if total > MAX_GRID_NODES {
            return Err(Error::GridTooLarge { nodes: total, limit: MAX_GRID_NODES });
        }
        let mut p = Points::new(self.dim());
        for i in 0..total {
            p.push(&self.node(i));
        }
        Ok(p)
    }
}

/// Grid nodes that passed the predicate.
#[derive(Debug, Clone, PartialEq)]
pub struct CertifiedSet {
    pub grid: GridSpec,
    members: Vec<bool>,
    margins: Vec<f64>,
    pub alpha_m: f64,
    /// Level-0 margin at the origin, which need not be a grid node.
    pub origin_margin: f64,
    count: usize,
}

impl CertifiedSet {
    pub fn new(grid: GridSpec, members: Vec<bool>, margins: Vec<f64>, alpha_m: f64) -> Self {
        let count = members.iter().filter(|m| **m).count();
        Self { grid, members, margins, alpha_m, origin_margin: f64::NEG_INFINITY, count }
    }

    pub fn with_origin_margin(mut self, margin: f64) -> Self {
        self.origin_margin = margin;
        self
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn members(&self) -> &[bool] {
        &self.members
    }

    pub fn margins(&self) -> &[f64] {
        &self.margins
    }

    pub fn member_nodes(&self) -> impl Iterator<Item = (usize, Vec<f64>)> + '_ {
        self.members.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| (i, self.grid.node(i)))
    }

    /// Per-axis `[min, max]` over member nodes, or `None` if empty.
    pub fn axis_ranges(&self) -> Option<Vec<(f64, f64)>> {
        let d = self.grid.dim();
        let mut out = vec![(f64::INFINITY, f64::NEG_INFINITY); d];
        let mut any = false;
        for (_, x) in self.member_nodes() {
            any = true;
            for (r, v) in out.iter_mut().zip(&x) {
                r.0 = r.0.min(*v);
                r.1 = r.1.max(*v);
            }
        }
        any.then_some(out)
    }

    /// Level `α_c` of the sublevel set used by the filter: the largest
    /// `shrink·V(x_k)` over nodes `x_k` with `V(x_k) ≤ α_m` such that every
    /// node in `{V ≤ V(x_k)}`, and the origin, has level-0 margin at most `λ·α_c`.
    /// Every checked node inside `{V ≤ α_c}` then passes the test at level `α_c`,
    /// and the band between `α_c` and `V(x_k)` is checked too.
    pub fn invariant_level(&self, clf: &Clf, shrink: f64) -> f64 {
        let lam = clf.rate();
        let mut nodes: Vec<(f64, f64)> = (0..self.members.len())
            .map(|i| (clf.value(&DVector::from_vec(self.grid.node(i))), self.margins[i]))
            .collect();
        nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut worst = self.origin_margin;
        let mut best: f64 = 0.0;
        for &(v, m) in &nodes {
            if v > self.alpha_m || !m.is_finite() {
                break;
            }
            worst = worst.max(m);
            if worst <= lam * shrink * v {
                best = shrink * v;
            }
        }
        best
    }

    /// Writes `x1..xd,member` rows, translated by `offset` into plant coordinates.
    pub fn write_csv<W: Write>(&self, w: W, offset: &[f64]) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.grid.dim()).map(|i| format!("x{i}")).collect();
        header.push("member".into());
        out.write_record(&header).map_err(csv_err)?;
        for (i, m) in self.members.iter().enumerate() {
            let mut row: Vec<String> =
                self.grid.node(i).iter().zip(offset).map(|(v, o)| format!("{}", v + o)).collect();
            row.push(if *m { "1".into() } else { "0".into() });
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}
