//! Dense kernels that lean on `gemm` so large Gram factorizations stay fast on
//! a single core. Only the lower triangle of factors is ever referenced.

use nalgebra::{DMatrix, DVector};

const BLOCK: usize = 96;

/// In-place lower Cholesky factorization `A = L Lᵀ`.
///
/// On success the lower triangle of `a` holds `L` and the strict upper
/// triangle is zeroed. On failure returns the index of the first non-positive
/// pivot; `a` is left in an unspecified state.
pub fn cholesky_in_place(a: &mut DMatrix<f64>) -> Result<(), usize> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let mut k = 0;
    while k < n {
        let b = BLOCK.min(n - k);
        factor_diagonal_block(a, k, b)?;
        let rest = n - k - b;
        if rest > 0 {
            // Panel: A21 <- A21 L11^{-T}, row by row against the small factor.
            let l11 = a.view((k, k), (b, b)).clone_owned();
            let mut panel = a.view((k + b, k), (rest, b)).clone_owned();
            for i in 0..rest {
                for j in 0..b {
                    let mut s = panel[(i, j)];
                    for p in 0..j {
                        s -= panel[(i, p)] * l11[(j, p)];
                    }
                    panel[(i, j)] = s / l11[(j, j)];
                }
            }
            a.view_mut((k + b, k), (rest, b)).copy_from(&panel);
            // Trailing update of the lower trapezoid, one block column at a time.
            let mut j = 0;
            while j < rest {
                let w = BLOCK.min(rest - j);
                let left = panel.rows(j, rest - j);
                let right = panel.rows(j, w);
                a.view_mut((k + b + j, k + b + j), (rest - j, w))
                    .gemm(-1.0, &left, &right.transpose(), 1.0);
                j += w;
            }
        }
        k += b;
    }
    for j in 1..n {
        for i in 0..j {
            a[(i, j)] = 0.0;
        }
    }
    Ok(())
}

fn factor_diagonal_block(a: &mut DMatrix<f64>, k: usize, b: usize) -> Result<(), usize> {
    for j in k..k + b {
        let mut d = a[(j, j)];
        for p in k..j {
            d -= a[(j, p)] * a[(j, p)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(j);
        }
        let d = d.sqrt();
        a[(j, j)] = d;
        for i in j + 1..k + b {
            let mut s = a[(i, j)];
            for p in k..j {
                s -= a[(i, p)] * a[(j, p)];
            }
            a[(i, j)] = s / d;
        }
    }
    Ok(())
}

/// Solves `L X = B` for lower-triangular `L`, overwriting `b` with `X`.
pub fn solve_lower_in_place(l: &DMatrix<f64>, b: &mut DMatrix<f64>) {
    let n = l.nrows();
    debug_assert_eq!(n, b.nrows());
    let m = b.ncols();
    let mut i = 0;
    while i < n {
        let bs = BLOCK.min(n - i);
        if i > 0 {
            let update = l.view((i, 0), (bs, i)) * b.rows(0, i);
            let mut rows = b.rows_mut(i, bs);
            rows -= update;
        }
        for c in 0..m {
            for r in i..i + bs {
                let mut s = b[(r, c)];
                for p in i..r {
                    s -= l[(r, p)] * b[(p, c)];
                }
                b[(r, c)] = s / l[(r, r)];
            }
        }
        i += bs;
    }
}

/// Solves `L x = b` for a single right-hand side.
pub fn solve_lower_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = b.clone();
    let n = l.nrows();
    for j in 0..n {
        let xj = x[j] / l[(j, j)];
        x[j] = xj;
        if xj != 0.0 {
            let col = l.column(j);
            for i in j + 1..n {
                x[i] -= col[i] * xj;
            }
        }
    }
    x
}

/// Solves `Lᵀ x = b` given the lower factor `L`.
pub fn solve_lower_transpose_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = b.clone();
    let n = l.nrows();
    for j in (0..n).rev() {
        let col = l.column(j);
        let mut s = x[j];
        for i in j + 1..n {
            s -= col[i] * x[i];
        }
        x[j] = s / l[(j, j)];
    }
    x
}

/// Sum of squares of `L⁻¹ b` without materializing anything but the solve.
pub fn lower_solve_norm_sq(l: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
    solve_lower_vec(l, b).norm_squared()
}

/// Extends a lower Cholesky factor of `K` to one of `[[K, C], [Cᵀ, D]]`, given
/// the new off-diagonal block `c` (n × k) and new diagonal block `d` (k × k).
pub fn cholesky_append(
    l: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
) -> Result<DMatrix<f64>, usize> {
    let n = l.nrows();
    let k = d.nrows();
    let mut l21t = c.clone();
    solve_lower_in_place(l, &mut l21t);
    let mut schur = d.clone();
    schur.gemm(-1.0, &l21t.transpose(), &l21t, 1.0);
    cholesky_in_place(&mut schur).map_err(|p| n + p)?;
    let mut out = DMatrix::zeros(n + k, n + k);
    out.view_mut((0, 0), (n, n)).copy_from(l);
    out.view_mut((n, 0), (k, n)).copy_from(&l21t.transpose());
    out.view_mut((n, n), (k, k)).copy_from(&schur);
    Ok(out)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_symmetric_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> DMatrix<f64> {
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin() * 2.0).collect();
        DMatrix::from_fn(n, n, |i, j| {
            (-(x[i] - x[j]).powi(2)).exp() + if i == j { 0.1 } else { 0.0 }
        })
    }

    #[test]
    fn blocked_cholesky_reconstructs() {
        for &n in &[1usize, 5, 97, 250] {
            let a = spd(n);
            let mut l = a.clone();
            cholesky_in_place(&mut l).unwrap();
            let err = (&l * l.transpose() - &a).abs().max();
            assert!(err < 1e-10, "n={n} err={err}");
            let reference = a.clone().cholesky().unwrap().l();
            assert!((&l - reference).abs().max() < 1e-10);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(cholesky_in_place(&mut a), Err(1));
    }

    #[test]
    fn triangular_solves_agree_with_nalgebra() {
        let a = spd(200);
        let mut l = a.clone();
        cholesky_in_place(&mut l).unwrap();
        let b = DMatrix::from_fn(200, 7, |i, j| ((i * 7 + j) as f64).cos());
        let mut x = b.clone();
        solve_lower_in_place(&l, &mut x);
        let reference = l.solve_lower_triangular(&b).unwrap();
        assert!((&x - reference).abs().max() < 1e-9);

        let v = b.column(0).into_owned();
        let y = solve_lower_vec(&l, &v);
        assert!((&l * &y - &v).abs().max() < 1e-10);
        let z = solve_lower_transpose_vec(&l, &v);
        assert!((l.transpose() * &z - &v).abs().max() < 1e-10);
    }

    #[test]
    fn append_matches_full_factorization() {
        let a = spd(150);
        let mut l = a.view((0, 0), (110, 110)).clone_owned();
        cholesky_in_place(&mut l).unwrap();
        let c = a.view((0, 110), (110, 40)).clone_owned();
        let d = a.view((110, 110), (40, 40)).clone_owned();
        let ext = cholesky_append(&l, &c, &d).unwrap();
        let mut full = a.clone();
        cholesky_in_place(&mut full).unwrap();
        assert!((ext - full).abs().max() < 1e-10);
    }
}
