//! Bounded Nelder–Mead used for hyperparameter search in log space.

/// Minimizes `f` inside the box `[lower, upper]` starting from `x0`.
///
/// Trial points are clamped into the box. Returns the best point and value.
pub fn nelder_mead<F>(
    mut f: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    step: f64,
    max_evals: usize,
    ftol: f64,
) -> (Vec<f64>, f64)
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let clamp = |x: &mut Vec<f64>| {
        for i in 0..n {
            x[i] = x[i].clamp(lower[i], upper[i]);
        }
    };
    let mut eval = |x: &[f64], count: &mut usize| {
        *count += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut evals = 0;
    let mut start = x0.to_vec();
    clamp(&mut start);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = eval(&start, &mut evals);
    simplex.push((start.clone(), v0));
    for i in 0..n {
        let mut p = start.clone();
        p[i] += step;
        if p[i] > upper[i] {
            p[i] = start[i] - step;
        }
        clamp(&mut p);
        let v = eval(&p, &mut evals);
        simplex.push((p, v));
    }
    if n == 0 {
        return simplex.swap_remove(0);
    }

    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if (worst - best).abs() <= ftol * (1.0 + best.abs()) {
            break;
        }
        let mut centroid = vec![0.0; n];
        for (p, _) in &simplex[..n] {
            for i in 0..n {
                centroid[i] += p[i] / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            (0..n)
                .map(|i| centroid[i] + t * (simplex[n].0[i] - centroid[i]))
                .collect()
        };
        let mut reflected = along(-1.0);
        clamp(&mut reflected);
        let fr = eval(&reflected, &mut evals);
        if fr < simplex[0].1 {
            let mut expanded = along(-2.0);
            clamp(&mut expanded);
            let fe = eval(&expanded, &mut evals);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            let t = if fr < simplex[n].1 { -0.5 } else { 0.5 };
            let mut contracted = along(t);
            clamp(&mut contracted);
            let fc = eval(&contracted, &mut evals);
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (contracted, fc);
            } else {
                let anchor = simplex[0].0.clone();
                for (p, v) in simplex.iter_mut().skip(1) {
                    for i in 0..n {
                        p[i] = anchor[i] + 0.5 * (p[i] - anchor[i]);
                    }
                    *v = eval(p, &mut evals);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}
