//! Derivative-free minimization and low-discrepancy start points.
//!
//! The robustness-value search minimizes a penalized objective over at most
//! three correlation parameters. The surfaces are smooth but multimodal and
//! cheap to evaluate, so a Nelder-Mead simplex restarted from a Halton set
//! is a better fit than a gradient method: no derivatives exist for the
//! penalty kinks, and many restarts cost little. Infinite objective values
//! are legal; the simplex treats them as strictly worse than any finite
//! value, which lets callers signal infeasible or numerically failed points
//! without unwinding.

/// Radical-inverse Halton sequence member `index` in the given prime base.
/// `index` starts at 1; index 0 would return 0 for every base.
pub(crate) fn halton(mut index: usize, base: usize) -> f64 {
    debug_assert!(base >= 2);
    let mut f = 1.0;
    let mut r = 0.0;
    let b = base as f64;
    while index > 0 {
        f /= b;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

/// Nelder-Mead tuning knobs. Standard reflection/expansion/contraction
/// coefficients; only the stopping rule is configurable.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SimplexOptions {
    /// Maximum number of iterations (one reflection cycle each).
    pub max_iters: usize,
    /// Stop when the objective spread across the simplex drops below this.
    pub f_tol: f64,
    /// Initial simplex edge length along each coordinate.
    pub scale: f64,
}

fn total_cmp_f(a: f64, b: f64) -> std::cmp::Ordering {
    a.partial_cmp(&b).unwrap_or_else(|| {
        if a.is_nan() && b.is_nan() {
            std::cmp::Ordering::Equal
        } else if a.is_nan() {
            std::cmp::Ordering::Greater
        } else {
            std::cmp::Ordering::Less
        }
    })
}

/// Minimizes `f` from `x0` with a Nelder-Mead simplex. Returns the best
/// point found and its objective value. Deterministic for a fixed input.
pub(crate) fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &SimplexOptions) -> (Vec<f64>, f64)
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    assert!(n >= 1, "nelder_mead needs at least one dimension");

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let fx0 = f(x0);
    simplex.push((x0.to_vec(), fx0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += opts.scale;
        let fx = f(&x);
        simplex.push((x, fx));
    }

    for _ in 0..opts.max_iters {
        simplex.sort_by(|a, b| total_cmp_f(a.1, b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if (worst - best).abs() <= opts.f_tol && worst.is_finite() {
            break;
        }

        let mut centroid = vec![0.0; n];
        for (x, _) in simplex.iter().take(n) {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / n as f64;
            }
        }

        let lerp = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let reflected = lerp(1.0);
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = lerp(2.0);
            let fe = f(&expanded);
            simplex[n] = if fe < fr {
                (expanded, fe)
            } else {
                (reflected, fr)
            };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
            continue;
        }
        let contracted = if fr < simplex[n].1 {
            lerp(0.5)
        } else {
            lerp(-0.5)
        };
        let fc = f(&contracted);
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (contracted, fc);
            continue;
        }
        // Shrink toward the best vertex.
        let best_x = simplex[0].0.clone();
        for (x, fx) in simplex.iter_mut().skip(1) {
            for (xi, bi) in x.iter_mut().zip(&best_x) {
                *xi = bi + 0.5 * (*xi - bi);
            }
            *fx = f(x);
        }
    }

    simplex.sort_by(|a, b| total_cmp_f(a.1, b.1));
    simplex.swap_remove(0).into()
}
