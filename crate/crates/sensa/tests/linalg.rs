//! Checks for the moment-matrix kernel: factorization, partial
//! correlations, residual moments, and weighted least squares.
//!
//! Partial correlations are validated against their defining recursion and
//! invariances rather than against frozen numbers, so the checks hold on
//! arbitrary well-conditioned inputs.

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sensa::linalg::{partial_corr, wls, wls_residuals, SymMatrix};
use sensa::Error;

fn labels(k: usize) -> Vec<&'static str> {
    ["a", "b", "c", "d", "e", "f", "g", "h"][..k].to_vec()
}

/// Random well-conditioned SPD matrix via a lower-triangular square root.
fn random_spd(dim: usize, seed: u64) -> SymMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut l = vec![vec![0.0; dim]; dim];
    for i in 0..dim {
        for j in 0..i {
            l[i][j] = rng.gen_range(-0.6..0.6);
        }
        l[i][i] = rng.gen_range(0.6..1.6);
    }
    let mut rows = vec![vec![0.0; dim]; dim];
    for i in 0..dim {
        for j in 0..dim {
            let mut s = 0.0;
            for k in 0..dim {
                s += l[i][k] * l[j][k];
            }
            rows[i][j] = s;
        }
    }
    SymMatrix::from_rows(&labels(dim), &rows).expect("constructed SPD matrix")
}

#[test]
fn from_rows_rejects_asymmetry_and_non_finite() {
    let bad = SymMatrix::from_rows(&labels(2), &[vec![1.0, 0.5], vec![0.3, 1.0]]);
    assert!(matches!(bad, Err(Error::Degenerate(_))));
    let nan = SymMatrix::from_rows(&labels(2), &[vec![1.0, f64::NAN], vec![f64::NAN, 1.0]]);
    assert!(nan.is_err());
}

#[test]
fn get_and_set_are_symmetric() {
    let mut m = SymMatrix::zeros(&labels(3));
    m.set(0, 2, 0.7);
    assert_eq!(m.get(2, 0), 0.7);
    m.set(2, 2, 2.0);
    assert_eq!(m.get(2, 2), 2.0);
}

#[test]
fn cholesky_reconstructs_the_matrix() {
    let m = random_spd(5, 11);
    let l = m.cholesky_lower().expect("SPD input");
    let rec = l.reconstruct();
    for i in 0..5 {
        for j in 0..5 {
            assert_abs_diff_eq!(rec[i][j], m.get(i, j), epsilon = 1e-12);
        }
    }
}

#[test]
fn cholesky_rejects_indefinite_matrices() {
    let m = SymMatrix::from_rows(&labels(2), &[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
    match m.cholesky_lower() {
        Err(Error::NotPositiveDefinite { pivot }) => assert_eq!(pivot, 1),
        other => panic!("expected a positive-definiteness error, got {other:?}"),
    }
    assert!(!m.is_pd());
    assert!(random_spd(4, 3).is_pd());
}

#[test]
fn eigenvalues_match_analytic_two_by_two() {
    let m = SymMatrix::from_rows(&labels(2), &[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
    let eig = m.eigenvalues();
    assert_abs_diff_eq!(eig[0], 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(eig[1], 3.0, epsilon = 1e-12);
}

#[test]
fn to_correlation_produces_unit_diagonal() {
    let m = random_spd(4, 7);
    let (corr, sds) = m.to_correlation().unwrap();
    for i in 0..4 {
        assert_abs_diff_eq!(corr.get(i, i), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(sds[i], m.get(i, i).sqrt(), epsilon = 1e-14);
        for j in 0..i {
            assert_abs_diff_eq!(
                corr.get(i, j) * sds[i] * sds[j],
                m.get(i, j),
                epsilon = 1e-12
            );
        }
    }
}

#[test]
fn restrict_preserves_entries_and_order() {
    let m = random_spd(5, 19);
    let r = m.restrict(&[3, 0, 4]);
    assert_eq!(r.dim(), 3);
    assert_eq!(r.labels(), ["d".to_string(), "a".into(), "e".into()]);
    assert_eq!(r.get(0, 1), m.get(3, 0));
    assert_eq!(r.get(2, 2), m.get(4, 4));
}

#[test]
fn partial_corr_rejects_overlapping_indices() {
    let m = random_spd(4, 23);
    assert!(partial_corr(&m, 1, 1, &[]).is_err());
    assert!(partial_corr(&m, 0, 1, &[1]).is_err());
}

/// Zero partial correlation is recovered exactly for a block-diagonal
/// matrix, and perfect correlation for a duplicated variable is rejected as
/// degenerate rather than reported as 1.
#[test]
fn partial_corr_degenerate_and_independent_cases() {
    let m = SymMatrix::from_rows(
        &labels(3),
        &[
            vec![1.0, 0.0, 0.4],
            vec![0.0, 1.0, 0.0],
            vec![0.4, 0.0, 1.0],
        ],
    )
    .unwrap();
    assert_abs_diff_eq!(partial_corr(&m, 0, 1, &[2]).unwrap(), 0.0, epsilon = 1e-14);

    // c duplicates a: conditioning on it leaves no residual variance in a.
    let dup = SymMatrix::from_rows(
        &labels(3),
        &[
            vec![1.0, 0.3, 1.0],
            vec![0.3, 1.0, 0.3],
            vec![1.0, 0.3, 1.0],
        ],
    )
    .unwrap();
    assert!(partial_corr(&dup, 0, 1, &[2]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Symmetry in the two lead variables and invariance to the order of
    /// the conditioning set.
    #[test]
    fn partial_corr_symmetry_and_conditioning_order(seed in 0u64..1000) {
        let m = random_spd(5, seed);
        let a = partial_corr(&m, 0, 3, &[1, 2, 4]).unwrap();
        let b = partial_corr(&m, 3, 0, &[1, 2, 4]).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        let c = partial_corr(&m, 0, 3, &[4, 2, 1]).unwrap();
        prop_assert!((a - c).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&a));
    }

    /// Rescaling any variable by a positive factor leaves every partial
    /// correlation unchanged.
    #[test]
    fn partial_corr_scale_invariance(seed in 0u64..1000, scale in 0.1f64..10.0) {
        let m = random_spd(4, seed);
        let mut scaled = m.clone();
        for j in 0..4 {
            let factor = if j == 1 { scale } else { 1.0 };
            for i in 0..4 {
                let f = factor * if i == 1 { scale } else { 1.0 };
                scaled.set(i, j, m.get(i, j) * f);
            }
        }
        let a = partial_corr(&m, 0, 1, &[2, 3]).unwrap();
        let b = partial_corr(&scaled, 0, 1, &[2, 3]).unwrap();
        prop_assert!((a - b).abs() < 1e-10);
    }

    /// The one-step recursion that defines partial correlations:
    /// conditioning on one more variable combines three lower-order ones.
    #[test]
    fn partial_corr_recursion(seed in 0u64..1000) {
        let m = random_spd(4, seed);
        let base: &[usize] = &[2];
        let ij = partial_corr(&m, 0, 1, base).unwrap();
        let ik = partial_corr(&m, 0, 3, base).unwrap();
        let jk = partial_corr(&m, 1, 3, base).unwrap();
        let expected = (ij - ik * jk) / ((1.0 - ik * ik) * (1.0 - jk * jk)).sqrt();
        let direct = partial_corr(&m, 0, 1, &[2, 3]).unwrap();
        prop_assert!((direct - expected).abs() < 1e-10,
            "recursion mismatch: direct {direct}, recursed {expected}");
    }
}

#[test]
fn wls_solves_a_known_system_exactly() {
    // y = 2 + 3 x with no noise; intercept plus slope recovered exactly.
    let x: Vec<f64> = (0..8).map(|i| i as f64).collect();
    let y: Vec<f64> = x.iter().map(|v| 2.0 + 3.0 * v).collect();
    let ones = vec![1.0; 8];
    let w = vec![1.0; 8];
    let fit = wls(&[("intercept", &ones), ("x", &x)], &y, &w, 0).unwrap();
    assert_abs_diff_eq!(fit.coef[0], 2.0, epsilon = 1e-12);
    assert_abs_diff_eq!(fit.coef[1], 3.0, epsilon = 1e-12);
    assert_abs_diff_eq!(fit.residual_variance, 0.0, epsilon = 1e-12);
    assert_eq!(fit.dof, 6);
}

#[test]
fn doubling_a_weight_equals_duplicating_the_row() {
    let x = vec![0.0, 1.0, 2.0, 3.0, 4.0];
    let y = vec![0.3, 1.1, 1.8, 3.4, 3.9];
    let ones = vec![1.0; 5];
    let mut w = vec![1.0; 5];
    w[2] = 2.0;
    let weighted = wls(&[("intercept", &ones), ("x", &x)], &y, &w, 0).unwrap();

    let x2 = vec![0.0, 1.0, 2.0, 2.0, 3.0, 4.0];
    let y2 = vec![0.3, 1.1, 1.8, 1.8, 3.4, 3.9];
    let ones2 = vec![1.0; 6];
    let w2 = vec![1.0; 6];
    let duplicated = wls(&[("intercept", &ones2), ("x", &x2)], &y2, &w2, 0).unwrap();

    assert_abs_diff_eq!(weighted.coef[0], duplicated.coef[0], epsilon = 1e-12);
    assert_abs_diff_eq!(weighted.coef[1], duplicated.coef[1], epsilon = 1e-12);
}

#[test]
fn wls_names_the_collinear_column() {
    let x = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let x_copy = x.clone();
    let y = vec![1.0, 2.0, 2.5, 4.0, 5.5, 6.0];
    let ones = vec![1.0; 6];
    let w = vec![1.0; 6];
    match wls(
        &[("intercept", &ones), ("x", &x), ("x_copy", &x_copy)],
        &y,
        &w,
        0,
    ) {
        Err(Error::Collinear(msg)) => assert!(msg.contains("x_copy"), "got message: {msg}"),
        other => panic!("expected a collinearity error, got {other:?}"),
    }
}

#[test]
fn wls_rejects_negative_weights_and_short_samples() {
    let x = vec![1.0, 2.0, 3.0];
    let y = vec![1.0, 2.0, 3.0];
    let w_bad = vec![1.0, -1.0, 1.0];
    assert!(wls(&[("x", &x)], &y, &w_bad, 0).is_err());
    // Three rows cannot support two coefficients plus two prior columns.
    let ones = vec![1.0; 3];
    let w = vec![1.0; 3];
    assert!(wls(&[("intercept", &ones), ("x", &x)], &y, &w, 2).is_err());
}

#[test]
fn residuals_are_weight_orthogonal_to_the_design() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 40;
    let x1: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x2: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| 0.5 * x1[i] - 0.2 * x2[i] + rng.gen_range(-0.3..0.3))
        .collect();
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..2.0)).collect();
    let ones = vec![1.0; n];
    let design: Vec<(&str, &[f64])> = vec![("intercept", &ones), ("x1", &x1), ("x2", &x2)];
    let resid = wls_residuals(&design, &y, &w).unwrap();
    for (_, col) in &design {
        let dot: f64 = resid
            .iter()
            .zip(col.iter())
            .zip(&w)
            .map(|((r, c), wi)| wi * r * c)
            .sum();
        assert_abs_diff_eq!(dot, 0.0, epsilon = 1e-9);
    }
}

/// The moment-level regression and residual helpers must agree with data
/// computed the long way: residualize columns, take weighted moments.
#[test]
fn moment_identities_match_explicit_residualization() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 600;
    let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..n)
        .map(|i| 0.6 * a[i] + rng.gen_range(-1.0..1.0))
        .collect();
    let c: Vec<f64> = (0..n)
        .map(|i| -0.3 * a[i] + 0.4 * b[i] + rng.gen_range(-1.0..1.0))
        .collect();
    let w = vec![1.0; n];

    let moment = |p: &[f64], q: &[f64]| -> f64 {
        p.iter().zip(q).map(|(x, y)| x * y).sum::<f64>() / n as f64
    };
    let cols = [("a", &a), ("b", &b), ("c", &c)];
    let mut rows = vec![vec![0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            rows[i][j] = moment(cols[i].1, cols[j].1);
        }
    }
    let m = SymMatrix::from_rows(&["a", "b", "c"], &rows).unwrap();

    // Partial correlation from the matrix vs. correlation of explicit
    // residuals (no intercept: columns are used as-is in moment space).
    let design: Vec<(&str, &[f64])> = vec![("a", &a)];
    let rb = wls_residuals(&design, &b, &w).unwrap();
    let rc = wls_residuals(&design, &c, &w).unwrap();
    let explicit = moment(&rb, &rc) / (moment(&rb, &rb) * moment(&rc, &rc)).sqrt();
    let from_matrix = partial_corr(&m, 1, 2, &[0]).unwrap();
    assert_abs_diff_eq!(from_matrix, explicit, epsilon = 1e-10);
}
