//! Small dense symmetric linear algebra.
//!
//! Everything downstream operates on tiny moment matrices (at most 8x8), so
//! the implementations here are direct textbook algorithms: unblocked
//! Cholesky, Schur-complement conditioning, cyclic Jacobi for eigenvalues,
//! and one-pass normal equations for weighted least squares. There is no
//! attempt at sparsity, blocking, or SIMD; at these sizes the simple code is
//! both fastest and easiest to audit.
//!
//! Conventions:
//! - matrices are stored as packed lower triangles, so symmetry is exact by
//!   storage rather than by discipline;
//! - positive definiteness is tested through Cholesky pivots against the
//!   relative tolerance [`PD_PIVOT_TOL`];
//! - partial correlations use the standard sign convention
//!   `-P_ij / sqrt(P_ii * P_jj)` on the precision matrix `P` of the restricted
//!   block, so that with an empty conditioning set the value reduces to the
//!   plain correlation.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Relative Cholesky pivot tolerance: a pivot must exceed
/// `PD_PIVOT_TOL * trace / dim` for the matrix to count as positive definite.
pub const PD_PIVOT_TOL: f64 = 1e-12;

/// Residual variances at or below this are treated as exactly degenerate when
/// computing partial correlations.
pub const DEGENERACY_TOL: f64 = 1e-14;

/// Maximum dimension accepted by [`SymMatrix::from_rows`]. Moment matrices in
/// this crate are 4x4 (observed) or 5x5 (extended, or observed plus one
/// benchmark covariate), with room for derived columns.
pub const MAX_DIM: usize = 8;

/// Symmetric matrix with variable labels, stored as a packed lower triangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    dim: usize,
    labels: Vec<String>,
    /// Row-major packed lower triangle: element (i, j) with j <= i lives at
    /// i*(i+1)/2 + j.
    elems: Vec<f64>,
}

impl SymMatrix {
    /// Builds a matrix from full rows, taking the lower triangle as truth.
    ///
    /// Fails if the input is not square, not finite, asymmetric beyond a
    /// 1e-8 relative tolerance, or larger than [`MAX_DIM`].
    pub fn from_rows(labels: &[&str], rows: &[Vec<f64>]) -> Result<Self> {
        let k = labels.len();
        if k < 1 || k > MAX_DIM {
            return Err(Error::Dimension(format!(
                "symmetric matrix dimension {k} outside supported range 1..={MAX_DIM}"
            )));
        }
        if rows.len() != k || rows.iter().any(|r| r.len() != k) {
            return Err(Error::Dimension(format!(
                "expected a {k}x{k} matrix to match {k} labels"
            )));
        }
        let scale = rows
            .iter()
            .flat_map(|r| r.iter())
            .fold(0.0f64, |a, &v| a.max(v.abs()))
            .max(1.0);
        for i in 0..k {
            for j in 0..k {
                let v = rows[i][j];
                if !v.is_finite() {
                    return Err(Error::Degenerate(format!(
                        "non-finite entry at ({i}, {j})"
                    )));
                }
                if (v - rows[j][i]).abs() > 1e-8 * scale {
                    return Err(Error::Degenerate(format!(
                        "asymmetric input: ({i}, {j}) = {v} vs ({j}, {i}) = {}",
                        rows[j][i]
                    )));
                }
            }
        }
        let mut m = SymMatrix::zeros(labels);
        for i in 0..k {
            for j in 0..=i {
                m.set(i, j, rows[i][j]);
            }
        }
        Ok(m)
    }

    /// Zero matrix with the given labels.
    pub fn zeros(labels: &[&str]) -> Self {
        let k = labels.len();
        SymMatrix {
            dim: k,
            labels: labels.iter().map(|s| s.to_string()).collect(),
            elems: vec![0.0; k * (k + 1) / 2],
        }
    }

    /// Identity matrix with the given labels.
    pub fn identity(labels: &[&str]) -> Self {
        let mut m = SymMatrix::zeros(labels);
        for i in 0..m.dim {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Index of a label, if present.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    #[inline]
    fn offset(i: usize, j: usize) -> usize {
        debug_assert!(j <= i);
        i * (i + 1) / 2 + j
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i >= j { (i, j) } else { (j, i) };
        self.elems[Self::offset(a, b)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let (a, b) = if i >= j { (i, j) } else { (j, i) };
        self.elems[Self::offset(a, b)] = v;
    }

    /// Submatrix over `idx`, in the order given (repeats are not checked).
    pub fn restrict(&self, idx: &[usize]) -> SymMatrix {
        let labels: Vec<&str> = idx.iter().map(|&i| self.labels[i].as_str()).collect();
        let mut m = SymMatrix::zeros(&labels);
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate().take(a + 1) {
                m.set(a, b, self.get(i, j));
            }
        }
        m
    }

    /// Splits into a correlation matrix and the vector of standard
    /// deviations. Fails on a nonpositive diagonal.
    pub fn to_correlation(&self) -> Result<(SymMatrix, Vec<f64>)> {
        let mut sds = Vec::with_capacity(self.dim);
        for i in 0..self.dim {
            let v = self.get(i, i);
            if v <= 0.0 {
                return Err(Error::Degenerate(format!(
                    "variance of '{}' is {v}, cannot form correlations",
                    self.labels[i]
                )));
            }
            sds.push(v.sqrt());
        }
        let mut c = self.clone();
        for i in 0..self.dim {
            for j in 0..=i {
                c.set(i, j, self.get(i, j) / (sds[i] * sds[j]));
            }
        }
        Ok((c, sds))
    }

    /// Lower Cholesky factor `L` with `L L^T = self`.
    ///
    /// Pivots are tested against `PD_PIVOT_TOL * trace / dim`; the first
    /// failing pivot index is reported on error.
    pub fn cholesky_lower(&self) -> Result<Lower> {
        let k = self.dim;
        let trace: f64 = (0..k).map(|i| self.get(i, i)).sum();
        let tol = PD_PIVOT_TOL * trace.max(0.0) / k as f64;
        let mut l = vec![0.0; k * (k + 1) / 2];
        for i in 0..k {
            for j in 0..=i {
                let mut s = self.get(i, j);
                for p in 0..j {
                    s -= l[Self::offset(i, p)] * l[Self::offset(j, p)];
                }
                if i == j {
                    if s <= tol {
                        return Err(Error::NotPositiveDefinite { pivot: i });
                    }
                    l[Self::offset(i, i)] = s.sqrt();
                } else {
                    l[Self::offset(i, j)] = s / l[Self::offset(j, j)];
                }
            }
        }
        Ok(Lower { dim: k, elems: l })
    }

    /// Whether the matrix passes the Cholesky positive-definiteness test.
    pub fn is_pd(&self) -> bool {
        self.cholesky_lower().is_ok()
    }

    /// All eigenvalues, by cyclic Jacobi sweeps. Exact enough for the
    /// relative eigenvalue checks used on 4x4 and 5x5 moment matrices.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let k = self.dim;
        let mut a = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in 0..k {
                a[i][j] = self.get(i, j);
            }
        }
        let norm: f64 = a
            .iter()
            .flat_map(|r| r.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
            .max(1e-300);
        for _sweep in 0..64 {
            let mut off = 0.0;
            for i in 0..k {
                for j in (i + 1)..k {
                    off += a[i][j] * a[i][j];
                }
            }
            if off.sqrt() <= 1e-14 * norm {
                break;
            }
            for p in 0..k {
                for q in (p + 1)..k {
                    if a[p][q].abs() <= 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for i in 0..k {
                        let aip = a[i][p];
                        let aiq = a[i][q];
                        a[i][p] = c * aip - s * aiq;
                        a[i][q] = s * aip + c * aiq;
                    }
                    for i in 0..k {
                        let api = a[p][i];
                        let aqi = a[q][i];
                        a[p][i] = c * api - s * aqi;
                        a[q][i] = s * api + c * aqi;
                    }
                }
            }
        }
        let mut eig: Vec<f64> = (0..k).map(|i| a[i][i]).collect();
        eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
        eig
    }

    /// Appends the projection of `target` onto the span of `onto` as a new
    /// variable named `label`. The appended row is the exact second-moment
    /// image of the fitted values, so downstream quantities involving the
    /// projection need no access to per-observation data.
    pub fn append_projection(
        &self,
        target: usize,
        onto: &[usize],
        label: &str,
    ) -> Result<SymMatrix> {
        let coefs = reg_coefs(self, target, onto)?;
        let k = self.dim;
        let mut labels: Vec<&str> = self.labels.iter().map(|s| s.as_str()).collect();
        labels.push(label);
        let mut out = SymMatrix::zeros(&labels);
        for i in 0..k {
            for j in 0..=i {
                out.set(i, j, self.get(i, j));
            }
        }
        // cov(hat, v) = sum_p coef_p * cov(onto_p, v) for every original v,
        // and var(hat) = sum_p coef_p * cov(onto_p, hat).
        let mut cov_hat = vec![0.0; k];
        for (p, &xp) in onto.iter().enumerate() {
            for (v, cov) in cov_hat.iter_mut().enumerate() {
                *cov += coefs[p] * self.get(xp, v);
            }
        }
        for (v, &cov) in cov_hat.iter().enumerate() {
            out.set(k, v, cov);
        }
        let var_hat: f64 = onto
            .iter()
            .enumerate()
            .map(|(p, &xp)| coefs[p] * cov_hat[xp])
            .sum();
        out.set(k, k, var_hat);
        Ok(out)
    }
}

/// Packed lower-triangular factor produced by [`SymMatrix::cholesky_lower`].
#[derive(Debug, Clone)]
pub struct Lower {
    dim: usize,
    elems: Vec<f64>,
}

impl Lower {
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.elems[SymMatrix::offset(i, j)]
        }
    }

    /// Solves `L x = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let k = self.dim;
        let mut x = b.to_vec();
        for i in 0..k {
            for j in 0..i {
                x[i] -= self.get(i, j) * x[j];
            }
            x[i] /= self.get(i, i);
        }
        x
    }

    /// Solves `L^T x = b`.
    pub fn solve_upper(&self, b: &[f64]) -> Vec<f64> {
        let k = self.dim;
        let mut x = b.to_vec();
        for i in (0..k).rev() {
            for j in (i + 1)..k {
                x[i] -= self.get(j, i) * x[j];
            }
            x[i] /= self.get(i, i);
        }
        x
    }

    /// Solves `(L L^T) x = b`.
    pub fn solve_spd(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// Reconstructs `L L^T` (used by round-trip tests).
    pub fn reconstruct(&self) -> Vec<Vec<f64>> {
        let k = self.dim;
        let mut m = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in 0..k {
                let mut s = 0.0;
                for p in 0..=i.min(j) {
                    s += self.get(i, p) * self.get(j, p);
                }
                m[i][j] = s;
            }
        }
        m
    }
}

/// Partial correlation of variables `i` and `j` given the variables in
/// `cond`, computed from the precision matrix of the restricted block as
/// `-P_ij / sqrt(P_ii * P_jj)`.
///
/// With an empty conditioning set this is the plain correlation. Returns a
/// degeneracy error when the residual variance of either variable (given the
/// other and the conditioning set) is at or below [`DEGENERACY_TOL`], since
/// the correlation is then on the closed boundary and every downstream
/// formula divides by `1 - r^2`.
pub fn partial_corr(m: &SymMatrix, i: usize, j: usize, cond: &[usize]) -> Result<f64> {
    if i == j || cond.contains(&i) || cond.contains(&j) {
        return Err(Error::Dimension(
            "partial correlation targets must be distinct and disjoint from the conditioning set"
                .into(),
        ));
    }
    let mut idx = vec![i, j];
    idx.extend_from_slice(cond);
    let block = m.restrict(&idx);
    let chol = block.cholesky_lower().map_err(|_| {
        Error::Degeneracy(format!(
            "moment block for ({}, {} | ...) is singular",
            m.labels()[i],
            m.labels()[j]
        ))
    })?;
    let k = block.dim();
    let mut e0 = vec![0.0; k];
    e0[0] = 1.0;
    let mut e1 = vec![0.0; k];
    e1[1] = 1.0;
    let c0 = chol.solve_spd(&e0);
    let c1 = chol.solve_spd(&e1);
    let (p00, p01, p11) = (c0[0], c0[1], c1[1]);
    if 1.0 / p00 <= DEGENERACY_TOL || 1.0 / p11 <= DEGENERACY_TOL {
        return Err(Error::Degeneracy(format!(
            "residual variance of '{}' or '{}' is numerically zero",
            m.labels()[i],
            m.labels()[j]
        )));
    }
    Ok((-p01 / (p00 * p11).sqrt()).clamp(-1.0, 1.0))
}

/// Conditional covariance of `keep` given `cond` (Schur complement).
pub fn resid_cov(m: &SymMatrix, keep: &[usize], cond: &[usize]) -> Result<SymMatrix> {
    let base = m.restrict(keep);
    if cond.is_empty() {
        return Ok(base);
    }
    let cc = m.restrict(cond);
    let chol = cc
        .cholesky_lower()
        .map_err(|_| Error::Degeneracy("conditioning block is singular".into()))?;
    let mut out = base;
    // out -= B * C^{-1} * B^T, column by column of B^T.
    let solved: Vec<Vec<f64>> = keep
        .iter()
        .map(|&a| {
            let b: Vec<f64> = cond.iter().map(|&c| m.get(a, c)).collect();
            chol.solve_spd(&b)
        })
        .collect();
    for ai in 0..keep.len() {
        for (bi, &b) in keep.iter().enumerate().take(ai + 1) {
            let dot: f64 = cond
                .iter()
                .enumerate()
                .map(|(ci, &c)| m.get(b, c) * solved[ai][ci])
                .sum();
            out.set(ai, bi, out.get(ai, bi) - dot);
        }
    }
    Ok(out)
}

/// Residual variance of `v` after projecting out `cond`.
pub fn resid_var(m: &SymMatrix, v: usize, cond: &[usize]) -> Result<f64> {
    Ok(resid_cov(m, &[v], cond)?.get(0, 0))
}

/// Residual standard deviation of `v` after projecting out `cond`.
pub fn resid_sd(m: &SymMatrix, v: usize, cond: &[usize]) -> Result<f64> {
    let var = resid_var(m, v, cond)?;
    if var <= 0.0 {
        return Err(Error::Degeneracy(format!(
            "residual variance of '{}' is nonpositive",
            m.labels()[v]
        )));
    }
    Ok(var.sqrt())
}

/// Population regression coefficients of `y` on `xs` from second moments.
pub fn reg_coefs(m: &SymMatrix, y: usize, xs: &[usize]) -> Result<Vec<f64>> {
    let xx = m.restrict(xs);
    let chol = xx
        .cholesky_lower()
        .map_err(|_| Error::Degeneracy("regressor moment block is singular".into()))?;
    let xy: Vec<f64> = xs.iter().map(|&x| m.get(x, y)).collect();
    Ok(chol.solve_spd(&xy))
}

/// Population R-squared of `y` on `xs` (centered variables).
pub fn r_squared(m: &SymMatrix, y: usize, xs: &[usize]) -> Result<f64> {
    let total = m.get(y, y);
    if total <= 0.0 {
        return Err(Error::Degeneracy(format!(
            "variance of '{}' is nonpositive",
            m.labels()[y]
        )));
    }
    let resid = resid_var(m, y, xs)?;
    Ok((1.0 - resid / total).clamp(0.0, 1.0))
}

/// Weighted least-squares fit summary.
///
/// `dof = n - prior_cols - k` where `k` is the number of design columns and
/// `prior_cols` counts regressors already partialled out of the inputs
/// upstream (they consumed degrees of freedom even though they are no longer
/// visible here).
#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub coef: Vec<f64>,
    /// Classical residual variance estimate, weighted SSR over `dof`.
    pub residual_variance: f64,
    /// `residual_variance * (X^T W X)^{-1}`.
    pub coef_cov: Vec<Vec<f64>>,
    pub dof: usize,
}

/// Weighted least squares of `response` on the named design columns.
///
/// Weights must be nonnegative. Rank deficiency is reported as a collinearity
/// error naming the first design column that is linearly dependent on its
/// predecessors.
pub fn wls(
    design: &[(&str, &[f64])],
    response: &[f64],
    weights: &[f64],
    prior_cols: usize,
) -> Result<FitResult> {
    let n = response.len();
    let k = design.len();
    if k == 0 {
        return Err(Error::Dimension("empty design".into()));
    }
    if weights.len() != n || design.iter().any(|(_, c)| c.len() != n) {
        return Err(Error::Dimension(
            "design, response, and weights must share one length".into(),
        ));
    }
    if n < prior_cols + k + 1 {
        return Err(Error::Dimension(format!(
            "{n} rows cannot support {k} regressors plus {prior_cols} partialled columns"
        )));
    }
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::Degenerate("weights must be finite and nonnegative".into()));
    }

    let xtwx = normal_matrix(design, weights);
    let mut xtwy = vec![0.0; k];
    for r in 0..n {
        let w = weights[r];
        if w == 0.0 {
            continue;
        }
        for i in 0..k {
            xtwy[i] += w * design[i].1[r] * response[r];
        }
    }

    let chol = chol_dense(&xtwx).map_err(|pivot| Error::Collinear(design[pivot].0.to_string()))?;
    let coef = chol_solve(&chol, &xtwy);

    let mut ssr = 0.0;
    for r in 0..n {
        let w = weights[r];
        if w == 0.0 {
            continue;
        }
        let fitted: f64 = (0..k).map(|i| coef[i] * design[i].1[r]).sum();
        let e = response[r] - fitted;
        ssr += w * e * e;
    }
    let dof = n - prior_cols - k;
    let residual_variance = (ssr / dof as f64).max(0.0);

    let mut inv = vec![vec![0.0; k]; k];
    for j in 0..k {
        let mut e = vec![0.0; k];
        e[j] = 1.0;
        let col = chol_solve(&chol, &e);
        for i in 0..k {
            inv[i][j] = col[i];
        }
    }
    let coef_cov = inv
        .iter()
        .map(|row| row.iter().map(|v| v * residual_variance).collect())
        .collect();

    Ok(FitResult {
        coef,
        residual_variance,
        coef_cov,
        dof,
    })
}

/// Weighted least-squares residuals of `response` on the design columns.
pub fn wls_residuals(
    design: &[(&str, &[f64])],
    response: &[f64],
    weights: &[f64],
) -> Result<Vec<f64>> {
    let fit = wls(design, response, weights, 0)?;
    let n = response.len();
    let mut resid = Vec::with_capacity(n);
    for r in 0..n {
        let fitted: f64 = (0..design.len()).map(|i| fit.coef[i] * design[i].1[r]).sum();
        resid.push(response[r] - fitted);
    }
    Ok(resid)
}

fn normal_matrix(design: &[(&str, &[f64])], weights: &[f64]) -> Vec<Vec<f64>> {
    let k = design.len();
    let n = weights.len();
    let mut xtwx = vec![vec![0.0; k]; k];
    for r in 0..n {
        let w = weights[r];
        if w == 0.0 {
            continue;
        }
        for i in 0..k {
            let xi = design[i].1[r];
            for (j, xtwx_ij) in xtwx[i].iter_mut().enumerate().take(i + 1) {
                *xtwx_ij += w * xi * design[j].1[r];
            }
        }
    }
    for i in 0..k {
        for j in (i + 1)..k {
            xtwx[i][j] = xtwx[j][i];
        }
    }
    xtwx
}

/// Inverse of the weighted normal matrix (X^T W X)^{-1}, used for two-stage
/// standard errors where the residual variance comes from structural rather
/// than second-stage residuals.
pub(crate) fn xtwx_inverse(
    design: &[(&str, &[f64])],
    weights: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let k = design.len();
    let xtwx = normal_matrix(design, weights);
    let chol = chol_dense(&xtwx).map_err(|pivot| Error::Collinear(design[pivot].0.to_string()))?;
    let mut inv = vec![vec![0.0; k]; k];
    for j in 0..k {
        let mut e = vec![0.0; k];
        e[j] = 1.0;
        let col = chol_solve(&chol, &e);
        for (i, row) in inv.iter_mut().enumerate() {
            row[j] = col[i];
        }
    }
    Ok(inv)
}

/// Unpacked dense Cholesky for arbitrary-size normal equations (the design
/// can have more columns than [`MAX_DIM`]). Returns the failing pivot index
/// on rank deficiency.
fn chol_dense(a: &[Vec<f64>]) -> std::result::Result<Vec<Vec<f64>>, usize> {
    let k = a.len();
    let trace: f64 = (0..k).map(|i| a[i][i]).sum();
    let tol = PD_PIVOT_TOL * trace.max(0.0) / k as f64;
    let mut l = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..=i {
            let mut s = a[i][j];
            for p in 0..j {
                s -= l[i][p] * l[j][p];
            }
            if i == j {
                if s <= tol {
                    return Err(i);
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Ok(l)
}

fn chol_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let k = l.len();
    let mut y = b.to_vec();
    for i in 0..k {
        for j in 0..i {
            y[i] -= l[i][j] * y[j];
        }
        y[i] /= l[i][i];
    }
    for i in (0..k).rev() {
        for j in (i + 1)..k {
            y[i] -= l[j][i] * y[j];
        }
        y[i] /= l[i][i];
    }
    y
}
