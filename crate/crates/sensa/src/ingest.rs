//! Tabular ingestion with declared variable roles.
//!
//! The pipeline is: load a CSV whose [`RoleSchema`] says which columns play
//! the outcome, treatment, treatment-proxy, and outcome-proxy roles;
//! optionally rescale outcome and treatment to unit variance; partial the
//! covariates out of the four role columns by weighted least squares; and
//! reduce to the weighted 4x4 moment matrix everything downstream consumes.
//!
//! Row weights are carried through every step so the fractional-weighted
//! bootstrap can rerun the pipeline under reweighting; unweighted analyses
//! pass all-ones weights. Covariances use divisor n (population convention,
//! so sample formulas match population formulas exactly); the covariate
//! count is carried separately for degrees-of-freedom corrections.

use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};
use crate::var;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Declares which CSV columns play which structural roles.
///
/// The treatment proxy doubles as the instrument when the instrumental
/// strategy is used; the outcome proxy is the negative-control outcome of
/// the proximal strategy.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleSchema {
    pub outcome: String,
    pub treatment: String,
    pub treatment_proxy: String,
    pub outcome_proxy: String,
    #[serde(default)]
    pub covariates: Vec<String>,
    /// Rescale outcome and treatment to unit weighted variance during
    /// [`standardize`], so effects are reported in standard-deviation units.
    #[serde(default = "default_true")]
    pub standardize_yz: bool,
}

fn default_true() -> bool {
    true
}

impl RoleSchema {
    /// Parses a schema from a JSON document.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let schema: RoleSchema = serde_json::from_str(s)
            .map_err(|e| Error::Schema(format!("invalid role schema JSON: {e}")))?;
        schema.validate()?;
        Ok(schema)
    }

    /// Reads and parses a schema JSON file.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    /// Role columns in pipeline order (treatment proxy, outcome proxy,
    /// treatment, outcome), matching the moment-matrix variable order.
    pub fn role_columns(&self) -> [&str; 4] {
        [
            &self.treatment_proxy,
            &self.outcome_proxy,
            &self.treatment,
            &self.outcome,
        ]
    }

    /// Checks that role columns are pairwise distinct and covariates are
    /// distinct and disjoint from the roles.
    pub fn validate(&self) -> Result<()> {
        let roles = self.role_columns();
        for a in 0..roles.len() {
            for b in (a + 1)..roles.len() {
                if roles[a] == roles[b] {
                    return Err(Error::Schema(format!(
                        "role columns must be distinct; '{}' appears twice",
                        roles[a]
                    )));
                }
            }
        }
        for (i, c) in self.covariates.iter().enumerate() {
            if roles.contains(&c.as_str()) {
                return Err(Error::Schema(format!(
                    "covariate '{c}' is already a role column"
                )));
            }
            if self.covariates[..i].contains(c) {
                return Err(Error::Schema(format!("covariate '{c}' listed twice")));
            }
        }
        Ok(())
    }

    /// Minimum usable row count: the largest downstream regression has
    /// intercept + covariates + three role regressors, and we require two
    /// residual degrees of freedom beyond that.
    pub fn min_rows(&self) -> usize {
        self.covariates.len() + 6
    }
}

/// A loaded, validated numeric table with role assignments and row weights.
///
/// Column storage is column-major. Weights are nonnegative and sum to n;
/// unweighted data carries all-ones weights.
#[derive(Debug, Clone)]
pub struct Dataset {
    schema: RoleSchema,
    w_z: Vec<f64>,
    w_y: Vec<f64>,
    z: Vec<f64>,
    y: Vec<f64>,
    x: Vec<Vec<f64>>,
    weights: Vec<f64>,
    scale_y: f64,
    scale_z: f64,
    u: Option<Vec<f64>>,
}

/// Tokens treated as missing values during CSV ingestion.
fn is_missing(cell: &str) -> bool {
    matches!(
        cell.trim(),
        "" | "NA" | "na" | "Na" | "NaN" | "nan" | "N/A" | "n/a" | "null" | "NULL"
    )
}

/// Loads a CSV file with a header row, drops rows with missing values in any
/// role or covariate column (listwise deletion), and validates the result.
pub fn load_dataset(path: &Path, schema: RoleSchema) -> Result<Dataset> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => {
                let msg = std::io::Error::new(std::io::ErrorKind::Other, e.to_string());
                Error::io(path, msg)
            }
            _ => Error::Parse {
                row: 0,
                column: "<header>".into(),
                detail: e.to_string(),
            },
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            column: "<header>".into(),
            detail: e.to_string(),
        })?
        .clone();

    let mut wanted: Vec<&str> = schema.role_columns().to_vec();
    wanted.extend(schema.covariates.iter().map(|s| s.as_str()));
    let mut indices = Vec::with_capacity(wanted.len());
    for name in &wanted {
        match headers.iter().position(|h| h == *name) {
            Some(i) => indices.push(i),
            None => {
                return Err(Error::Schema(format!(
                    "column '{name}' not found in {}",
                    path.display()
                )))
            }
        }
    }

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); wanted.len()];
    for (row_i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            row: row_i + 1,
            column: "<record>".into(),
            detail: e.to_string(),
        })?;
        let mut parsed = Vec::with_capacity(wanted.len());
        let mut drop_row = false;
        for (&col_idx, name) in indices.iter().zip(&wanted) {
            let cell = record.get(col_idx).unwrap_or("");
            if is_missing(cell) {
                drop_row = true;
                break;
            }
            let value: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                row: row_i + 1,
                column: name.to_string(),
                detail: format!("cannot parse '{}' as a number", cell.trim()),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    row: row_i + 1,
                    column: name.to_string(),
                    detail: format!("non-finite value '{}'", cell.trim()),
                });
            }
            parsed.push(value);
        }
        if drop_row {
            continue;
        }
        for (col, v) in columns.iter_mut().zip(parsed) {
            col.push(v);
        }
    }

    let covariate_cols = columns.split_off(4);
    let mut it = columns.into_iter();
    let (w_z, w_y, z, y) = (
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
    );
    Dataset::from_parts(schema, w_z, w_y, z, y, covariate_cols)
}

impl Dataset {
    /// Builds a dataset from named columns, resolving roles through the
    /// schema. Extra columns are ignored; missing ones are a schema error.
    pub fn from_columns(schema: RoleSchema, columns: &[(&str, Vec<f64>)]) -> Result<Dataset> {
        schema.validate()?;
        let find = |name: &str| -> Result<Vec<f64>> {
            columns
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, c)| c.clone())
                .ok_or_else(|| Error::Schema(format!("column '{name}' not provided")))
        };
        let w_z = find(&schema.treatment_proxy)?;
        let w_y = find(&schema.outcome_proxy)?;
        let z = find(&schema.treatment)?;
        let y = find(&schema.outcome)?;
        let x = schema
            .covariates
            .iter()
            .map(|c| find(c))
            .collect::<Result<Vec<_>>>()?;
        Dataset::from_parts(schema, w_z, w_y, z, y, x)
    }

    fn from_parts(
        schema: RoleSchema,
        w_z: Vec<f64>,
        w_y: Vec<f64>,
        z: Vec<f64>,
        y: Vec<f64>,
        x: Vec<Vec<f64>>,
    ) -> Result<Dataset> {
        let n = y.len();
        for (name, col) in [
            (schema.treatment_proxy.as_str(), &w_z),
            (schema.outcome_proxy.as_str(), &w_y),
            (schema.treatment.as_str(), &z),
        ]
        .into_iter()
        .chain(schema.covariates.iter().map(String::as_str).zip(&x))
        {
            if col.len() != n {
                return Err(Error::Dimension(format!(
                    "column '{name}' has {} rows, expected {n}",
                    col.len()
                )));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::Degenerate(format!(
                    "column '{name}' contains a non-finite value"
                )));
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate(format!(
                "column '{}' contains a non-finite value",
                schema.outcome
            )));
        }
        if n < schema.min_rows() {
            return Err(Error::Dimension(format!(
                "{n} usable rows, but at least {} are required for {} covariates",
                schema.min_rows(),
                schema.covariates.len()
            )));
        }
        Ok(Dataset {
            schema,
            w_z,
            w_y,
            z,
            y,
            x,
            weights: vec![1.0; n],
            scale_y: 1.0,
            scale_z: 1.0,
            u: None,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn schema(&self) -> &RoleSchema {
        &self.schema
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Scaling factors applied to (outcome, treatment) by [`standardize`];
    /// both 1 when standardization was skipped.
    pub fn yz_scales(&self) -> (f64, f64) {
        (self.scale_y, self.scale_z)
    }

    /// Role column accessors in moment order.
    pub fn column_w_z(&self) -> &[f64] {
        &self.w_z
    }
    pub fn column_w_y(&self) -> &[f64] {
        &self.w_y
    }
    pub fn column_z(&self) -> &[f64] {
        &self.z
    }
    pub fn column_y(&self) -> &[f64] {
        &self.y
    }

    /// Covariate columns, ordered as in the schema.
    pub fn covariates(&self) -> &[Vec<f64>] {
        &self.x
    }

    /// The latent confounder column, present only on simulated data where
    /// the generator retains it for validation.
    pub fn confounder(&self) -> Option<&[f64]> {
        self.u.as_deref()
    }

    pub(crate) fn set_confounder(&mut self, u: Vec<f64>) {
        debug_assert_eq!(u.len(), self.n());
        self.u = Some(u);
    }

    /// Returns a copy carrying the given row weights. Weights must be
    /// finite, nonnegative, and sum to n within 1e-8 relative; they are
    /// renormalized to sum exactly n.
    pub fn with_weights(&self, weights: &[f64]) -> Result<Dataset> {
        let n = self.n();
        if weights.len() != n {
            return Err(Error::Dimension(format!(
                "{} weights for {n} rows",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Degenerate(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - n as f64).abs() > 1e-8 * n as f64 {
            return Err(Error::Degenerate(format!(
                "weights sum to {sum}, expected {n}"
            )));
        }
        let scale = n as f64 / sum;
        let mut out = self.clone();
        out.weights = weights.iter().map(|w| w * scale).collect();
        Ok(out)
    }
}

fn weighted_mean(col: &[f64], w: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    col.iter().zip(w).map(|(v, wi)| v * wi).sum::<f64>() / sw
}

fn weighted_sd(col: &[f64], w: &[f64]) -> f64 {
    let m = weighted_mean(col, w);
    let sw: f64 = w.iter().sum();
    let var = col
        .iter()
        .zip(w)
        .map(|(v, wi)| wi * (v - m) * (v - m))
        .sum::<f64>()
        / sw;
    var.max(0.0).sqrt()
}

/// Divides the outcome and treatment columns by their weighted standard
/// deviations when the schema requests it; otherwise returns the dataset
/// unchanged. The applied scales are recorded for reporting.
pub fn standardize(d: &Dataset) -> Result<Dataset> {
    if !d.schema.standardize_yz {
        return Ok(d.clone());
    }
    let sd_y = weighted_sd(&d.y, &d.weights);
    let sd_z = weighted_sd(&d.z, &d.weights);
    if sd_y <= 0.0 {
        return Err(Error::Degenerate(format!(
            "outcome '{}' has zero variance",
            d.schema.outcome
        )));
    }
    if sd_z <= 0.0 {
        return Err(Error::Degenerate(format!(
            "treatment '{}' has zero variance",
            d.schema.treatment
        )));
    }
    let mut out = d.clone();
    out.y = d.y.iter().map(|v| v / sd_y).collect();
    out.z = d.z.iter().map(|v| v / sd_z).collect();
    out.scale_y = sd_y;
    out.scale_z = sd_z;
    Ok(out)
}

/// The four role columns after weighted-least-squares partialling of the
/// covariate design (intercept plus covariates). Columns are weighted-mean
/// zero; `p_x` records the design's column count for later degrees-of-freedom
/// corrections.
#[derive(Debug, Clone)]
pub struct ReducedData {
    pub w_z: Vec<f64>,
    pub w_y: Vec<f64>,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub weights: Vec<f64>,
    pub n: usize,
    pub p_x: usize,
}

/// Replaces each role column by its weighted residual on the covariate
/// design. `drop_covariate` removes one covariate from the design, which is
/// how benchmarking constructs its leave-one-out reductions.
pub fn partial_out(d: &Dataset, drop_covariate: Option<&str>) -> Result<ReducedData> {
    let n = d.n();
    if let Some(name) = drop_covariate {
        if !d.schema.covariates.iter().any(|c| c == name) {
            return Err(Error::Schema(format!(
                "covariate '{name}' not present in the schema"
            )));
        }
    }
    let intercept = vec![1.0; n];
    let mut design: Vec<(&str, &[f64])> = vec![("intercept", &intercept)];
    for (name, col) in d.schema.covariates.iter().zip(&d.x) {
        if Some(name.as_str()) == drop_covariate {
            continue;
        }
        design.push((name, col));
    }
    let p_x = design.len();

    let resid = |col: &[f64]| linalg::wls_residuals(&design, col, &d.weights);
    Ok(ReducedData {
        w_z: resid(&d.w_z)?,
        w_y: resid(&d.w_y)?,
        z: resid(&d.z)?,
        y: resid(&d.y)?,
        weights: d.weights.clone(),
        n,
        p_x,
    })
}

impl ReducedData {
    /// Columns in moment order, paired with their labels.
    pub(crate) fn columns(&self) -> [(&'static str, &[f64]); 4] {
        [
            (var::OBSERVED_LABELS[0], self.w_z.as_slice()),
            (var::OBSERVED_LABELS[1], self.w_y.as_slice()),
            (var::OBSERVED_LABELS[2], self.z.as_slice()),
            (var::OBSERVED_LABELS[3], self.y.as_slice()),
        ]
    }
}

/// Weighted 4x4 second-moment matrix of the reduced columns, in the order
/// (treatment proxy, outcome proxy, treatment, outcome), with sample size
/// and partialled-column count attached.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservedMoments {
    pub cov: SymMatrix,
    pub n: usize,
    pub p_x: usize,
}

impl ObservedMoments {
    /// Wraps an externally constructed moment matrix, enforcing the labels,
    /// dimension, and positive-definiteness this type guarantees.
    pub fn new(cov: SymMatrix, n: usize, p_x: usize) -> Result<Self> {
        let labels_ok = cov
            .labels()
            .iter()
            .map(String::as_str)
            .eq(var::OBSERVED_LABELS);
        if cov.dim() != 4 || !labels_ok {
            return Err(Error::Dimension(format!(
                "observed moments must be 4x4 over {:?}",
                var::OBSERVED_LABELS
            )));
        }
        check_pd_by_eigenvalues(&cov)?;
        Ok(ObservedMoments { cov, n, p_x })
    }
}

fn check_pd_by_eigenvalues(cov: &SymMatrix) -> Result<()> {
    let eig = cov.eigenvalues();
    let smallest = eig[0];
    let largest = eig[eig.len() - 1];
    if !(smallest > 1e-12 * largest) || largest <= 0.0 {
        return Err(Error::Degenerate(format!(
            "moment matrix is numerically singular (eigenvalue range {smallest:.3e} to {largest:.3e})"
        )));
    }
    Ok(())
}

/// Weighted covariance matrix of the reduced columns with divisor n.
pub fn moments(r: &ReducedData) -> Result<ObservedMoments> {
    let n = r.n as f64;
    let cols = r.columns();
    let mut cov = SymMatrix::zeros(&var::OBSERVED_LABELS);
    for i in 0..4 {
        for j in 0..=i {
            let s: f64 = cols[i]
                .1
                .iter()
                .zip(cols[j].1)
                .zip(&r.weights)
                .map(|((a, b), w)| w * a * b)
                .sum();
            cov.set(i, j, s / n);
        }
    }
    check_pd_by_eigenvalues(&cov)?;
    Ok(ObservedMoments {
        cov,
        n: r.n,
        p_x: r.p_x,
    })
}

/// Weighted 5x5 moment matrix of the reduced role columns plus the retained
/// latent confounder, available only on simulated data. Used by tests that
/// compare data-implied extended moments against the parameterization.
pub fn extended_sample_moments(d: &Dataset) -> Result<SymMatrix> {
    let u = d
        .u
        .as_ref()
        .ok_or_else(|| Error::Config("dataset has no retained confounder column".into()))?;
    let r = partial_out(d, None)?;
    let n = d.n();
    let intercept = vec![1.0; n];
    let mut design: Vec<(&str, &[f64])> = vec![("intercept", &intercept)];
    for (name, col) in d.schema.covariates.iter().zip(&d.x) {
        design.push((name, col));
    }
    let u_resid = linalg::wls_residuals(&design, u, &d.weights)?;
    let cols: [(&str, &[f64]); 5] = [
        (var::EXTENDED_LABELS[0], &r.w_z),
        (var::EXTENDED_LABELS[1], &r.w_y),
        (var::EXTENDED_LABELS[2], &r.z),
        (var::EXTENDED_LABELS[3], &r.y),
        (var::EXTENDED_LABELS[4], &u_resid),
    ];
    let mut cov = SymMatrix::zeros(&var::EXTENDED_LABELS);
    for i in 0..5 {
        for j in 0..=i {
            let s: f64 = cols[i]
                .1
                .iter()
                .zip(cols[j].1)
                .zip(&d.weights)
                .map(|((a, b), w)| w * a * b)
                .sum();
            cov.set(i, j, s / n as f64);
        }
    }
    Ok(cov)
}

/// Residual of one covariate on the design spanned by the intercept and the
/// remaining covariates. Pairs with `partial_out(d, Some(name))`: the result
/// lives in the same partialled space as that reduction's role columns.
pub(crate) fn residualize_covariate(d: &Dataset, name: &str) -> Result<Vec<f64>> {
    let idx = d
        .schema
        .covariates
        .iter()
        .position(|c| c == name)
        .ok_or_else(|| Error::Schema(format!("covariate '{name}' not present in the schema")))?;
    let n = d.n();
    let intercept = vec![1.0; n];
    let mut design: Vec<(&str, &[f64])> = vec![("intercept", &intercept)];
    for (cname, col) in d.schema.covariates.iter().zip(&d.x) {
        if cname == name {
            continue;
        }
        design.push((cname, col));
    }
    linalg::wls_residuals(&design, &d.x[idx], &d.weights)
}

/// Weighted 5x5 moment matrix of the reduced role columns plus one extra
/// column living in the same partialled space, with the extra column last.
pub(crate) fn moments_with_extra(
    r: &ReducedData,
    extra: &[f64],
    label: &str,
) -> Result<SymMatrix> {
    if extra.len() != r.n {
        return Err(Error::Dimension(format!(
            "extra column has {} rows, reduction has {}",
            extra.len(),
            r.n
        )));
    }
    let base = r.columns();
    let cols: [(&str, &[f64]); 5] = [base[0], base[1], base[2], base[3], (label, extra)];
    let labels: Vec<&str> = cols.iter().map(|(l, _)| *l).collect();
    let mut cov = SymMatrix::zeros(&labels);
    let n = r.n as f64;
    for i in 0..5 {
        for j in 0..=i {
            let s: f64 = cols[i]
                .1
                .iter()
                .zip(cols[j].1)
                .zip(&r.weights)
                .map(|((a, b), w)| w * a * b)
                .sum();
            cov.set(i, j, s / n);
        }
    }
    Ok(cov)
}
