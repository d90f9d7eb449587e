//! Error taxonomy shared by every module.
//!
//! Each variant carries the context a caller needs to act on the failure
//! (offending column, pivot index, achievable range, ...). [`Error::kind`]
//! returns a stable machine-readable tag; the CLI prints it together with the
//! human-readable message as a single-line JSON record. All Display output is
//! single-line for that reason.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A declared role or covariate column is missing, duplicated, or
    /// otherwise inconsistent with the schema invariants.
    #[error("schema error: {0}")]
    Schema(String),

    /// A cell could not be parsed as a number. Rows are 1-based data rows
    /// (the header is row 0).
    #[error("parse error at row {row}, column '{column}': {detail}")]
    Parse {
        row: usize,
        column: String,
        detail: String,
    },

    /// Too few rows, or an index/length mismatch between columns.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Input data is degenerate: zero variance, a non-positive-definite
    /// moment matrix, or an otherwise unusable configuration of values.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A regression design is rank deficient. Names one dependent column.
    #[error("collinear design: column '{0}' is linearly dependent on the preceding columns")]
    Collinear(String),

    /// Cholesky factorization failed. `pivot` is the 0-based index of the
    /// first non-positive pivot.
    #[error("matrix is not positive definite: nonpositive pivot at index {pivot}")]
    NotPositiveDefinite { pivot: usize },

    /// A conditional (residual) variance needed by a partial correlation or
    /// projection is numerically zero.
    #[error("degenerate conditional distribution: {0}")]
    Degeneracy(String),

    /// The instrument carries no signal for the treatment.
    #[error("weak instrument: |R(Z~W_Z|W_Y)| = {r:.3e} is below the relevance threshold")]
    Relevance { r: f64 },

    /// The constructed outcome-proxy projection is collinear with the
    /// treatment, so the proximal second stage cannot be run.
    #[error("proxy degeneracy: {0}")]
    ProxyDegeneracy(String),

    /// A sensitivity parameter sits on the boundary of its open domain.
    #[error("singular sensitivity value: {0}")]
    Singularity(String),

    /// A formula factor left its valid domain; `term` names the offending
    /// quantity (for (1 - R^2) factors, the R^2 that reached 1).
    #[error("domain error: {term} = {value:.6} leaves the formula's valid domain")]
    Domain { term: String, value: f64 },

    /// The requested bias threshold cannot be produced by any sensitivity
    /// value in the clamped search domain.
    #[error("infeasible bias threshold {b:.6}: achievable range is [{lo:.6}, {hi:.6}]")]
    Infeasible { b: f64, lo: f64, hi: f64 },

    /// No optimizer start satisfied the constraints.
    #[error("optimization failed: {0}")]
    Optimization(String),

    /// Robustness allocation is undefined because the total violation is
    /// (numerically) zero.
    #[error("allocation undefined: total robustness value {trv:.3e} is zero within tolerance")]
    UndefinedAllocation { trv: f64 },

    /// Too many bootstrap replicates failed to produce statistics.
    #[error("bootstrap error: {failed} of {total} replicates failed (limit is 20%)")]
    Bootstrap { failed: usize, total: usize },

    /// Invalid simulation or run configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Filesystem failure, annotated with the path involved.
    #[error("io error on '{path}': {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable machine-readable tag for each variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema(_) => "schema",
            Error::Parse { .. } => "parse",
            Error::Dimension(_) => "dimension",
            Error::Degenerate(_) => "degenerate",
            Error::Collinear(_) => "collinear",
            Error::NotPositiveDefinite { .. } => "nonpd",
            Error::Degeneracy(_) => "degeneracy",
            Error::Relevance { .. } => "relevance",
            Error::ProxyDegeneracy(_) => "proxy",
            Error::Singularity(_) => "singular",
            Error::Domain { .. } => "domain",
            Error::Infeasible { .. } => "infeasible",
            Error::Optimization(_) => "optimization",
            Error::UndefinedAllocation { .. } => "allocation",
            Error::Bootstrap { .. } => "bootstrap",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
