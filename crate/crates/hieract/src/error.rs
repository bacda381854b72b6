//! Crate-wide error type.

use thiserror::Error;

/// All failure modes surfaced by the library and CLI.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape or axis mismatch in a tensor operation.
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Numeric precondition violated (NaN, non-positive entry, unnormalized row, ...).
    #[error("numeric error in {op}: {detail}")]
    Numeric { op: &'static str, detail: String },

    /// Invalid configuration value or combination.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or inconsistent taxonomy definition.
    #[error("taxonomy error: {0}")]
    Taxonomy(String),

    /// Malformed embedding or dataset file.
    #[error("format error in {path}: {detail}")]
    Format { path: String, detail: String },

    /// Dataset invariant violated (label out of range, split overlap, ...).
    #[error("data error: {0}")]
    Data(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },

    /// Gradient check exceeded its tolerance.
    #[error("gradient check failed for {op}: max relative error {max_rel_err:.3e} > {tol:.3e}")]
    GradCheck {
        op: String,
        max_rel_err: f64,
        tol: f64,
    },
}

impl Error {
    /// Stable one-word category for machine-readable CLI error lines.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Numeric { .. } => "numeric",
            Error::Config(_) => "config",
            Error::Taxonomy(_) => "taxonomy",
            Error::Format { .. } => "format",
            Error::Data(_) => "data",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
            Error::Csv { .. } => "csv",
            Error::GradCheck { .. } => "gradcheck",
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn numeric(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Numeric {
            op,
            detail: detail.into(),
        }
    }

    /// Wraps an I/O failure with the path it concerned.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
