use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("measure mismatch: |Omega| = {omega} but |Lambda| = {lambda} in an incompressible setting")]
    MeasureMismatch { omega: f64, lambda: f64 },

    #[error("point {point:?} lies outside Omega")]
    OutsideDomain { point: [f64; 2] },

    #[error("entropy evaluated at t = {0}, which is not positive")]
    NonPositiveDensity(f64),

    #[error("safeguarded Newton solve for {what} did not converge at argument {arg}")]
    NewtonFailure { what: &'static str, arg: f64 },

    #[error("argument with norm {norm} lies outside the effective domain of f*")]
    OutsideConjugateDomain { norm: f64 },

    #[error("test space level {0} exceeds the size guard (1..=12)")]
    LevelOutOfRange(u32),

    #[error("inner supremum unbounded: discrete argmax sits on the v-grid boundary at node {node}")]
    UnboundedConjugate { node: usize },

    #[error("node {node} lies outside the convex hull of the majorant slopes")]
    OutsideHull { node: usize },

    #[error("line search failed to make progress after {iterations} iterations (objective {value})")]
    LineSearch { iterations: usize, value: f64 },

    #[error("{0}")]
    Unsupported(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("configuration invalid:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("I/O failure at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
