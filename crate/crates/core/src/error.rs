use thiserror::Error;

/// Errors surfaced by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("graph generation failed after {attempts} attempts (n={n}, k={k}, p={p})")]
    Generation {
        attempts: usize,
        n: usize,
        k: usize,
        p: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown treatment id {0}")]
    UnknownTreatment(usize),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
