use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("emitter {index} lies outside the field of view: {detail}")]
    OutOfBounds { index: usize, detail: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown Zernike (Noll) index {0}")]
    UnknownZernike(usize),

    #[error("singular Fisher matrix: {param} is not identifiable")]
    SingularFisher { param: &'static str },

    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },

    #[error("infeasible scene: {0}")]
    Infeasible(String),

    #[error("corrupt data in {path}: {detail}")]
    Corrupt { path: String, detail: String },

    #[error("format version mismatch in {path}: expected {expected}, found {found}")]
    Version { path: String, expected: u32, found: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn corrupt(path: impl AsRef<std::path::Path>, detail: impl Into<String>) -> Self {
        Error::Corrupt { path: path.as_ref().display().to_string(), detail: detail.into() }
    }
}
