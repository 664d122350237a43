use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in `{op}`: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("`{op}` undefined for input: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("`{op}` produced a non-finite value at flat index {index}")]
    NonFinite { op: &'static str, index: usize },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("detached graph: {0}")]
    Detached(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("non-finite field output at sample {sample} of ray {ray}")]
    NonFiniteSample { ray: usize, sample: usize },

    #[error("degenerate estimated depth: {0}")]
    DegenerateDepth(String),

    #[error("prior backend `{backend}` failed: {detail}")]
    Backend { backend: String, detail: String },

    #[error("optimization diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(detail: impl Into<String>) -> Self {
        Error::Invalid(detail.into())
    }

    pub(crate) fn format(detail: impl Into<String>) -> Self {
        Error::Format(detail.into())
    }
}
