use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("negative value {value} at flat index {index}")]
    NegativeValue { index: usize, value: f64 },

    #[error("non-finite value {value} at flat index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("latent value {value} at flat index {index} overflows exp()")]
    Overflow { index: usize, value: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unknown channel `{0}`")]
    UnknownChannel(String),

    #[error("measurement value {value} at datum {index} is not strictly positive")]
    NonPositiveMeasurement { index: usize, value: f64 },

    /// A sampler iterate left the allowed latent range.
    #[error("diverged at t={t}: |latent|={value} exceeds bound {bound}")]
    Divergence { t: usize, value: f64, bound: f64 },

    /// Training produced a non-finite loss.
    #[error("non-finite training loss at step {step} (sigma index {sigma_index}, scenes {scenes:?})")]
    TrainingDiverged {
        step: usize,
        sigma_index: usize,
        scenes: Vec<usize>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("metadata mismatch: {0}")]
    MetadataMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the numerics of a run rather than by its inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. }
                | Error::Overflow { .. }
                | Error::TrainingDiverged { .. }
                | Error::Numerical(_)
        )
    }
}
