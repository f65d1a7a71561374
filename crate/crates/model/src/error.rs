use thiserror::Error;

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Loss or parameters became NaN/infinite.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Core(#[from] geoknow_core::Error),
}

impl ModelError {
    pub fn is_numeric(&self) -> bool {
        matches!(self, ModelError::Numeric(_))
    }
}
