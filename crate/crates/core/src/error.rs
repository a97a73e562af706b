use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("angle {0} rad outside the open interval (-pi/2, pi/2)")]
    AngleDomain(f64),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Two or more angles produce (numerically) parallel steering vectors.
    #[error("signature matrix is rank deficient (ratio {ratio:.3e}); angles have coalesced")]
    RankDeficient { ratio: f64 },

    #[error("Q^H R_zl Q is not positive definite")]
    NotPositiveDefinite,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("noise initialisation failed: {0}")]
    NoiseInit(String),

    #[error("line search: {0}")]
    LineSearch(String),

    #[error("{0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
