use thiserror::Error;

use crate::regress::Method;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid filter spec: {0}")]
    InvalidSpec(String),

    #[error("constraint system is underdetermined: {constraints} constraints on {support} supported samples")]
    Underdetermined { constraints: usize, support: usize },

    #[error("constraint system is rank deficient (relative pivot {pivot:.3e})")]
    RankDeficient { pivot: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("series too short: {len} samples for a window of {window}")]
    SeriesTooShort { len: usize, window: usize },

    #[error("{method} gram matrix is singular (pe_stat = {pe_stat:.3e}, rcond = {rcond:.3e})")]
    SingularGram {
        method: Method,
        pe_stat: f64,
        rcond: f64,
    },

    #[error("bias-corrected gram matrix is singular, the correction overwhelms the data (pe_stat = {pe_stat:.3e}, rcond = {rcond:.3e})")]
    CorrectedGramSingular { pe_stat: f64, rcond: f64 },

    #[error("noise covariance is not positive semidefinite (min eigenvalue {min_eig:.3e})")]
    NotPsd { min_eig: f64 },

    #[error("integrator failed at t = {t}: {reason}")]
    Integrator { t: f64, reason: String },

    #[error("invalid model: {0}")]
    Model(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("replication {index} failed: {source}")]
    Replication {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by the numbers rather than the inputs' shape.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::RankDeficient { .. }
            | Error::SingularGram { .. }
            | Error::CorrectedGramSingular { .. }
            | Error::Integrator { .. } => true,
            Error::Replication { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) | Error::Csv(_) => true,
            Error::Replication { source, .. } => source.is_io(),
            _ => false,
        }
    }
}
