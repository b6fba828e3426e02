use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),
    /// Input outside the domain where a quantity is defined (cone membership,
    /// positivity of a mean curvature, ...).
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("generation failed: {0}")]
    Generation(String),
    /// The discrete surface is no longer a radial graph.
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("flow stalled at t = {t}: {reason}")]
    Stall { t: f64, reason: String },
    #[error("monitor violation at t = {t}: {reason}")]
    Monitor { t: f64, reason: String },
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($fmt:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::$variant(format!($($fmt)+)));
        }
    };
}

pub(crate) use ensure;
