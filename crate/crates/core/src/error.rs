use thiserror::Error;

/// Errors produced by the simulation and estimation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("divergence undefined: height is {z} m (must be > 0)")]
    UndefinedDivergence { z: f64 },

    #[error("reference trajectory requires k > 0, got {k}")]
    NonConvergentReference { k: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("insufficient inliers: {found} of {needed} required")]
    InsufficientInliers { found: usize, needed: usize },

    #[error("fit did not converge after {iterations} iterations (last iterate {last:?})")]
    NonConvergent { iterations: usize, last: Vec<f64> },

    #[error("no usable anchors: every truth window was flat")]
    AllAnchorsFlat,

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
