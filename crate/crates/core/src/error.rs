use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("constant series: standard deviation is zero")]
    ConstantSeries,

    #[error("degenerate series: {0}")]
    DegenerateSeries(String),

    #[error("covariance factorization failed for H={hurst}, n={n}: {msg}")]
    CovarianceFactorization { hurst: f64, n: usize, msg: String },

    #[error("model fit failed: {0}")]
    FitFailed(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
