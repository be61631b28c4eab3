use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("linsys: dimension mismatch: {0}")]
    Dimension(String),

    #[error("linsys: invalid argument: {0}")]
    InvalidArgument(String),

    #[error("linsys: (zI - A) is singular at omega = {omega} rad/s")]
    SingularResolvent { omega: f64 },

    #[error("linsys: {0} must be symmetric")]
    NotSymmetric(&'static str),

    #[error("linsys: {0} must be positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("linsys: no stabilizing Riccati solution: {0}")]
    Riccati(String),

    #[error("linsys: system is not stable")]
    Unstable,

    #[error("linsys: numerical failure: {0}")]
    Numerical(String),

    #[error("gap: pair ({i}, {j}): {source}")]
    GapPair {
        i: usize,
        j: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("dynamics: pitch {theta} rad is within the gimbal guard of ±π/2")]
    GimbalLock { theta: f64 },

    #[error("bank: {0}")]
    Bank(String),

    #[error("mpc: {0}")]
    Mpc(String),

    #[error("cascade: {0}")]
    Cascade(String),

    #[error("sim: {0}")]
    Sim(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("format: {0}")]
    Format(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
