use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point outside the domain: norm {norm} exceeds ball radius {radius}")]
    OutsideDomain { norm: f64, radius: f64 },

    #[error("invalid problem spec: {0}")]
    InvalidSpec(String),

    #[error("invalid argument `{arg}`: {reason}")]
    InvalidArgument { arg: &'static str, reason: String },

    #[error("step size {beta} is not admissible: condition `{condition}` requires beta below {threshold}")]
    InadmissibleStepSize {
        beta: f64,
        condition: String,
        threshold: f64,
    },

    #[error("chain diverged at step {step} (distance to optimum {distance:e})")]
    Divergence { step: usize, distance: f64 },

    #[error("replica {replica}: {source}")]
    Replica {
        replica: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("spectral radius {0} is not below 1")]
    Unstable(f64),

    #[error("singular linear system (residual {0:e})")]
    Singular(f64),

    #[error("matrix is not positive semi-definite (smallest eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("moment order {p_max} too large for {n} samples (at most {limit})")]
    MomentOrderTooLarge { p_max: usize, n: usize, limit: usize },

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("heavy tails: no constant below {limit:e} satisfies the moment generating condition")]
    HeavyTails { limit: f64 },

    #[error("missing constant `{0}` in problem spec")]
    MissingConstant(&'static str),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("config error{}: {message}", .line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { message: String, line: Option<usize> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn arg(arg: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            arg,
            reason: reason.into(),
        }
    }
}
