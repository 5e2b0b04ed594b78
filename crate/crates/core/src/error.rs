use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by estimation, simulation and ingestion.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("no complete-case subjects (every subject is censored)")]
    NoCompleteCases,
    #[error("empty kernel support at ({t0}, {s0}): n_eff = {n_eff}")]
    EmptySupport { t0: f64, s0: f64, n_eff: usize },
    #[error("singular design at ({t0}, {s0}): n_eff = {n_eff}")]
    Singular { t0: f64, s0: f64, n_eff: usize },
    #[error("fit at ({t0}, {s0}) has status {status}, confidence interval unavailable")]
    FitNotOk { t0: f64, s0: f64, status: String },
    #[error("covariance not factorizable after jitter {jitter:e} (dimension {dim})")]
    Factorization { dim: usize, jitter: f64 },
    #[error("no feasible bandwidth on the grid (every CV score is infinite)")]
    NoFeasibleBandwidth,
    #[error("evaluation grid is not rectangular: {0}")]
    NotRectangular(String),
    #[error("slice T = {0} not present in the evaluation grid")]
    SliceAbsent(f64),
    #[error("config: {0}")]
    Config(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 usage, 3 data, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) => 2,
            Error::Data(_) | Error::Row { .. } | Error::NoCompleteCases | Error::Csv(_) | Error::Io(_) => 3,
            Error::SliceAbsent(_) | Error::NotRectangular(_) => 2,
            Error::EmptySupport { .. }
            | Error::Singular { .. }
            | Error::FitNotOk { .. }
            | Error::Factorization { .. }
            | Error::NoFeasibleBandwidth => 4,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "usage",
            3 => "data",
            _ => "numerical",
        }
    }
}
