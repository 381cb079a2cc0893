use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at data row {row}, column {col}: {message}")]
    Parse {
        row: usize,
        col: String,
        message: String,
    },

    #[error("data row {row} has every cell missing")]
    EmptyRow { row: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("design matrix is rank deficient; collinear columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("{family} fit did not converge within {iterations} iterations")]
    NonConvergence {
        family: &'static str,
        iterations: usize,
    },

    #[error("response is missing level(s) {missing:?}; expected all of 0..={max_level}")]
    MissingLevels {
        missing: Vec<usize>,
        max_level: usize,
    },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("pooling requires at least 2 imputations, got {0}")]
    TooFewImputations(usize),

    #[error("chain {chain} aborted at iteration {iteration}, variable {variable}: {source}")]
    ChainAborted {
        chain: usize,
        iteration: usize,
        variable: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by user-supplied inputs (data files, specs,
    /// scenario configs) rather than by a failure inside a running chain.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::EmptyRow { .. }
                | Error::Config(_)
                | Error::Io(_)
                | Error::Csv(_)
        )
    }
}
