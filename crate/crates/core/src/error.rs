use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Malformed or inconsistent input data. `row` is the 1-based line number
    /// in the source file when known (the header is line 1).
    #[error("data error{}: {message}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Data { row: Option<usize>, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Every candidate sequence had probability exactly zero, even at the
    /// shortest permitted history.
    #[error("no prediction for {date}: all candidates have zero probability down to latency {min_latency}")]
    NoPrediction { date: NaiveDate, min_latency: usize },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn data(row: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Data {
            row,
            message: msg.into(),
        }
    }

    /// Strips any number of `Stage` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
