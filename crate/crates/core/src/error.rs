use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty reduction")]
    EmptyReduction,

    #[error("sample larger than population: cannot choose {k} from {n}")]
    SampleTooLarge { k: usize, n: usize },

    #[error("diverged at step {step}")]
    Diverged { step: usize },

    #[error("embeddings must be normalized (row {row} has norm {norm})")]
    NotNormalized { row: usize, norm: f64 },

    #[error("batch exceeds queue: {batch} rows for a queue of {capacity}")]
    QueueOverflow { batch: usize, capacity: usize },

    #[error("degenerate supervision: training data has fewer than two classes")]
    DegenerateSupervision,

    #[error("empty query set")]
    EmptyQuery,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unknown split tag {0:?}")]
    UnknownSplit(String),

    #[error("episode {index}: {source}")]
    Episode {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    File {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wraps an I/O failure on `path`, for use with `map_err`.
    pub fn at(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
        move |source| Error::File {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit status for the command-line front end:
    /// 1 usage, 2 data or format, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Diverged { .. } | Error::NotNormalized { .. } => 3,
            Error::Episode { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
