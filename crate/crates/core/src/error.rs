use std::path::PathBuf;

/// Errors produced by the keyframe relocalization library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("incompatible feature dimensions: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("frame {frame}: expected {expected} values, found {found}")]
    InconsistentDim {
        frame: usize,
        expected: usize,
        found: usize,
    },

    #[error("frame {frame}: zero vector cannot be normalized")]
    ZeroVector { frame: usize },

    #[error("frame {frame}: norm {norm} deviates from 1 by more than the ingest tolerance")]
    NormOutOfTolerance { frame: usize, norm: f64 },

    #[error("frame {frame}: non-finite or non-numeric value")]
    BadValue { frame: usize },

    #[error("count mismatch: header declares {declared} frames, data holds {found}")]
    CountMismatch { declared: usize, found: usize },

    #[error("geotags: {0}")]
    Geotag(String),

    #[error("ground truth: {0}")]
    GroundTruth(String),

    #[error("empty database")]
    EmptyDatabase,

    #[error("k = {k} is out of range for {n} frames (need 2 <= k <= {max})", max = n.saturating_sub(1))]
    InvalidK { k: usize, n: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("database has no geotags; the distance strategy needs GPS, use similarity, fixed_rate or medoid instead")]
    MissingGeotags,

    #[error("cannot place {clusters} centers {gap} rad apart in {dim} dimensions")]
    InfeasibleSeparation { clusters: usize, gap: f64, dim: usize },

    /// A parse or validation error inside a named file.
    #[error("{}: {source}", path.display())]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_file(path: &std::path::Path) -> impl FnOnce(Error) -> Error + '_ {
        move |e| match e {
            Error::Io { .. } | Error::InFile { .. } => e,
            e => Error::InFile {
                path: path.to_path_buf(),
                source: Box::new(e),
            },
        }
    }

    /// True when the error stems from how the caller parameterized a request
    /// rather than from the content of a data file.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidK { .. } | Error::InvalidArgument(_) | Error::MissingGeotags
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
