use std::path::PathBuf;

use crate::grid::TimeStamp;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // grid
    #[error("no cell centers fall inside the requested bounds")]
    EmptyRegion,
    #[error("every cell is missing at {0}")]
    AllMissing(String),
    #[error("line {line}: {msg}")]
    Format { line: u64, msg: String },
    #[error("inconsistent axes: {0}")]
    InconsistentAxes(String),
    #[error("gap in time series: {after} is followed by {found}")]
    GapInTime { after: TimeStamp, found: TimeStamp },
    #[error("duplicate row at line {line} for ({time}, {lat}, {lon})")]
    DuplicateRow {
        line: u64,
        time: TimeStamp,
        lat: f64,
        lon: f64,
    },
    #[error("time ranges do not overlap")]
    NoOverlap,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("{0} lies outside the grid's time range")]
    OutOfRange(TimeStamp),

    // climatology
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("grid and climatology axes differ")]
    AxesMismatch,
    #[error("series too short: need {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },

    // preprocess
    #[error("bad colour scale [{0}, {1}]")]
    BadScale(f64, f64),

    // tensor / model
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dropout rate {0} outside [0, 1)")]
    BadRate(f64),
    #[error("loss is not a scalar (shape {0:?})")]
    NotScalar(Vec<usize>),
    #[error("chronological split leaves an empty {0} set")]
    EmptySplit(&'static str),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    // evaluation
    #[error("configuration index {0} outside 0..=5")]
    BadK(usize),
    #[error("confusion matrix is empty")]
    EmptyMatrix,

    // synthetic
    #[error("bad synthetic spec: {0}")]
    BadSpec(String),

    // io / config
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("png encoding: {0}")]
    Png(#[from] png::EncodingError),
}

impl Error {
    /// Process exit code for the error's family.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            Config(_) | BadK(_) | BadRate(_) | BadScale(..) | BadSpec(_) => 2,
            FileNotFound(_) => 3,
            Format { .. } | InconsistentAxes(_) | GapInTime { .. } | DuplicateRow { .. }
            | InvalidGrid(_) | Json(_) | Csv(_) | Checkpoint(_) => 4,
            EmptyRegion | AllMissing(_) | NoOverlap | OutOfRange(_) | InsufficientData(_)
            | AxesMismatch | TooShort { .. } | EmptyMatrix => 5,
            ShapeMismatch(_) | NotScalar(_) | EmptySplit(_) | LengthMismatch(..) => 6,
            Io(_) | Png(_) => 7,
        }
    }
}
