use crate::sim::LeakClass;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure category, used by front-ends to pick exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Diverged,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("simulation diverged: non-finite {field} at t = {time} s")]
    SimulationDiverged { field: &'static str, time: f64 },

    #[error("stroke limit not reached within {duration} s ({completed} of {required} strokes completed)")]
    SimulationTimeout {
        duration: f64,
        completed: usize,
        required: usize,
    },

    #[error("signal too short: {len} samples, need at least {min}")]
    TooShort { len: usize, min: usize },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("class {0} has fewer than two usable segments")]
    MissingClass(LeakClass),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid label: {0}")]
    Label(String),

    #[error("backward pass needs the cache of a training-mode forward pass")]
    MissingCache,

    #[error(
        "training diverged: non-finite {what} in epoch {epoch} (last good epoch: {last_good:?})"
    )]
    TrainingDiverged {
        what: &'static str,
        epoch: usize,
        last_good: Option<usize>,
    },

    #[error("unsupported model schema_version {found} (this build reads version {expected})")]
    SchemaVersion { found: u64, expected: u64 },

    #[error("malformed model file: {0}")]
    ModelFormat(String),

    #[error("recall undefined: class {0} does not occur in the true labels")]
    UndefinedRecall(usize),

    #[error("stuck cycle: no valve transition within {max} samples")]
    StuckCycle { max: usize },

    #[error("sample time {t} is not after previous sample time {prev}")]
    Ordering { t: f64, prev: f64 },

    #[error("no classifications have been emitted")]
    EmptyReport,

    #[error("incompatible artifacts: {0}")]
    Incompatible(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Usage,
            Error::SimulationDiverged { .. } | Error::TrainingDiverged { .. } => {
                ErrorKind::Diverged
            }
            _ => ErrorKind::Data,
        }
    }

    /// Stable snake_case identifier for machine-readable error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Config(_) => "invalid_config",
            Error::SimulationDiverged { .. } => "simulation_diverged",
            Error::SimulationTimeout { .. } => "simulation_timeout",
            Error::TooShort { .. } => "too_short",
            Error::Degenerate(_) => "degenerate_data",
            Error::MissingClass(_) => "missing_class",
            Error::Dimension(_) => "dimension_mismatch",
            Error::Label(_) => "invalid_label",
            Error::MissingCache => "missing_cache",
            Error::TrainingDiverged { .. } => "training_diverged",
            Error::SchemaVersion { .. } => "schema_version",
            Error::ModelFormat(_) => "model_format",
            Error::UndefinedRecall(_) => "undefined_recall",
            Error::StuckCycle { .. } => "stuck_cycle",
            Error::Ordering { .. } => "sample_ordering",
            Error::EmptyReport => "empty_report",
            Error::Incompatible(_) => "incompatible_artifacts",
            Error::Parse(_) => "parse_error",
            Error::Io(_) => "io_error",
        }
    }
}
