use std::fmt;

/// A single violated bound found by [`crate::validate_config`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConfigViolation {
    NonPositiveSigma,
    NonPositiveLambda,
    ZeroTimesteps,
    NonPositiveThreshold,
    InvalidOptimizer(&'static str),
}

impl fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigViolation::NonPositiveSigma => f.write_str("sigma must be > 0"),
            ConfigViolation::NonPositiveLambda => f.write_str("lambda must be > 0"),
            ConfigViolation::ZeroTimesteps => f.write_str("timesteps must be >= 1"),
            ConfigViolation::NonPositiveThreshold => {
                f.write_str("threshold multiplier must be > 0")
            }
            ConfigViolation::InvalidOptimizer(what) => write!(f, "optimizer: {what}"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {}", join(.0))]
    InvalidConfig(Vec<ConfigViolation>),

    #[error("dimension mismatch: expected {expected} entries, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("point set is empty")]
    EmptyPointSet,

    #[error("non-finite coordinate at index {index}")]
    NonFiniteInput { index: usize },

    #[error("tree is empty")]
    EmptyTree,

    #[error("point {index} lies outside the root cell")]
    OutOfBounds { index: usize },

    #[error("more than {limit} coincident points in one leaf")]
    DuplicatePointOverflow { limit: usize },

    #[error("non-finite state at timestep {timestep}")]
    NonFiniteState { timestep: usize },

    #[error("trajectory has {found} snapshots but config expects {expected}")]
    ConfigMismatch { expected: usize, found: usize },

    #[error("objective is not finite at the starting momentum")]
    NonFiniteObjectiveAtStart,

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(&'static str),

    #[error("invalid shape spec: {0}")]
    InvalidSpec(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

fn join(v: &[ConfigViolation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}
