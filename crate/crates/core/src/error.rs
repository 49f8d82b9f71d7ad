use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("node {node} sits at distance {distance} from the receiver")]
    DegenerateGeometry { node: usize, distance: f64 },

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("cross-correlation {0} is outside [-1, 1]")]
    CorrelationOutOfRange(f64),

    #[error("invalid correlation matrix: {0}")]
    InvalidCorrelation(String),

    #[error("matrix is not positive semidefinite (pivot {pivot} at row {row})")]
    NotPositiveSemidefinite { row: usize, pivot: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("{what} of size {size} exceeds the exhaustive-search limit {limit}")]
    Capacity {
        what: &'static str,
        size: usize,
        limit: usize,
    },

    #[error("{name} = {value} is not a probability")]
    InvalidProbability { name: String, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("user {user} is not in the coded set")]
    NotInCodedSet { user: usize },

    #[error("no candidate relay assignments")]
    EmptyCandidates,

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("unknown preset `{0}` (expected fig3, fig4, fig5 or fig6)")]
    UnknownPreset(String),

    #[error("invalid sweep configuration: {0}")]
    InvalidConfig(String),
}
