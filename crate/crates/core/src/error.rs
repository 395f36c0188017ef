use thiserror::Error;

/// Errors shared across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate density: all values are zero")]
    DegenerateDensity,

    #[error("negative density value {value} at node {index}")]
    NegativeDensity { index: usize, value: f64 },

    #[error("no axes kept")]
    NoAxesKept,

    #[error("conditioning on null set (slice mass {mass:.3e})")]
    ConditioningOnNullSet { mass: f64 },

    #[error("point outside grid bounding box on axis {axis}: {value}")]
    PointOutsideGrid { axis: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("quantile level out of range: {0}")]
    QuantileOutOfRange(f64),

    #[error("invalid bandwidth: {0}")]
    InvalidBandwidth(f64),

    #[error("covariance not positive definite")]
    CovarianceNotPositiveDefinite,

    #[error("invalid grid axis {axis}: {reason}")]
    InvalidGridAxis { axis: usize, reason: &'static str },

    #[error("invalid measure: {0}")]
    InvalidMeasure(&'static str),

    #[error("invalid cost parameter epsilon = {0}; must lie in (0, 1]")]
    InvalidEpsilon(f64),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("undefined barycenter: source atom {0} has zero weight")]
    UndefinedBarycenter(usize),

    #[error("instance too large: {rows} x {cols} exceeds the {cap} x {cap} exact-solver cap; use the entropic solver")]
    InstanceTooLarge { rows: usize, cols: usize, cap: usize },

    #[error("sinkhorn stalled: row-marginal violation {violation:.3e} after {iterations} iterations")]
    SinkhornStalled { violation: f64, iterations: usize },

    #[error("use log-domain: eta = {eta:.3e} underflows the scaling kernel")]
    UseLogDomain { eta: f64 },

    #[error("invalid solver parameter: {0}")]
    InvalidSolverParameter(&'static str),

    #[error("oracle unconverged: KKT residual {residual:.3e}")]
    OracleUnconverged { residual: f64 },

    #[error("support inconsistency: perturbed target is zero on supported column {column}")]
    SupportInconsistency { column: usize },

    #[error("support mismatch: maps or plans are not defined over the same atoms")]
    SupportMismatch,

    #[error("time {0} outside [0, 1]")]
    TimeOutOfRange(f64),

    #[error("invalid time grid: {0}")]
    InvalidTimeGrid(&'static str),

    #[error("continuity residual needs at least 3 time samples in the window, found {0}")]
    TooFewTimeSamples(usize),

    #[error("interpolant not invertible at t = {0}")]
    InterpolantNotInvertible(f64),

    #[error("sweep cell (epsilon = {epsilon}, lambda = {lambda:?}) failed: {source}")]
    Cell { epsilon: f64, lambda: Option<f64>, #[source] source: Box<Error> },

    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(#[from] serde_json::Error),

    #[error("csv parse error at line {line}: {message}")]
    CsvParse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
