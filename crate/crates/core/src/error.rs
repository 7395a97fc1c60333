use thiserror::Error;

use crate::measures::Configuration;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("marginal has no support points")]
    EmptyMarginal,
    #[error("points ({points}) and masses ({masses}) have different lengths")]
    LengthMismatch { points: usize, masses: usize },
    #[error("point {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("mass at index {index} is not positive ({value})")]
    NonPositiveMass { index: usize, value: f64 },
    #[error("mass at index {index} is not finite")]
    NonFiniteMass { index: usize },
    #[error("masses sum to {sum}, deviation from 1 exceeds {tolerance}")]
    MassSum { sum: f64, tolerance: f64 },
    #[error("plan/problem shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("configuration {0:?} is out of bounds for the problem shape")]
    ConfigurationOutOfBounds(Configuration),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("invalid times: {0}")]
    InvalidTimes(String),
    #[error("spline needs at least 3 knots, got {0}")]
    TooFewKnots(usize),
    #[error("cost specification does not fit the problem: {0}")]
    CostMismatch(String),
    #[error("column {0:?} already present in the reduced problem")]
    DuplicateColumn(Configuration),
    #[error("column {0:?} is basic and cannot be removed")]
    ActiveColumn(Configuration),
    #[error("column {0:?} is not part of the reduced problem")]
    UnknownColumn(Configuration),
    #[error("reduced problem is infeasible")]
    Infeasible,
    #[error("simplex iteration limit ({0}) exceeded")]
    IterationLimit(usize),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("plan has an empty support")]
    EmptySupport,
    #[error("marginals are not mutual reflections: {0}")]
    NotReflected(String),
    #[error("query time {0} outside [0, 1]")]
    QueryTimeOutOfRange(f64),
    #[error("point {index} at {point:?} lies outside the raster grid")]
    OutOfGrid { index: usize, point: Vec<f64> },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("sinkhorn underflow at epsilon {epsilon}; use the log-domain mode")]
    SinkhornUnderflow { epsilon: f64 },
    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("empty measure: {0}")]
    EmptyMeasure(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
