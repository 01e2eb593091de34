use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed document: {0}")]
    Malformed(String),

    #[error("duplicate maximal cell with base {base:?} and axes {axes:?}")]
    DuplicateCell { base: Vec<i64>, axes: Vec<usize> },

    #[error("axis index {axis} is out of range for ambient dimension {dim}")]
    AxisOutOfRange { axis: usize, dim: usize },

    #[error("point {0:?} lies outside the complex")]
    OutsideComplex(Vec<f64>),

    #[error("point {point:?} does not lie in cell {cell}")]
    NotInCell { point: Vec<f64>, cell: usize },

    #[error("no cell chain of at most {max_chain} cells joins the points (cells connected: {connected})")]
    NoChain { max_chain: usize, connected: bool },

    #[error("shared face between chain cells {0} and {1} is empty")]
    EmptyFace(usize, usize),

    #[error("parameter out of range: {0}")]
    OutOfRange(String),

    #[error("the two points coincide")]
    SamePoint,

    #[error("query point belongs to the point set (label {0})")]
    PointInSet(String),

    #[error("query point is not in the relative interior of a maximal cell; use the general recognizer")]
    NotRelativeInterior,

    #[error("halving loop did not terminate within {0} iterations")]
    HalvingCap(usize),

    #[error("conic solver did not converge: {0}")]
    NonConvergence(String),

    #[error("invalid certificate: {0}")]
    InvalidCertificate(String),

    #[error("certificate verification failed: {0}")]
    VerificationFailed(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
