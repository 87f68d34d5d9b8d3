use thiserror::Error;

/// Errors raised anywhere in the unfitted pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range for {what} (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("mesh format error: {0}")]
    MeshFormat(String),

    #[error("level set has no negative region on the mesh (empty domain)")]
    EmptyDomain,

    #[error(
        "cut element {element} has no interior host on side {side} in its patch; refine the mesh"
    )]
    MissingHost { element: usize, side: usize },

    #[error("level set crosses the face {crossings} times (single crossing required)")]
    MultipleCrossings { crossings: usize },

    #[error("quadrature degree {0} not supported (max {max})", max = crate::cutquad::MAX_RULE_DEGREE)]
    UnsupportedDegree(usize),

    #[error("nonpositive quadrature weight {weight:e} from degenerate clipping")]
    NonpositiveWeight { weight: f64 },

    #[error(
        "newton projection onto the zero level set failed near {point:?} (residual {residual:e})"
    )]
    ProjectionFailure { point: [f64; 3], residual: f64 },

    #[error("quadrature failure on {entity} {index}: {source}")]
    Quadrature {
        entity: &'static str,
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("no interior elements: the domain is not resolved at this mesh size")]
    EmptyInterior,

    #[error("iterative solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("matrix is singular to working precision")]
    Singular,

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("dense solve refused: dimension {n} exceeds guard {limit}")]
    TooLarge { n: usize, limit: usize },

    #[error("eigenvalue estimation broke down: {0}")]
    Breakdown(String),

    #[error("unknown example id {0}")]
    UnknownExample(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn on(self, entity: &'static str, index: usize) -> Error {
        Error::Quadrature {
            entity,
            index,
            source: Box::new(self),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
