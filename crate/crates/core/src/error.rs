use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by the command line front-end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed or inconsistent input data.
    Input,
    /// A mathematical precondition of an operation does not hold.
    Precondition,
    /// The computation finished but a requested tolerance was not met.
    Tolerance,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid metric: {0}")]
    InvalidMetric(String),

    #[error("empty set: {0}")]
    EmptySet(&'static str),

    #[error("time {0} is not in the fragment domain")]
    NotInDomain(f64),

    #[error("times ({0}, {1}) are not consecutive in the fragment domain")]
    NotAdjacent(f64, f64),

    #[error("space has no coordinates")]
    MissingCoords,

    #[error("fragment is constant")]
    ConstantFragment,

    #[error("carrier mass lands on point {point} where the measure vanishes")]
    CarrierMeasureMismatch { point: usize },

    #[error("linear program failed: {0}")]
    Lp(String),

    #[error("map is not {bound}-Lipschitz: pair ({p}, {q}) has quotient {quotient}")]
    NotLipschitz { p: usize, q: usize, quotient: f64, bound: f64 },

    #[error("derivations are dependent on {} point(s)", points.len())]
    DependentDerivations { points: Vec<usize> },

    #[error("arity mismatch: expected {expected} functions, got {got}")]
    ArityMismatch { expected: usize, got: usize },

    #[error("operation requires {0}")]
    UnsupportedForm(&'static str),

    #[error("flow decomposition residual {residual} exceeds tolerance {tol}")]
    Residual { residual: f64, tol: f64 },

    #[error("pseudodual precondition fails: max defect {0}")]
    PseudodualPrecondition(f64),

    #[error("coverage gap: uncovered mass {mass} on {} point(s)", points.len())]
    CoverageGap { mass: f64, points: Vec<usize> },

    #[error("null certificate missing or does not cover the set")]
    MissingCertificate,

    #[error("zero current")]
    ZeroCurrent,

    #[error("invalid representation: {0}")]
    InvalidRepresentation(String),

    #[error("partition pieces overlap at point {0}")]
    OverlappingPartition(usize),

    #[error("sandwich violated at ({i}, {j})")]
    SandwichViolation { i: usize, j: usize },

    #[error("witness check failed: defect {0}")]
    WitnessDefect(f64),

    #[error("direction lost on filled gap {gap} of fragment {fragment}")]
    DirectionLost { fragment: usize, gap: usize },

    #[error("density ratio is not constant at point {point} (spread {spread})")]
    RatioInconsistent { point: usize, spread: f64 },

    #[error("fail mass {mass} exceeds tolerance {tol}")]
    FailMass { mass: f64, tol: f64 },

    #[error("density fit residual {achieved} above target {target}")]
    FitFailed { achieved: f64, target: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            LengthMismatch { .. }
            | InvalidArgument(_)
            | InvalidMetric(_)
            | EmptySet(_)
            | NotInDomain(_)
            | NotAdjacent(..)
            | MissingCoords
            | ArityMismatch { .. }
            | UnsupportedForm(_)
            | OverlappingPartition(_)
            | CarrierMeasureMismatch { .. }
            | InvalidRepresentation(_)
            | Parse(_)
            | Io(_) => ErrorKind::Input,
            ConstantFragment
            | NotLipschitz { .. }
            | DependentDerivations { .. }
            | PseudodualPrecondition(_)
            | MissingCertificate
            | ZeroCurrent
            | SandwichViolation { .. }
            | DirectionLost { .. }
            | RatioInconsistent { .. } => ErrorKind::Precondition,
            Lp(_)
            | Residual { .. }
            | CoverageGap { .. }
            | WitnessDefect(_)
            | FailMass { .. }
            | FitFailed { .. } => ErrorKind::Tolerance,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(format!("line {} column {}: {}", e.line(), e.column(), e))
    }
}
