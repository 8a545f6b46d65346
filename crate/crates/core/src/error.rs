use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes. Each variant carries a stable machine-readable code.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("malformed matrix: {0}")]
    MalformedMatrix(String),
    #[error("group has no elements")]
    EmptyGroup,
    #[error("point {0:?} lies outside the chart domain")]
    PointOutsideDomain(Vec<f64>),
    #[error("point {0:?} is not in the overlap of the charts")]
    NotInOverlap(Vec<f64>),
    #[error("form degree {degree} exceeds dimension {dim}")]
    DegreeOverflow { degree: usize, dim: usize },
    #[error("finite-difference derivative did not converge at {0:?}")]
    NonDifferentiable(Vec<f64>),
    #[error("supports leave a gap at {0:?}")]
    CoverGap(Vec<f64>),
    #[error("quadrature produced a non-finite value")]
    QuadratureDiverged,
    #[error("equivariance fails at y={y:?} for group element {gamma}")]
    EquivarianceFail { y: Vec<f64>, gamma: usize },
    #[error("embedding has not been verified: {0}")]
    UnverifiedEmbedding(String),
    #[error("extension domain does not contain {0:?}")]
    DomainTooSmall(Vec<f64>),
    #[error("normal derivative is singular at {point:?} (sigma_min = {sigma_min:e})")]
    SingularNormalDerivative { point: Vec<f64>, sigma_min: f64 },
    #[error("axioms still fail after {0} shrink rounds")]
    ShrinkExhausted(usize),
    #[error("incompatible charts: {0}")]
    IncompatibleCharts(String),
    #[error("gluing map is not proper near {0:?}")]
    NotProper(Vec<f64>),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("maps are not transversal at {0:?}")]
    NotTransversal(Vec<f64>),
    #[error("product chart lost effectivity: {0}")]
    EffectivityLost(String),
    #[error("no branch permutation matches at y={y:?}, group element {gamma}")]
    NoPermutationFound { y: Vec<f64>, gamma: usize },
    #[error("extension requested without a bundle extension datum for {0}")]
    MissingExtensionData(String),
    #[error("derivative unavailable: {0}")]
    DerivativeUnavailable(String),
    #[error("no transversal perturbation after {0} attempts")]
    TransversalityRetryExhausted(usize),
    #[error("partition of unity missing for {0}")]
    MissingPou(String),
    #[error("weight form integrates to {0}, not 1")]
    OmegaNotNormalized(f64),
    #[error("filter induction stuck at {0}")]
    FilterInductionStuck(String),
    #[error("virtual dimension is {0}, expected 0")]
    NotVdim0(i64),
    #[error("sign undetermined at {point:?} (|det| = {det:e})")]
    SignUndetermined { point: Vec<f64>, det: f64 },
    #[error("boundary restriction is not transversal at {0:?}")]
    BoundaryNotTransversal(Vec<f64>),
    #[error("level {0} is within the critical margin")]
    LevelCritical(f64),
    #[error("traced curve broke off at {0:?}")]
    TraceBreak(Vec<f64>),
    #[error("map is not submersive at {0:?}")]
    NotSubmersive(Vec<f64>),
    #[error("mode unsupported: {0}")]
    ModeUnsupported(String),
    #[error("parse error at line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("unresolved label {0}")]
    UnresolvedLabel(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("command {command} does not apply: {reason}")]
    CommandScenarioMismatch { command: String, reason: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::MalformedMatrix(_) => "MALFORMED_MATRIX",
            Error::EmptyGroup => "EMPTY_GROUP",
            Error::PointOutsideDomain(_) => "POINT_OUTSIDE_DOMAIN",
            Error::NotInOverlap(_) => "NOT_IN_OVERLAP",
            Error::DegreeOverflow { .. } => "DEGREE_OVERFLOW",
            Error::NonDifferentiable(_) => "NON_DIFFERENTIABLE",
            Error::CoverGap(_) => "COVER_GAP",
            Error::QuadratureDiverged => "QUADRATURE_DIVERGED",
            Error::EquivarianceFail { .. } => "EQUIVARIANCE_FAIL",
            Error::UnverifiedEmbedding(_) => "UNVERIFIED_EMBEDDING",
            Error::DomainTooSmall(_) => "DOMAIN_TOO_SMALL",
            Error::SingularNormalDerivative { .. } => "SINGULAR_NORMAL_DERIVATIVE",
            Error::ShrinkExhausted(_) => "SHRINK_EXHAUSTED",
            Error::IncompatibleCharts(_) => "INCOMPATIBLE_CHARTS",
            Error::NotProper(_) => "NOT_PROPER",
            Error::DimMismatch(_) => "DIM_MISMATCH",
            Error::NotTransversal(_) => "NOT_TRANSVERSAL",
            Error::EffectivityLost(_) => "EFFECTIVITY_LOST",
            Error::NoPermutationFound { .. } => "NO_PERMUTATION_FOUND",
            Error::MissingExtensionData(_) => "MISSING_EXTENSION_DATA",
            Error::DerivativeUnavailable(_) => "DERIVATIVE_UNAVAILABLE",
            Error::TransversalityRetryExhausted(_) => "TRANSVERSALITY_RETRY_EXHAUSTED",
            Error::MissingPou(_) => "MISSING_POU",
            Error::OmegaNotNormalized(_) => "OMEGA_NOT_NORMALIZED",
            Error::FilterInductionStuck(_) => "FILTER_INDUCTION_STUCK",
            Error::NotVdim0(_) => "NOT_VDIM0",
            Error::SignUndetermined { .. } => "SIGN_UNDETERMINED",
            Error::BoundaryNotTransversal(_) => "BOUNDARY_NOT_TRANSVERSAL",
            Error::LevelCritical(_) => "LEVEL_CRITICAL",
            Error::TraceBreak(_) => "TRACE_BREAK",
            Error::NotSubmersive(_) => "NOT_SUBMERSIVE",
            Error::ModeUnsupported(_) => "MODE_UNSUPPORTED",
            Error::Parse { .. } => "PARSE_ERROR",
            Error::UnresolvedLabel(_) => "UNRESOLVED_LABEL",
            Error::Type(_) => "TYPE_ERROR",
            Error::CommandScenarioMismatch { .. } => "COMMAND_SCENARIO_MISMATCH",
            Error::Io(_) => "IO_ERROR",
        }
    }
}
