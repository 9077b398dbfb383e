use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FdaError {
    #[error("singular system: reciprocal condition number {rcond:.3e} below threshold")]
    SingularSystem { rcond: f64 },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive definite (eigenvalue ratio {ratio:.3e})")]
    NotPositiveDefinite { ratio: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("insufficient local data for subject {subject} at t = {location}")]
    InsufficientLocalData { subject: String, location: f64 },

    #[error("degenerate fit: subject {subject} has tr(A)/n = {ratio:.12}")]
    DegenerateFit { subject: String, ratio: f64 },

    #[error("no candidate bandwidth yields a finite GCV score")]
    NoFeasibleBandwidth,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("too few subjects: need more than {required}, have {actual}")]
    TooFewSubjects { required: usize, actual: usize },

    #[error("empty kernel window at every grid point")]
    EmptyWindow,

    #[error("design matrix is rank deficient (reciprocal condition {rcond:.3e})")]
    RankDeficientDesign { rcond: f64 },

    #[error("restriction is singular: C(X'X)^-1 C' fails the condition threshold")]
    SingularRestriction,

    #[error("interval [{lower}, {upper}] contains fewer than two grid points")]
    EmptyInterval { lower: f64, upper: f64 },

    #[error("covariance has zero trace")]
    ZeroTrace,

    #[error("mixture is degenerate: all weights are zero")]
    DegenerateMixture,

    #[error("eigenvalue {index} is not retained (m_hat = {m_hat})")]
    ZeroEigenvalue { index: usize, m_hat: usize },

    #[error("line {line}: {message}")]
    ParseError { line: u64, message: String },

    #[error("duplicate time point t = {t} for subject {subject}")]
    DuplicateTimePoint { subject: String, t: f64 },

    #[error("no subjects remain after filtering")]
    EmptyAfterFilter,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("io error: {0}")]
    Io(String),
}

impl FdaError {
    /// Stable identifier for machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            FdaError::SingularSystem { .. } => "SingularSystem",
            FdaError::NotSymmetric { .. } => "NotSymmetric",
            FdaError::NotPositiveDefinite { .. } => "NotPositiveDefinite",
            FdaError::GridMismatch(_) => "GridMismatch",
            FdaError::InsufficientLocalData { .. } => "InsufficientLocalData",
            FdaError::DegenerateFit { .. } => "DegenerateFit",
            FdaError::NoFeasibleBandwidth => "NoFeasibleBandwidth",
            FdaError::EmptyDataset => "EmptyDataset",
            FdaError::TooFewSubjects { .. } => "TooFewSubjects",
            FdaError::EmptyWindow => "EmptyWindow",
            FdaError::RankDeficientDesign { .. } => "RankDeficientDesign",
            FdaError::SingularRestriction => "SingularRestriction",
            FdaError::EmptyInterval { .. } => "EmptyInterval",
            FdaError::ZeroTrace => "ZeroTrace",
            FdaError::DegenerateMixture => "DegenerateMixture",
            FdaError::ZeroEigenvalue { .. } => "ZeroEigenvalue",
            FdaError::ParseError { .. } => "ParseError",
            FdaError::DuplicateTimePoint { .. } => "DuplicateTimePoint",
            FdaError::EmptyAfterFilter => "EmptyAfterFilter",
            FdaError::InvalidInput(_) => "InvalidInput",
            FdaError::Io(_) => "Io",
        }
    }

    /// True for errors caused by the input data rather than by numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            FdaError::ParseError { .. }
                | FdaError::DuplicateTimePoint { .. }
                | FdaError::EmptyAfterFilter
                | FdaError::EmptyDataset
                | FdaError::InvalidInput(_)
                | FdaError::Io(_)
                | FdaError::GridMismatch(_)
                | FdaError::TooFewSubjects { .. }
                | FdaError::EmptyInterval { .. }
        )
    }
}

impl From<std::io::Error> for FdaError {
    fn from(err: std::io::Error) -> Self {
        FdaError::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, FdaError>;
