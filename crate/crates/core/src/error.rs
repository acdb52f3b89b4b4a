use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in `{field}`: expected {expected}, found {found}")]
    Dimension {
        field: String,
        expected: String,
        found: String,
    },

    #[error("`{field}` is not symmetric (max asymmetry {asymmetry:.3e})")]
    NotSymmetric { field: String, asymmetry: f64 },

    #[error("assumption (H1) violated: {0}")]
    H1Violation(String),

    #[error("spectra overlap: Kronecker system is singular or ill-conditioned (cond1 = {condition:.3e})")]
    SpectraOverlap { condition: f64 },

    #[error("Riccati integration broke down at t = {t}: {reason}")]
    RiccatiBreakdown { t: f64, reason: String },

    #[error("no stabilizing solution found within pseudo-horizon {horizon} (last |dP/dt| = {derivative:.3e})")]
    NoStabilizingSolution { horizon: f64, derivative: f64 },

    #[error("stability certificate failed: {0}")]
    Certificate(String),

    #[error("KKT system of the static problem is singular")]
    SingularKkt,

    #[error("time {t} outside [{lo}, {hi}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("simulation blew up on path {path} at t = {t}")]
    BlowUp { path: usize, t: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    pub(crate) fn dim(field: impl Into<String>, expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension {
            field: field.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// Stable short identifier, used in machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::NotSymmetric { .. } => "not_symmetric",
            Error::H1Violation(_) => "h1_violation",
            Error::SpectraOverlap { .. } => "spectra_overlap",
            Error::RiccatiBreakdown { .. } => "riccati_breakdown",
            Error::NoStabilizingSolution { .. } => "no_stabilizing_solution",
            Error::Certificate(_) => "certificate",
            Error::SingularKkt => "singular_kkt",
            Error::OutOfRange { .. } => "out_of_range",
            Error::ModelMismatch(_) => "model_mismatch",
            Error::BlowUp { .. } => "blow_up",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Parse { .. } => "parse",
        }
    }
}
