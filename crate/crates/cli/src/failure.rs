//! Exit-code taxonomy and the machine-readable error record.

use mflq::Error;
use serde::Serialize;

pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_PARSE: u8 = 3;
pub const EXIT_SOLVER: u8 = 4;
pub const EXIT_USAGE: u8 = 5;

/// A failed command: exit code, short kind and message.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub code: u8,
    pub kind: String,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            kind: "usage".into(),
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_VALIDATION,
            kind: "validation".into(),
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            kind: "io".into(),
            message: message.into(),
        }
    }

    /// Errors raised while reading the problem file.
    pub fn from_load(err: Error) -> Self {
        let code = match err {
            Error::Parse { .. } | Error::Dimension { .. } => EXIT_PARSE,
            _ => EXIT_VALIDATION,
        };
        Failure {
            code,
            kind: err.kind().into(),
            message: err.to_string(),
        }
    }

    /// Errors raised by the solvers and simulators.
    pub fn from_solver(err: Error) -> Self {
        let code = match err {
            Error::Parse { .. } => EXIT_PARSE,
            Error::NotSymmetric { .. } | Error::H1Violation(_) => EXIT_VALIDATION,
            Error::InvalidArgument(_) => EXIT_USAGE,
            _ => EXIT_SOLVER,
        };
        Failure {
            code,
            kind: err.kind().into(),
            message: err.to_string(),
        }
    }

    /// One-line JSON record written to stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}
