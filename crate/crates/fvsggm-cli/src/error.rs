//! Error type shared by every subcommand, carrying the process exit code.
//!
//! The binary distinguishes three failure classes so scripts can react
//! without parsing messages:
//!
//! * exit 2 — bad input: unreadable or malformed files, inconsistent
//!   flags, dimension mismatches;
//! * exit 3 — numerical failure: a matrix that is not positive definite,
//!   a model file whose blocks violate the model invariants, an iteration
//!   that breaks monotonicity;
//! * exit 4 — a resource cap was hit (for example the subset-enumeration
//!   cap in exact feedback-set selection).
//!
//! Exit 0 is success; clap itself exits with 2 on usage errors, which
//! matches the bad-input class.

use std::fmt;

/// Failure class, ordered by exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Malformed or inconsistent input (exit 2).
    Input,
    /// Numerical or model-invariant failure (exit 3).
    Numeric,
    /// A configured resource cap was exceeded (exit 4).
    ResourceCap,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Input => 2,
            Kind::Numeric => 3,
            Kind::ResourceCap => 4,
        }
    }
}

/// An error with a user-facing message and an exit-code class.
#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError { kind: Kind::Input, message: message.into() }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        CliError { kind: Kind::Numeric, message: message.into() }
    }

    /// Reclassifies a library error as a model-invariant failure (exit 3),
    /// used when validating model files: the file parsed fine, so the
    /// problem is the model it describes, not the input syntax.
    pub fn invariant(context: &str, err: fvsggm::Error) -> Self {
        CliError::numeric(format!("{context}: {err}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<fvsggm::Error> for CliError {
    fn from(err: fvsggm::Error) -> Self {
        use fvsggm::Error as E;
        let kind = match &err {
            E::EnumerationTooLarge { .. } => Kind::ResourceCap,
            E::NotPositiveDefinite { .. }
            | E::NotPositiveSemidefinite { .. }
            | E::DegenerateCorrelation { .. }
            | E::BpBreakdown { .. }
            | E::NonpositiveVariance { .. }
            | E::MonotonicityViolation { .. }
            | E::InitFailure(_) => Kind::Numeric,
            E::DimensionMismatch { .. }
            | E::NotSymmetric { .. }
            | E::InsufficientSamples(_)
            | E::InvalidPartition(_)
            | E::InvalidTree(_)
            | E::InvalidParameter(_) => Kind::Input,
        };
        CliError { kind, message: err.to_string() }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
