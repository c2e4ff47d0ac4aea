use thiserror::Error;

/// A single invariant violation, keyed by the dotted config path of the
/// offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub key: String,
    pub message: String,
}

impl Violation {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

/// Last known state of an optimizer that gave up.
#[derive(Debug, Clone, PartialEq)]
pub struct FitFailure {
    pub reason: String,
    pub parameters: Vec<f64>,
    pub iterations: usize,
}

impl std::fmt::Display for FitFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} (after {} iterations, last parameters {:?})",
            self.reason, self.iterations, self.parameters
        )
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {}", join_violations(.0))]
    Invalid(Vec<Violation>),

    #[error("structural error: {0}")]
    Structure(String),

    #[error("degenerate steady state: {} closed components {}", .components.len(), format_components(.components))]
    DegenerateSteadyState { components: Vec<Vec<String>> },

    #[error("fit failed: {0}")]
    Fit(FitFailure),

    #[error("transfer goal {goal} unreachable; achievable maximum is {achievable:.4}")]
    Unreachable { goal: f64, achievable: f64 },

    #[error("inconsistent input: {0}")]
    Inconsistent(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

fn format_components(c: &[Vec<String>]) -> String {
    c.iter()
        .map(|comp| format!("{{{}}}", comp.join(",")))
        .collect::<Vec<_>>()
        .join(" ")
}

pub(crate) fn ensure(violations: Vec<Violation>) -> Result<()> {
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::Invalid(violations))
    }
}
