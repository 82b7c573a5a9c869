use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("occupation {occupations:?} holds {total} photons, above the cutoff {cutoff}")]
    CutoffExceeded {
        occupations: Vec<u8>,
        total: usize,
        cutoff: usize,
    },

    #[error("expected {expected} modes, got {got}")]
    ModeCount { expected: usize, got: usize },

    #[error("mode {mode} out of range for a {num_modes}-mode space")]
    ModeOutOfRange { mode: usize, num_modes: usize },

    #[error("a two-mode element needs distinct modes, got {0} twice")]
    SameMode(usize),

    #[error("operands live in different spaces ({0})")]
    SpaceMismatch(String),

    #[error("cannot normalize a zero vector")]
    ZeroNorm,

    #[error("operator has zero trace")]
    ZeroTrace,

    #[error("empty mode selection")]
    EmptySelection,

    #[error("{name} = {value} is outside {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("matrix is not unitary (max deviation {0:e})")]
    NotUnitary(f64),

    #[error("no counts recorded in basis {0}")]
    NoCounts(String),

    #[error("division by zero: {0}")]
    DivisionByZero(&'static str),

    #[error("{0}")]
    Invalid(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Checks `lo <= value <= hi`, naming the offending parameter otherwise.
pub(crate) fn check_range(
    name: &'static str,
    value: f64,
    lo: f64,
    hi: f64,
    range: &'static str,
) -> Result<()> {
    if value.is_finite() && value >= lo && value <= hi {
        Ok(())
    } else {
        Err(Error::OutOfRange { name, value, range })
    }
}
