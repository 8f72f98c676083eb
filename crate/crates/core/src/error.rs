use thiserror::Error;

/// Errors raised by the grid, kernel and form machinery.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unsupported dimension {0}: only d = 1 and d = 2 are modelled")]
    Dimension(usize),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("grid size mismatch: expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },

    #[error("grid extent mismatch: m = {0} vs m = {1}")]
    ExtentMismatch(u32, u32),

    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),

    #[error("invalid exponent {value}: {reason}")]
    Exponent { value: f64, reason: &'static str },

    #[error("degenerate cube: scale {0} is below the grid scale")]
    DegenerateCube(i32),

    #[error("cube corner {corner:?} is not aligned to scale {s}")]
    Misaligned { s: i32, corner: [i64; 2] },

    #[error("cube does not meet the grid domain")]
    OutsideDomain,

    #[error("spherical function is not mean-zero (mean {0:e})")]
    NotMeanZero(f64),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("support violation: {0}")]
    Support(String),

    #[error("i/o: {0}")]
    Io(String),

    #[error("parse: {0}")]
    Parse(String),

    #[error("sparsifier aborted: {0}")]
    Aborted(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_exponent(p: f64) -> Result<()> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::Exponent {
            value: p,
            reason: "must satisfy p >= 1 or p = inf",
        });
    }
    Ok(())
}

/// Hölder conjugate, with 1' = inf and inf' = 1.
pub fn conjugate(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else if p.is_infinite() {
        1.0
    } else {
        p / (p - 1.0)
    }
}
