use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    LengthMismatch {
        expected: usize,
        found: usize,
    },
    InvalidArgument(String),
    InvalidGamma(f64),
    InvalidK {
        k: usize,
        size: usize,
    },
    EmptyDataset {
        client: String,
    },
    SeriesTooShort {
        len: usize,
        needed: usize,
    },
    ZeroVarianceSeries {
        client: String,
    },
    ConstantTruth,
    EmptyTestSet,
    /// Training produced NaN or infinite parameters.
    NonFinite {
        round: usize,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::LengthMismatch { expected, found } => {
                write!(f, "length mismatch: expected {expected}, found {found}")
            }
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::InvalidGamma(g) => write!(f, "compression ratio must lie in (0, 1], got {g}"),
            Error::InvalidK { k, size } => {
                write!(f, "k must satisfy 1 <= k <= {size}, got {k}")
            }
            Error::EmptyDataset { client } => write!(f, "client {client} has no training samples"),
            Error::SeriesTooShort { len, needed } => {
                write!(f, "series has {len} slots, need at least {needed}")
            }
            Error::ZeroVarianceSeries { client } => {
                write!(f, "training portion of series {client} has zero variance")
            }
            Error::ConstantTruth => write!(f, "R^2 is undefined for a constant target"),
            Error::EmptyTestSet => write!(f, "pooled test set is empty"),
            Error::NonFinite { round } => {
                write!(f, "model parameters became non-finite in round {round}")
            }
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, found })
    }
}
