use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("batchnorm sigma must be strictly positive (channel {channel}: {value})")]
    NonPositiveSigma { channel: usize, value: f32 },

    #[error("block is already fused")]
    AlreadyFused,

    #[error("every patch is corrupted; masked attention has no valid targets")]
    AllCorrupted,

    #[error("mask values must be 0 or 1 (found {0})")]
    NonBinaryMask(f32),

    #[error("extent {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("mask generation did not reach the coverage band after {attempts} attempts")]
    CoverageBudget { attempts: usize },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
