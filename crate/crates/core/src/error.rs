use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("FFT size {0} is not a power of two")]
    NonPowerOfTwo(usize),
    #[error("FFT size n={n} outside valid range [{lo}, {hi}]")]
    FftSizeRange { n: usize, lo: usize, hi: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("no feasible design point under the given constraints")]
    Infeasible,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
