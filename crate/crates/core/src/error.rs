use thiserror::Error;

/// Errors raised anywhere in the link simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Pivot ratio of a Hermitian solve fell below the conditioning floor.
    #[error("ill-conditioned system (pivot ratio {ratio:.3e})")]
    IllConditioned { ratio: f64 },

    #[error("euler map needs an even-length vector, got {0}")]
    OddLength(usize),

    #[error("channel code width must be even, got {0}")]
    OddWidth(usize),

    #[error("transmit power must be positive, got {0}")]
    NonPositivePower(f64),

    #[error("cannot power-normalize an all-zero frame")]
    ZeroFrame,

    #[error("pilot length {len} too short for {users} users (need at least {min})")]
    TooShort { len: usize, users: usize, min: usize },

    #[error("pilot symbol at timestep {0} has zero energy")]
    ZeroPilotSymbol(usize),

    #[error("zero-norm feature vector at segment {0}")]
    ZeroVector(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed tensor file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit status for the command-line tool: 2 for bad
    /// configuration or input shapes, 3 for numerical failure, 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::IllConditioned { .. } | Error::ZeroFrame | Error::ZeroVector(_) => 3,
            Error::Io(_) | Error::Csv(_) | Error::Format(_) => 4,
            _ => 2,
        }
    }
}
