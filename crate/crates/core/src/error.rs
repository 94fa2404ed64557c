use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate spectrum: every singular value is zero")]
    DegenerateSpectrum,
    #[error("division by zero: {0}")]
    ZeroDivisor(&'static str),
    #[error("NMI undefined: both marginals have zero entropy")]
    UndefinedNmi,
    #[error("negative probability mass")]
    NegativeMass,
    #[error("cyclic shift needs equal block sizes")]
    UnequalBlocks,
    #[error("cache does not belong to this network")]
    StaleCache,
    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },
    #[error("token {token} outside vocabulary of size {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
