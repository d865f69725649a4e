use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("tone at {offset_hz} Hz lies outside the code spectrum span of +/-{span_hz} Hz")]
    OutOfSpan { offset_hz: f64, span_hz: f64 },

    /// The mesoband expectation model only applies once the noise covers at
    /// least one spectral line spacing.
    #[error("mesoband model needs at least 1 kHz of bandwidth, got {bandwidth_hz} Hz; treat the noise as CWI")]
    NotMesoband { bandwidth_hz: f64 },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("no capture points remain inside the analysis band")]
    EmptyBand,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
