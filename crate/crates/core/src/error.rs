use thiserror::Error;

use crate::protocol::PacketError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("not found: {0}")]
    NotFound(String),

    #[error("shape mismatch: {what} expected {expected}, got {actual}")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("degenerate robot: {0}")]
    DegenerateRobot(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("packet error: {0}")]
    Packet(#[from] PacketError),

    #[error("transport disconnected")]
    Disconnected,

    #[error("record schema version mismatch: expected {expected}, found {found}")]
    Version { expected: u32, found: u32 },

    #[error("truncated record file: {0}")]
    Truncated(String),

    #[error("episode contains no records")]
    EmptyEpisode,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(what: &'static str, expected: usize, actual: usize) -> Self {
        Error::Shape {
            what,
            expected,
            actual,
        }
    }
}
