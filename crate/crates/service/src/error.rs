use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] rasp_core::Error),

    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),

    #[error("protocol version {got} not supported (this build speaks {want})")]
    VersionMismatch { got: u8, want: u8 },

    #[error("malformed wire frame: {0}")]
    Decode(String),

    #[error("unexpected message: {0}")]
    Protocol(String),

    #[error("server error {code}: {message}")]
    Remote { code: u32, message: String },

    #[error("bad file format: {0}")]
    FileFormat(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("ingest error: {0}")]
    Ingest(String),

    #[error("unknown column {0}")]
    UnknownColumn(String),

    #[error("unknown category {value} for column {column}")]
    UnknownCategory { column: String, value: String },

    #[error("filter syntax error: {0}")]
    Filter(String),
}
