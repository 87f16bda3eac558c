use thiserror::Error;

use crate::address::Address;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid chain data: {0}")]
    InvalidChainData(String),

    #[error("stream order violation: expected block {expected}, got {got}")]
    StreamOrder { expected: u64, got: u64 },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("store is closed")]
    StoreClosed,

    #[error("block {requested} is beyond the last committed block ({})", last.map_or_else(|| "none".to_string(), |b| b.to_string()))]
    FutureBlock { requested: u64, last: Option<u64> },

    #[error("seed {0} has no history in the store")]
    SeedNotFound(Address),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported bridge scheme {0:?}")]
    UnsupportedScheme(String),

    #[error("payload error: {0}")]
    Payload(String),

    #[error("descriptor error: {0}")]
    Descriptor(String),

    #[error("storage error: {0}")]
    Storage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

macro_rules! storage_error_from {
    ($($ty:ty),* $(,)?) => {
        $(impl From<$ty> for Error {
            fn from(e: $ty) -> Self {
                Error::Storage(e.to_string())
            }
        })*
    };
}

storage_error_from!(
    redb::Error,
    redb::DatabaseError,
    redb::TransactionError,
    redb::TableError,
    redb::StorageError,
    redb::CommitError,
    redb::SetDurabilityError,
);
