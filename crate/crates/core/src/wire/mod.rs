//! Length-prefixed message framing shared by the controller, daemons, the
//! storage manager and the logging service.
//!
//! Every frame is a 4-byte big-endian payload length followed by a JSON
//! envelope `{"kind": ..., "correlation_id": ..., "body": ...}`. Binary
//! fields (transfer chunks) are base64 strings inside the body. See
//! `docs/wire-protocol.md` in the repository for the byte-level contract.

mod codec;
mod message;
pub mod transport;

pub use codec::{Codec, DEFAULT_CHUNK_SIZE, DEFAULT_MAX_MESSAGE};
pub use message::*;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("message of {size} bytes exceeds the {max} byte limit")]
    OversizeMessage { size: usize, max: usize },
    #[error("incomplete frame: need {needed} bytes, have {available}")]
    IncompleteFrame { needed: usize, available: usize },
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("unknown message kind `{0}`")]
    UnknownKind(String),
    #[error("remote error [{code}]: {message}")]
    Remote { code: String, message: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("connection to {address} failed: {source}")]
    Connect { address: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl WireError {
    pub fn is_remote(&self, code: &str) -> bool {
        matches!(self, WireError::Remote { code: c, .. } if c == code)
    }
}
