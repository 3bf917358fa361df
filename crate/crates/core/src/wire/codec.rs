use serde::{Deserialize, Serialize};

use super::{Body, Message, MessageKind, WireError};

pub const DEFAULT_MAX_MESSAGE: usize = 64 * 1024 * 1024;
pub const DEFAULT_CHUNK_SIZE: usize = 4 * 1024 * 1024;

const PREFIX: usize = 4;

#[derive(Serialize)]
struct EnvelopeOut<'a> {
    kind: &'a str,
    correlation_id: u64,
    body: serde_json::Value,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvelopeIn {
    kind: String,
    correlation_id: u64,
    body: serde_json::Value,
}

/// Frame encoder/decoder with a payload size limit.
#[derive(Debug, Clone, Copy)]
pub struct Codec {
    pub max_message: usize,
}

impl Default for Codec {
    fn default() -> Self {
        Codec { max_message: DEFAULT_MAX_MESSAGE }
    }
}

impl Codec {
    pub fn with_max(max_message: usize) -> Self {
        Codec { max_message }
    }

    /// Encodes one message as a complete frame. Equal messages give equal bytes.
    pub fn encode(&self, message: &Message) -> Result<Vec<u8>, WireError> {
        let body = message.body.to_value().map_err(|e| WireError::MalformedPayload(e.to_string()))?;
        let envelope = EnvelopeOut { kind: message.kind().as_str(), correlation_id: message.correlation_id, body };
        let payload = serde_json::to_vec(&envelope).map_err(|e| WireError::MalformedPayload(e.to_string()))?;
        if payload.len() > self.max_message || payload.len() > u32::MAX as usize {
            return Err(WireError::OversizeMessage { size: payload.len(), max: self.max_message });
        }
        let mut frame = Vec::with_capacity(PREFIX + payload.len());
        frame.extend_from_slice(&(payload.len() as u32).to_be_bytes());
        frame.extend_from_slice(&payload);
        Ok(frame)
    }

    /// Decodes the first frame in `bytes`, returning the message and the number
    /// of bytes it occupied. Nothing past the announced length is read.
    pub fn decode(&self, bytes: &[u8]) -> Result<(Message, usize), WireError> {
        let len = self.frame_length(bytes)?;
        if bytes.len() < PREFIX + len {
            return Err(WireError::IncompleteFrame { needed: PREFIX + len, available: bytes.len() });
        }
        let message = self.decode_payload(&bytes[PREFIX..PREFIX + len])?;
        Ok((message, PREFIX + len))
    }

    /// Reads and checks the length prefix.
    pub fn frame_length(&self, bytes: &[u8]) -> Result<usize, WireError> {
        if bytes.len() < PREFIX {
            return Err(WireError::IncompleteFrame { needed: PREFIX, available: bytes.len() });
        }
        let len = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
        if len == 0 {
            return Err(WireError::MalformedPayload("zero-length frame".into()));
        }
        if len > self.max_message {
            return Err(WireError::OversizeMessage { size: len, max: self.max_message });
        }
        Ok(len)
    }

    pub fn decode_payload(&self, payload: &[u8]) -> Result<Message, WireError> {
        let envelope: EnvelopeIn =
            serde_json::from_slice(payload).map_err(|e| WireError::MalformedPayload(e.to_string()))?;
        let kind = MessageKind::from_name(&envelope.kind).ok_or(WireError::UnknownKind(envelope.kind))?;
        let body = Body::from_value(kind, envelope.body).map_err(|e| WireError::MalformedPayload(e.to_string()))?;
        Ok(Message { correlation_id: envelope.correlation_id, body })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::{Ack, TransferChunk};

    #[test]
    fn ack_roundtrip() {
        let codec = Codec::default();
        let frame = codec.encode(&Message::new(7, Ack::default())).unwrap();
        let (msg, used) = codec.decode(&frame).unwrap();
        assert_eq!(msg.kind(), MessageKind::Ack);
        assert_eq!(msg.correlation_id, 7);
        assert_eq!(used, frame.len());
    }

    #[test]
    fn oversize_payload_is_rejected() {
        let data = vec![0u8; 70 * 1024 * 1024];
        let msg = Message::new(1, TransferChunk { item_id: "x".into(), seq: 0, data });
        assert!(matches!(Codec::default().encode(&msg), Err(WireError::OversizeMessage { .. })));
    }

    #[test]
    fn short_and_empty_frames() {
        let codec = Codec::default();
        let mut bytes = 100u32.to_be_bytes().to_vec();
        bytes.extend(std::iter::repeat_n(b' ', 50));
        assert!(matches!(
            codec.decode(&bytes),
            Err(WireError::IncompleteFrame { needed: 104, available: 54 })
        ));
        assert!(matches!(codec.decode(&[0, 0, 0, 0]), Err(WireError::MalformedPayload(_))));
        assert!(matches!(codec.decode(&[0, 0]), Err(WireError::IncompleteFrame { .. })));
    }

    #[test]
    fn concatenated_frames_decode_one_at_a_time() {
        let codec = Codec::default();
        let first = codec.encode(&Message::new(1, Ack { detail: Some("one".into()) })).unwrap();
        let second = codec.encode(&Message::new(2, Ack::default())).unwrap();
        let joined = [first.clone(), second].concat();
        let (msg, used) = codec.decode(&joined).unwrap();
        assert_eq!(msg.correlation_id, 1);
        assert_eq!(used, first.len());
        let (msg, _) = codec.decode(&joined[used..]).unwrap();
        assert_eq!(msg.correlation_id, 2);
    }

    #[test]
    fn unknown_kind_is_rejected() {
        let payload = br#"{"kind":"Gossip","correlation_id":1,"body":{}}"#;
        let mut frame = (payload.len() as u32).to_be_bytes().to_vec();
        frame.extend_from_slice(payload);
        assert!(matches!(Codec::default().decode(&frame), Err(WireError::UnknownKind(k)) if k == "Gossip"));
    }

    #[test]
    fn body_mismatching_kind_is_malformed() {
        let payload = br#"{"kind":"Promote","correlation_id":1,"body":{"nope":1}}"#;
        let mut frame = (payload.len() as u32).to_be_bytes().to_vec();
        frame.extend_from_slice(payload);
        assert!(matches!(Codec::default().decode(&frame), Err(WireError::MalformedPayload(_))));
    }
}
