//! Length-prefixed frames exchanged between nodes.
//!
//! A frame is a 4-byte big-endian payload length followed by the canonical
//! JSON payload `{v, kind, node, instance?, envelope?, ack_seq?, reason?, body?}`.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};
use uuid::Uuid;

use crate::envelope::Envelope;
use sbpm_core::canonical;

pub const PROTOCOL_VERSION: u32 = 1;
pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FrameKind {
    Hello,
    HelloAck,
    Msg,
    Ack,
    Nack,
    Ping,
    Pong,
    /// Start the local part of an instance.
    Spawn,
    /// A record produced on a non-coordinator node.
    Event,
    /// A task completion for a subject hosted on the receiving node.
    Task,
    /// Drop the local part of a finished instance.
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub v: u32,
    pub kind: FrameKind,
    /// Sending node.
    pub node: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<Uuid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope: Option<Envelope>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ack_seq: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<Value>,
}

impl Frame {
    pub fn new(kind: FrameKind, node: impl Into<String>) -> Self {
        Frame {
            v: PROTOCOL_VERSION,
            kind,
            node: node.into(),
            instance: None,
            envelope: None,
            ack_seq: None,
            reason: None,
            body: None,
        }
    }

    pub fn instance(mut self, id: Uuid) -> Self {
        self.instance = Some(id);
        self
    }

    pub fn envelope(mut self, env: Envelope) -> Self {
        self.envelope = Some(env);
        self
    }

    pub fn ack_seq(mut self, seq: u64) -> Self {
        self.ack_seq = Some(seq);
        self
    }

    pub fn reason(mut self, reason: impl Into<String>) -> Self {
        self.reason = Some(reason.into());
        self
    }

    pub fn body(mut self, body: Value) -> Self {
        self.body = Some(body);
        self
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("frame of {0} bytes exceeds the 16 MiB limit")]
    FrameTooLarge(usize),
    #[error("bad frame JSON: {0}")]
    BadJson(String),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u64),
    #[error("truncated frame: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub fn encode_frame(f: &Frame) -> Result<Vec<u8>, WireError> {
    let payload = canonical::to_vec(f).map_err(|e| WireError::BadJson(e.to_string()))?;
    if payload.len() > MAX_FRAME_LEN {
        return Err(WireError::FrameTooLarge(payload.len()));
    }
    let mut out = Vec::with_capacity(payload.len() + 4);
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

fn parse_payload(payload: &[u8]) -> Result<Frame, WireError> {
    let value: Value = serde_json::from_slice(payload).map_err(|e| WireError::BadJson(e.to_string()))?;
    match value.get("v").and_then(Value::as_u64) {
        Some(v) if v == PROTOCOL_VERSION as u64 => {}
        Some(v) => return Err(WireError::UnsupportedVersion(v)),
        None => return Err(WireError::BadJson("missing protocol version".into())),
    }
    serde_json::from_value(value).map_err(|e| WireError::BadJson(e.to_string()))
}

fn declared_len(header: [u8; 4]) -> Result<usize, WireError> {
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_FRAME_LEN {
        return Err(WireError::FrameTooLarge(len));
    }
    Ok(len)
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame, WireError> {
    if bytes.len() < 4 {
        return Err(WireError::Truncated { need: 4, have: bytes.len() });
    }
    let len = declared_len([bytes[0], bytes[1], bytes[2], bytes[3]])?;
    if bytes.len() - 4 < len {
        return Err(WireError::Truncated {
            need: len + 4,
            have: bytes.len(),
        });
    }
    parse_payload(&bytes[4..4 + len])
}

/// Reads one frame. Returns `Ok(None)` on a clean end of stream.
pub async fn read_frame<R: AsyncRead + Unpin>(r: &mut R) -> Result<Option<Frame>, WireError> {
    let mut header = [0u8; 4];
    match r.read_exact(&mut header).await {
        Ok(_) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = declared_len(header)?;
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload).await?;
    parse_payload(&payload).map(Some)
}

pub async fn write_frame<W: AsyncWrite + Unpin>(w: &mut W, f: &Frame) -> Result<(), WireError> {
    let bytes = encode_frame(f)?;
    w.write_all(&bytes).await?;
    w.flush().await?;
    Ok(())
}
