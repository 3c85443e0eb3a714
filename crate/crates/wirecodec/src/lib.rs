//! Wire protocol spoken between ducts, cloud clients and the bridge.
//!
//! A [`WireFrame`] is one protocol operation. Frames travel one per websocket
//! message, either as a UTF-8 JSON object or as a definite-length CBOR map.
//! Both encodings are lossless for every valid frame, so
//! `decode(encode(f, e), e) == f` for `e` in `{Json, Cbor}`.

mod cbor;
mod error;
mod frame;
mod json;
mod negotiate;
#[cfg(any(test, feature = "testgen"))]
pub mod testgen;

pub use error::CodecError;
pub use frame::{Encoding, Op, StatusLevel, WireFrame};
pub use negotiate::{negotiate, ServerCaps, SessionParams, PROTOCOL_VERSION};

use msggraph::Value;

/// Deepest payload nesting either codec accepts.
pub const MAX_DEPTH: usize = 64;

/// Largest integer magnitude representable exactly as a JSON number.
pub const JSON_SAFE_INT: i64 = 1 << 53;

/// Text of the error status a server sends before closing a connection whose
/// credentials it rejected.
pub const AUTH_FAILED_TEXT: &str = "authentication failed";

/// Encoded bytes tagged with their encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedFrame {
    pub encoding: Encoding,
    pub bytes: Vec<u8>,
}

impl EncodedFrame {
    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

/// Validates and encodes one frame. Output is deterministic: map keys are
/// written in sorted order.
pub fn encode(frame: &WireFrame, encoding: Encoding) -> Result<EncodedFrame, CodecError> {
    frame.validate()?;
    let value = frame.to_value();
    let bytes = match encoding {
        Encoding::Json => json::encode_value(&value)?,
        Encoding::Cbor => cbor::encode_value(&value)?,
    };
    Ok(EncodedFrame { encoding, bytes })
}

/// Decodes one frame. Never panics; every failure is a structured error.
pub fn decode(bytes: &[u8], encoding: Encoding) -> Result<WireFrame, CodecError> {
    let value = decode_value(bytes, encoding)?;
    WireFrame::from_value(value)
}

/// Encodes a bare payload tree.
pub fn encode_value(value: &Value, encoding: Encoding) -> Result<Vec<u8>, CodecError> {
    match encoding {
        Encoding::Json => json::encode_value(value),
        Encoding::Cbor => cbor::encode_value(value),
    }
}

pub fn decode_value(bytes: &[u8], encoding: Encoding) -> Result<Value, CodecError> {
    match encoding {
        Encoding::Json => json::decode_value(bytes),
        Encoding::Cbor => cbor::decode_value(bytes),
    }
}
