use crate::{CodecError, Encoding, Op, WireFrame};

/// Highest protocol version this build speaks.
pub const PROTOCOL_VERSION: u32 = 1;

/// What one side of a connection supports.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerCaps {
    pub versions: Vec<u32>,
    pub encodings: Vec<Encoding>,
}

impl Default for ServerCaps {
    fn default() -> Self {
        Self {
            versions: vec![PROTOCOL_VERSION],
            encodings: vec![Encoding::Cbor, Encoding::Json],
        }
    }
}

/// Parameters agreed for the remainder of a connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionParams {
    pub encoding: Encoding,
    pub protocol_version: u32,
}

impl SessionParams {
    /// Peers that open with something other than hello.
    pub const LEGACY: SessionParams = SessionParams {
        encoding: Encoding::Json,
        protocol_version: 1,
    };

    /// The server's answer to a hello, naming the chosen parameters.
    pub fn to_reply(self) -> WireFrame {
        let mut reply = WireFrame::hello(vec![self.protocol_version], vec![self.encoding], None);
        reply.encoding_hint = Some(self.encoding);
        reply
    }

    /// Reads a server reply produced by [`SessionParams::to_reply`].
    pub fn from_reply(reply: &WireFrame) -> Result<Self, CodecError> {
        if reply.op != Op::Hello {
            return Err(CodecError::VersionMismatch);
        }
        let version = reply
            .versions
            .as_deref()
            .and_then(|v| v.first().copied())
            .ok_or(CodecError::VersionMismatch)?;
        let encoding = reply
            .encoding_hint
            .or_else(|| reply.encodings.as_deref().and_then(|e| e.first().copied()))
            .ok_or(CodecError::VersionMismatch)?;
        Ok(Self {
            encoding,
            protocol_version: version,
        })
    }
}

/// Settles session parameters from the first frame a peer sent.
///
/// The highest common version wins; the encoding is the first entry of the
/// peer's preference list the server also supports. A first frame that is not
/// hello selects the legacy v1/JSON session.
pub fn negotiate(first: &WireFrame, server: &ServerCaps) -> Result<SessionParams, CodecError> {
    if first.op != Op::Hello {
        return Ok(SessionParams::LEGACY);
    }
    let offered_versions = first.versions.as_deref().unwrap_or_default();
    let version = offered_versions
        .iter()
        .copied()
        .filter(|v| server.versions.contains(v))
        .max()
        .ok_or(CodecError::VersionMismatch)?;
    let encoding = first
        .encodings
        .as_deref()
        .unwrap_or_default()
        .iter()
        .copied()
        .find(|e| server.encodings.contains(e))
        .ok_or(CodecError::VersionMismatch)?;
    Ok(SessionParams {
        encoding,
        protocol_version: version,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use msggraph::Value;

    #[test]
    fn picks_intersection() {
        let hello = WireFrame::hello(vec![1], vec![Encoding::Cbor, Encoding::Json], None);
        let server = ServerCaps {
            versions: vec![1],
            encodings: vec![Encoding::Cbor],
        };
        assert_eq!(
            negotiate(&hello, &server),
            Ok(SessionParams {
                encoding: Encoding::Cbor,
                protocol_version: 1
            })
        );
    }

    #[test]
    fn client_preference_order_wins() {
        let hello = WireFrame::hello(vec![1, 2], vec![Encoding::Json, Encoding::Cbor], None);
        let server = ServerCaps {
            versions: vec![1, 2, 3],
            encodings: vec![Encoding::Cbor, Encoding::Json],
        };
        let p = negotiate(&hello, &server).unwrap();
        assert_eq!((p.encoding, p.protocol_version), (Encoding::Json, 2));
    }

    #[test]
    fn disjoint_sets_mismatch() {
        let hello = WireFrame::hello(vec![1], vec![Encoding::Json], None);
        let server = ServerCaps {
            versions: vec![1],
            encodings: vec![Encoding::Cbor],
        };
        assert_eq!(negotiate(&hello, &server), Err(CodecError::VersionMismatch));
        let hello = WireFrame::hello(vec![7], vec![Encoding::Cbor], None);
        assert_eq!(
            negotiate(&hello, &ServerCaps::default()),
            Err(CodecError::VersionMismatch)
        );
    }

    #[test]
    fn missing_hello_is_legacy() {
        let first = WireFrame::publish("/x", Value::Null);
        assert_eq!(
            negotiate(&first, &ServerCaps::default()),
            Ok(SessionParams::LEGACY)
        );
    }

    #[test]
    fn reply_round_trips() {
        let p = SessionParams {
            encoding: Encoding::Cbor,
            protocol_version: 1,
        };
        assert_eq!(SessionParams::from_reply(&p.to_reply()), Ok(p));
    }
}
