//! Message format and framing.
//!
//! Every message on every transport is encoded as
//!
//! ```text
//! +----------------+-----------------------+-------------------+---------+
//! | length: u32 LE | object id: u64 LE     | component id: u16 | payload |
//! +----------------+-----------------------+-------------------+---------+
//! ```
//!
//! `length` counts the bytes after the length field, so the smallest legal
//! value is 10 (an address with an empty payload).

use std::fmt;

use bytes::{Buf, BufMut, Bytes, BytesMut};
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Bytes taken by the length field.
pub const LENGTH_BYTES: usize = 4;
/// Bytes taken by the two-part address.
pub const ADDRESS_BYTES: usize = 10;
/// Total framing overhead of a message.
pub const PREFIX_BYTES: usize = LENGTH_BYTES + ADDRESS_BYTES;
/// Largest legal value of the length field (1 MiB).
pub const MAX_LENGTH: usize = 1 << 20;
/// Largest payload that fits under [`MAX_LENGTH`].
pub const MAX_PAYLOAD: usize = MAX_LENGTH - ADDRESS_BYTES;
/// Object ids at or below this value are reserved for system services.
pub const MAX_RESERVED_ID: u64 = 255;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum WireError {
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD} byte cap")]
    Oversize(usize),
    #[error("malformed stream: length field {0} outside 10..={MAX_LENGTH}")]
    BadLength(u32),
    #[error("invalid address: {0}")]
    InvalidAddress(&'static str),
    #[error("text object: {0}")]
    Text(String),
}

/// Object half of an address. Zero is never addressable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NetworkId(u64);

impl NetworkId {
    pub const fn new(value: u64) -> Option<Self> {
        if value == 0 {
            None
        } else {
            Some(Self(value))
        }
    }

    /// For compile-time constants. Panics on zero.
    pub const fn reserved(value: u64) -> Self {
        assert!(value != 0 && value <= MAX_RESERVED_ID);
        Self(value)
    }

    pub const fn get(self) -> u64 {
        self.0
    }

    pub const fn is_reserved(self) -> bool {
        self.0 <= MAX_RESERVED_ID
    }

    /// Uniformly random id above the reserved range.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self(rng.gen_range(MAX_RESERVED_ID + 1..=u64::MAX))
    }
}

impl fmt::Display for NetworkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

/// Mints a fresh object id from `rng`.
pub fn generate_network_id<R: Rng + ?Sized>(rng: &mut R) -> NetworkId {
    NetworkId::random(rng)
}

/// Component half of an address. Zero is invalid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ComponentId(u16);

impl ComponentId {
    pub const fn new(value: u16) -> Option<Self> {
        if value == 0 {
            None
        } else {
            Some(Self(value))
        }
    }

    pub const fn constant(value: u16) -> Self {
        assert!(value != 0);
        Self(value)
    }

    pub const fn get(self) -> u16 {
        self.0
    }
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Address {
    pub object: NetworkId,
    pub component: ComponentId,
}

impl Address {
    pub const fn new(object: NetworkId, component: ComponentId) -> Self {
        Self { object, component }
    }

    fn read(mut buf: &[u8]) -> Result<Self, WireError> {
        let object = NetworkId::new(buf.get_u64_le()).ok_or(WireError::InvalidAddress("object id 0"))?;
        let component = ComponentId::new(buf.get_u16_le()).ok_or(WireError::InvalidAddress("component id 0"))?;
        Ok(Self { object, component })
    }

    fn write(&self, buf: &mut impl BufMut) {
        buf.put_u64_le(self.object.get());
        buf.put_u16_le(self.component.get());
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.object, self.component)
    }
}

/// Addresses agreed between every peer and the server ahead of time.
pub mod well_known {
    use super::{Address, ComponentId, NetworkId};

    pub const ROOM_SERVER_OBJECT: NetworkId = NetworkId::reserved(1);
    /// Reply address for connections that never told the server their scene id.
    pub const ANONYMOUS_CLIENT_OBJECT: NetworkId = NetworkId::reserved(2);
    pub const LOG_SERVICE_OBJECT: NetworkId = NetworkId::reserved(3);
    pub const SPAWNER_OBJECT: NetworkId = NetworkId::reserved(4);
    pub const BOIDS_OBJECT: NetworkId = NetworkId::reserved(5);

    pub const ROOM_SERVER: ComponentId = ComponentId::constant(1);
    pub const ROOM_CLIENT: ComponentId = ComponentId::constant(2);
    pub const LATENCY: ComponentId = ComponentId::constant(3);
    pub const LOG: ComponentId = ComponentId::constant(4);
    pub const SPAWNER: ComponentId = ComponentId::constant(5);
    pub const AVATAR: ComponentId = ComponentId::constant(10);
    pub const BOIDS: ComponentId = ComponentId::constant(11);

    pub const ROOM_SERVER_ADDRESS: Address = Address::new(ROOM_SERVER_OBJECT, ROOM_SERVER);
    pub const ANONYMOUS_CLIENT_ADDRESS: Address = Address::new(ANONYMOUS_CLIENT_OBJECT, ROOM_CLIENT);
    pub const LOG_ANNOUNCE_ADDRESS: Address = Address::new(LOG_SERVICE_OBJECT, LOG);
    pub const SPAWNER_ADDRESS: Address = Address::new(SPAWNER_OBJECT, SPAWNER);
    pub const BOIDS_ADDRESS: Address = Address::new(BOIDS_OBJECT, BOIDS);
}

/// A decoded message: where it goes and what it carries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub address: Address,
    pub payload: Bytes,
}

impl WireMessage {
    pub fn new(address: Address, payload: impl Into<Bytes>) -> Result<Self, WireError> {
        let payload = payload.into();
        if payload.len() > MAX_PAYLOAD {
            return Err(WireError::Oversize(payload.len()));
        }
        Ok(Self { address, payload })
    }

    /// Value of the length field.
    pub fn length(&self) -> u32 {
        (ADDRESS_BYTES + self.payload.len()) as u32
    }

    pub fn encoded_len(&self) -> usize {
        PREFIX_BYTES + self.payload.len()
    }

    pub fn encode(&self) -> Result<Bytes, WireError> {
        encode(self)
    }
}

/// Serializes `msg` as length, object id, component id, payload.
pub fn encode(msg: &WireMessage) -> Result<Bytes, WireError> {
    if msg.payload.len() > MAX_PAYLOAD {
        return Err(WireError::Oversize(msg.payload.len()));
    }
    let mut buf = BytesMut::with_capacity(msg.encoded_len());
    buf.put_u32_le(msg.length());
    msg.address.write(&mut buf);
    buf.extend_from_slice(&msg.payload);
    Ok(buf.freeze())
}

/// One complete encoded message, kept as the exact bytes that arrived.
///
/// The relay forwards frames without touching anything past the prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    bytes: Bytes,
    address: Address,
}

impl Frame {
    pub fn from_message(msg: &WireMessage) -> Result<Self, WireError> {
        Ok(Self { bytes: encode(msg)?, address: msg.address })
    }

    pub fn address(&self) -> Address {
        self.address
    }

    pub fn bytes(&self) -> &Bytes {
        &self.bytes
    }

    pub fn into_bytes(self) -> Bytes {
        self.bytes
    }

    pub fn payload(&self) -> Bytes {
        self.bytes.slice(PREFIX_BYTES..)
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn to_message(&self) -> WireMessage {
        WireMessage { address: self.address, payload: self.payload() }
    }
}

/// Incremental reframer for a byte stream of concatenated messages.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: BytesMut,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, data: &[u8]) {
        self.buf.extend_from_slice(data);
    }

    /// Bytes received but not yet forming a complete frame.
    pub fn pending(&self) -> &[u8] {
        &self.buf
    }

    /// Next complete frame, `Ok(None)` if more bytes are needed. Any error is
    /// fatal for the stream.
    pub fn next_frame(&mut self) -> Result<Option<Frame>, WireError> {
        if self.buf.len() < LENGTH_BYTES {
            return Ok(None);
        }
        let length = u32::from_le_bytes(self.buf[..LENGTH_BYTES].try_into().expect("4 bytes"));
        if (length as usize) < ADDRESS_BYTES || length as usize > MAX_LENGTH {
            return Err(WireError::BadLength(length));
        }
        let total = LENGTH_BYTES + length as usize;
        if self.buf.len() < total {
            self.buf.reserve(total - self.buf.len());
            return Ok(None);
        }
        let address = Address::read(&self.buf[LENGTH_BYTES..PREFIX_BYTES])?;
        let bytes = self.buf.split_to(total).freeze();
        Ok(Some(Frame { bytes, address }))
    }
}

/// Splits `buffer` into every complete message it holds plus the unconsumed tail.
pub fn decode_stream(buffer: &[u8]) -> Result<(Vec<WireMessage>, Vec<u8>), WireError> {
    let mut decoder = FrameDecoder::new();
    decoder.push(buffer);
    let mut out = Vec::new();
    while let Some(frame) = decoder.next_frame()? {
        out.push(frame.to_message());
    }
    Ok((out, decoder.pending().to_vec()))
}

/// JSON text encoding for payloads that carry structured records.
pub fn to_text_object<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, WireError> {
    serde_json::to_vec(value).map_err(|e| WireError::Text(e.to_string()))
}

pub fn from_text_object<T: DeserializeOwned>(payload: &[u8]) -> Result<T, WireError> {
    let text = std::str::from_utf8(payload).map_err(|e| WireError::Text(e.to_string()))?;
    serde_json::from_str(text).map_err(|e| WireError::Text(e.to_string()))
}
