//! `length (4, BE) | type (1) | round (4, BE) | sender (2, BE) | payload`.
//!
//! `length` counts every byte after itself.

use std::fmt;
use std::io::Read;

use super::{ChannelError, PartyId};

/// Bytes after the length field that are not payload.
pub const HEADER_LEN: usize = 7;
const MAX_PAYLOAD: usize = (1 << 31) - 1 - HEADER_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MessageType {
    Hello = 0x01,
    PubKey = 0x02,
    EncSecret = 0x03,
    LocalUpdate = 0x04,
    GlobalEnc = 0x05,
    GlobalUpdate = 0x06,
    RoundBegin = 0x07,
    RoundEnd = 0x08,
    Abort = 0x09,
}

impl MessageType {
    pub const ALL: [MessageType; 9] = [
        MessageType::Hello,
        MessageType::PubKey,
        MessageType::EncSecret,
        MessageType::LocalUpdate,
        MessageType::GlobalEnc,
        MessageType::GlobalUpdate,
        MessageType::RoundBegin,
        MessageType::RoundEnd,
        MessageType::Abort,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self, ChannelError> {
        MessageType::ALL
            .get((code as usize).wrapping_sub(1))
            .copied()
            .ok_or(ChannelError::UnknownType(code))
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageType::Hello => "HELLO",
            MessageType::PubKey => "PUBKEY",
            MessageType::EncSecret => "ENC_SECRET",
            MessageType::LocalUpdate => "LOCAL_UPDATE",
            MessageType::GlobalEnc => "GLOBAL_ENC",
            MessageType::GlobalUpdate => "GLOBAL_UPDATE",
            MessageType::RoundBegin => "ROUND_BEGIN",
            MessageType::RoundEnd => "ROUND_END",
            MessageType::Abort => "ABORT",
        }
    }
}

impl fmt::Display for MessageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MessageType,
    pub round: u32,
    pub sender: PartyId,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MessageType, round: u32, sender: PartyId, payload: Vec<u8>) -> Self {
        Frame {
            msg_type,
            round,
            sender,
            payload,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, ChannelError> {
        frame_encode(self.msg_type, self.round, self.sender, &self.payload)
    }

    /// Size on the wire.
    pub fn wire_len(&self) -> usize {
        4 + HEADER_LEN + self.payload.len()
    }
}

pub fn frame_encode(
    msg_type: MessageType,
    round: u32,
    sender: PartyId,
    payload: &[u8],
) -> Result<Vec<u8>, ChannelError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(ChannelError::PayloadTooLarge(payload.len()));
    }
    let mut out = Vec::with_capacity(4 + HEADER_LEN + payload.len());
    out.extend_from_slice(&((HEADER_LEN + payload.len()) as u32).to_be_bytes());
    out.push(msg_type.code());
    out.extend_from_slice(&round.to_be_bytes());
    out.extend_from_slice(&sender.to_be_bytes());
    out.extend_from_slice(payload);
    Ok(out)
}

fn parse_body(body: &[u8]) -> Result<Frame, ChannelError> {
    Ok(Frame {
        msg_type: MessageType::from_code(body[0])?,
        round: u32::from_be_bytes(body[1..5].try_into().unwrap()),
        sender: u16::from_be_bytes(body[5..7].try_into().unwrap()),
        payload: body[HEADER_LEN..].to_vec(),
    })
}

fn body_len(prefix: [u8; 4]) -> Result<usize, ChannelError> {
    let len = u32::from_be_bytes(prefix) as usize;
    if len < HEADER_LEN {
        return Err(ChannelError::Malformed(format!("frame length {len} below header size")));
    }
    if len > MAX_PAYLOAD + HEADER_LEN {
        return Err(ChannelError::PayloadTooLarge(len - HEADER_LEN));
    }
    Ok(len)
}

/// Decodes the first frame of `bytes`, returning it and the bytes consumed.
pub fn frame_decode(bytes: &[u8]) -> Result<(Frame, usize), ChannelError> {
    let prefix: [u8; 4] = bytes.get(..4).ok_or(ChannelError::Truncated)?.try_into().unwrap();
    let len = body_len(prefix)?;
    let body = bytes.get(4..4 + len).ok_or(ChannelError::Truncated)?;
    Ok((parse_body(body)?, 4 + len))
}

/// Splits a byte stream into frames; trailing partial data is an error.
pub fn decode_stream(mut bytes: &[u8]) -> Result<Vec<Frame>, ChannelError> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        let (f, used) = frame_decode(bytes)?;
        out.push(f);
        bytes = &bytes[used..];
    }
    Ok(out)
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Frame>, ChannelError> {
    let mut prefix = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut prefix[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(ChannelError::Truncated),
            Ok(n) => got += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = body_len(prefix)?;
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => ChannelError::Truncated,
        _ => e.into(),
    })?;
    parse_body(&body).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_empty_hello_is_11_bytes() {
        let b = frame_encode(MessageType::Hello, 0, 0, &[]).unwrap();
        assert_eq!(b, vec![0, 0, 0, 7, 1, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn test_layout() {
        let b = frame_encode(MessageType::Abort, 0x01020304, 0x0506, b"xy").unwrap();
        assert_eq!(b, vec![0, 0, 0, 9, 9, 1, 2, 3, 4, 5, 6, b'x', b'y']);
        let (f, used) = frame_decode(&b).unwrap();
        assert_eq!(used, 13);
        assert_eq!(f, Frame::new(MessageType::Abort, 0x01020304, 0x0506, b"xy".to_vec()));
        assert_eq!(f.wire_len(), 13);
    }

    #[test]
    fn test_type_codes_in_order() {
        for (i, t) in MessageType::ALL.iter().enumerate() {
            assert_eq!(t.code() as usize, i + 1);
            assert_eq!(MessageType::from_code(t.code()).unwrap(), *t);
        }
        assert_eq!(MessageType::from_code(0), Err(ChannelError::UnknownType(0)));
        assert_eq!(MessageType::from_code(10), Err(ChannelError::UnknownType(10)));
    }

    #[test]
    fn test_two_frames_in_a_stream() {
        let mut s = frame_encode(MessageType::PubKey, 1, 2, b"abc").unwrap();
        s.extend(frame_encode(MessageType::RoundEnd, 1, 0, &[]).unwrap());
        let frames = decode_stream(&s).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[1].msg_type, MessageType::RoundEnd);
        assert_eq!(decode_stream(&s[..s.len() - 1]), Err(ChannelError::Truncated));
        let mut cur = std::io::Cursor::new(s);
        assert!(read_frame(&mut cur).unwrap().is_some());
        assert!(read_frame(&mut cur).unwrap().is_some());
        assert!(read_frame(&mut cur).unwrap().is_none());
    }

    #[test]
    fn test_errors() {
        assert_eq!(frame_decode(&[0, 0]), Err(ChannelError::Truncated));
        assert!(matches!(frame_decode(&[0, 0, 0, 3, 1, 0, 0]), Err(ChannelError::Malformed(_))));
        assert_eq!(
            frame_decode(&[0, 0, 0, 7, 0x0a, 0, 0, 0, 0, 0, 0]),
            Err(ChannelError::UnknownType(0x0a))
        );
    }
}
