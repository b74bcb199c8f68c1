//! Wire messages and their plaintext payload bodies.
//!
//! Frame layout: 1 byte kind, 16 bytes session id, 4-byte big-endian payload
//! length, payload. All payloads except `ERROR` are encrypted to the
//! recipient; `ERROR` carries the plaintext bytes `[sender role, reason]`.

use std::fmt;

use rand::RngCore;

use super::cipher::{CipherSuite, PublicKey, SecretKey};
use crate::error::{Error, Result};
use crate::multistate::StateWord;

pub const HEADER_LEN: usize = 1 + 16 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MessageKind {
    AuthRequestC1 = 1,
    DeviceResult = 2,
    ResponseR2 = 3,
    ServerResult = 4,
    Error = 5,
}

impl MessageKind {
    pub fn from_byte(b: u8) -> Result<Self> {
        Ok(match b {
            1 => Self::AuthRequestC1,
            2 => Self::DeviceResult,
            3 => Self::ResponseR2,
            4 => Self::ServerResult,
            5 => Self::Error,
            other => return Err(Error::Malformed(format!("unknown message kind {other}"))),
        })
    }

    /// Role that legitimately sends this kind; `None` for `Error`.
    pub fn natural_sender(self) -> Option<Role> {
        match self {
            Self::AuthRequestC1 | Self::ServerResult => Some(Role::Server),
            Self::DeviceResult | Self::ResponseR2 => Some(Role::Device),
            Self::Error => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Role {
    Server = 1,
    Device = 2,
    Adversary = 3,
}

impl Role {
    fn from_byte(b: u8) -> Result<Self> {
        Ok(match b {
            1 => Self::Server,
            2 => Self::Device,
            3 => Self::Adversary,
            other => return Err(Error::Malformed(format!("unknown role {other}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ErrorReason {
    Decrypt = 1,
    Replay = 2,
    ProtocolOrder = 3,
    Malformed = 4,
}

impl ErrorReason {
    fn from_byte(b: u8) -> Result<Self> {
        Ok(match b {
            1 => Self::Decrypt,
            2 => Self::Replay,
            3 => Self::ProtocolOrder,
            4 => Self::Malformed,
            other => return Err(Error::Malformed(format!("unknown error reason {other}"))),
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct SessionId(pub [u8; 16]);

impl SessionId {
    pub fn random(rng: &mut dyn RngCore) -> Self {
        let mut id = [0u8; 16];
        rng.fill_bytes(&mut id);
        Self(id)
    }

    /// Two 64-bit words, for seed derivation.
    pub fn words(&self) -> [u64; 2] {
        let (a, b) = self.0.split_at(8);
        [
            u64::from_be_bytes(a.try_into().expect("8 bytes")),
            u64::from_be_bytes(b.try_into().expect("8 bytes")),
        ]
    }
}

impl fmt::Debug for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SessionId({self})")
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolMessage {
    pub kind: MessageKind,
    pub session_id: SessionId,
    pub payload: Vec<u8>,
    /// Claimed sender; not part of the frame.
    pub sender: Role,
}

impl ProtocolMessage {
    pub fn error(session_id: SessionId, sender: Role, reason: ErrorReason) -> Self {
        Self { kind: MessageKind::Error, session_id, payload: vec![sender as u8, reason as u8], sender }
    }

    pub fn error_reason(&self) -> Option<ErrorReason> {
        match (self.kind, self.payload.as_slice()) {
            (MessageKind::Error, [_, reason]) => ErrorReason::from_byte(*reason).ok(),
            _ => None,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        self.encode_into(&mut out);
        out
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(self.kind as u8);
        out.extend_from_slice(&self.session_id.0);
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
    }

    /// Decodes one frame from the front of `bytes`, returning it and the
    /// number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize)> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Malformed("truncated header".into()));
        }
        let kind = MessageKind::from_byte(bytes[0])?;
        let session_id = SessionId(bytes[1..17].try_into().expect("16 bytes"));
        let len = u32::from_be_bytes(bytes[17..21].try_into().expect("4 bytes")) as usize;
        let end = HEADER_LEN
            .checked_add(len)
            .filter(|end| *end <= bytes.len())
            .ok_or_else(|| Error::Malformed("truncated payload".into()))?;
        let payload = bytes[HEADER_LEN..end].to_vec();
        let sender = match kind.natural_sender() {
            Some(role) => role,
            None => match payload.as_slice() {
                [role, reason] => {
                    ErrorReason::from_byte(*reason)?;
                    Role::from_byte(*role)?
                }
                _ => return Err(Error::Malformed("error payload must be 2 bytes".into())),
            },
        };
        Ok((Self { kind, session_id, payload, sender }, end))
    }
}

/// Serialized form of a state word inside payloads: `n_states` (u16 BE),
/// cell count (u32 BE), one byte per state.
pub fn state_word_bytes(word: &StateWord) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + word.len());
    out.extend_from_slice(&(word.n_states() as u16).to_be_bytes());
    out.extend_from_slice(&(word.len() as u32).to_be_bytes());
    out.extend_from_slice(word.states());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::Malformed("payload too short".into()));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn session(&mut self) -> Result<SessionId> {
        Ok(SessionId(self.take(16)?.try_into().expect("16 bytes")))
    }

    fn state_word(&mut self) -> Result<StateWord> {
        let n = self.u16()? as usize;
        let len = self.u32()? as usize;
        let states = self.take(len)?.to_vec();
        StateWord::new(n, states).map_err(|e| Error::Malformed(e.to_string()))
    }

    fn finish(self) -> Result<()> {
        if self.bytes.is_empty() {
            Ok(())
        } else {
            Err(Error::Malformed("trailing payload bytes".into()))
        }
    }
}

/// Step-1 payload: the stored first challenge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChallengeBody {
    pub session_id: SessionId,
    pub challenge: StateWord,
}

impl ChallengeBody {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.session_id.0.to_vec();
        out.extend_from_slice(&state_word_bytes(&self.challenge));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes };
        let body = Self { session_id: r.session()?, challenge: r.state_word()? };
        r.finish()?;
        Ok(body)
    }
}

/// Accept/reject verdict sent after either verification step.
#[derive(Debug, Clone, PartialEq)]
pub struct VerdictBody {
    pub session_id: SessionId,
    pub accepted: bool,
    pub distance: f64,
}

impl VerdictBody {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.session_id.0.to_vec();
        out.push(u8::from(self.accepted));
        out.extend_from_slice(&self.distance.to_be_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes };
        let session_id = r.session()?;
        let accepted = match r.u8()? {
            0 => false,
            1 => true,
            other => return Err(Error::Malformed(format!("verdict flag {other}"))),
        };
        let body = Self { session_id, accepted, distance: r.f64()? };
        r.finish()?;
        Ok(body)
    }
}

/// Step-2 payload: the second response plus the device's reported inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseBody {
    pub session_id: SessionId,
    pub inputs: Vec<f64>,
    pub response: StateWord,
}

impl ResponseBody {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.session_id.0.to_vec();
        out.push(self.inputs.len() as u8);
        for x in &self.inputs {
            out.extend_from_slice(&x.to_be_bytes());
        }
        out.extend_from_slice(&state_word_bytes(&self.response));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes };
        let session_id = r.session()?;
        let m = r.u8()? as usize;
        let inputs = (0..m).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let body = Self { session_id, inputs, response: r.state_word()? };
        r.finish()?;
        Ok(body)
    }
}

/// Encrypts `body` to `recipient` and frames it.
pub fn seal(
    cipher: &dyn CipherSuite,
    kind: MessageKind,
    session_id: SessionId,
    sender: Role,
    recipient: &PublicKey,
    body: &[u8],
    rng: &mut dyn RngCore,
) -> Result<ProtocolMessage> {
    Ok(ProtocolMessage { kind, session_id, payload: cipher.encrypt(recipient, body, rng)?, sender })
}

pub fn open(cipher: &dyn CipherSuite, secret: &SecretKey, msg: &ProtocolMessage) -> Result<Vec<u8>> {
    cipher.decrypt(secret, &msg.payload)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frame_layout_is_exact() {
        let msg = ProtocolMessage {
            kind: MessageKind::ResponseR2,
            session_id: SessionId([0xAB; 16]),
            payload: vec![1, 2, 3],
            sender: Role::Device,
        };
        let bytes = msg.encode();
        assert_eq!(bytes.len(), HEADER_LEN + 3);
        assert_eq!(bytes[0], 3);
        assert_eq!(&bytes[1..17], &[0xAB; 16]);
        assert_eq!(&bytes[17..21], &[0, 0, 0, 3]);
        assert_eq!(&bytes[21..], &[1, 2, 3]);
    }

    #[test]
    fn error_frames_carry_role() {
        let msg = ProtocolMessage::error(SessionId([1; 16]), Role::Device, ErrorReason::Replay);
        let (back, used) = ProtocolMessage::decode(&msg.encode()).unwrap();
        assert_eq!(used, HEADER_LEN + 2);
        assert_eq!(back, msg);
        assert_eq!(back.error_reason(), Some(ErrorReason::Replay));
    }

    #[test]
    fn malformed_frames() {
        assert!(ProtocolMessage::decode(&[1, 2, 3]).is_err());
        let mut bytes = ProtocolMessage::error(SessionId::default(), Role::Server, ErrorReason::Decrypt).encode();
        bytes[0] = 9;
        assert!(ProtocolMessage::decode(&bytes).is_err());
        let mut short = vec![1u8; HEADER_LEN];
        short[17..21].copy_from_slice(&10u32.to_be_bytes());
        assert!(ProtocolMessage::decode(&short).is_err());
    }

    #[test]
    fn bodies_round_trip() {
        let sid = SessionId([7; 16]);
        let word = StateWord::new(8, vec![0, 7, 3, 3]).unwrap();
        let c = ChallengeBody { session_id: sid, challenge: word.clone() };
        assert_eq!(ChallengeBody::from_bytes(&c.to_bytes()).unwrap(), c);
        let v = VerdictBody { session_id: sid, accepted: true, distance: 0.25 };
        assert_eq!(VerdictBody::from_bytes(&v.to_bytes()).unwrap(), v);
        let r = ResponseBody { session_id: sid, inputs: vec![55.0, 0.0], response: word };
        assert_eq!(ResponseBody::from_bytes(&r.to_bytes()).unwrap(), r);
        assert!(ChallengeBody::from_bytes(&v.to_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn frames_round_trip(kind in 1u8..=4, sid in any::<[u8; 16]>(), payload in prop::collection::vec(any::<u8>(), 0..200)) {
            let kind = MessageKind::from_byte(kind).unwrap();
            let msg = ProtocolMessage { kind, session_id: SessionId(sid), payload, sender: kind.natural_sender().unwrap() };
            let mut stream = msg.encode();
            stream.extend_from_slice(&[0xFF, 0xFF]);
            let (back, used) = ProtocolMessage::decode(&stream).unwrap();
            prop_assert_eq!(back, msg);
            prop_assert_eq!(used, stream.len() - 2);
        }
    }
}
