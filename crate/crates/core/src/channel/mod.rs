//! Sealed point-to-point messages and the framed wire protocol.
//!
//! Sealing is hybrid: an ephemeral X25519 key agreement with the recipient's
//! static key, HKDF-SHA256 to a one-time key, then ChaCha20-Poly1305.

mod frame;
mod transport;

use std::fmt;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use hkdf::Hkdf;
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use thiserror::Error;
use x25519_dalek::{PublicKey, StaticSecret};

pub use frame::{decode_stream, frame_decode, frame_encode, read_frame, Frame, MessageType, HEADER_LEN};
pub use transport::{bind_address, inproc_network, InProcEndpoint, TcpEndpoint, Transport, BIND_ENV};

pub type PartyId = u16;
pub type KeyId = [u8; 8];

const KDF_INFO: &[u8] = b"fedscdg seal v1";
const SEALED_HEADER: usize = 8 + 32 + 12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChannelError {
    #[error("authentication failed")]
    AuthFailure,
    #[error("message is sealed for a different key")]
    WrongKey,
    #[error("truncated input")]
    Truncated,
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("payload of {0} bytes is too large")]
    PayloadTooLarge(usize),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("timed out")]
    Timeout,
    #[error("peer {0} is not reachable")]
    UnknownPeer(PartyId),
    #[error("connection closed")]
    Closed,
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for ChannelError {
    fn from(e: std::io::Error) -> Self {
        ChannelError::Io(e.to_string())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChannelPublicKey([u8; 32]);

impl ChannelPublicKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        ChannelPublicKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// First 8 bytes of SHA-256 over the key.
    pub fn key_id(&self) -> KeyId {
        let d = Sha256::digest(self.0);
        let mut id = [0u8; 8];
        id.copy_from_slice(&d[..8]);
        id
    }
}

impl fmt::Debug for ChannelPublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ChannelPublicKey({})", crate::he::hex(&self.key_id()))
    }
}

/// A party's long-lived key pair. The secret half has no serialisation.
#[derive(Clone)]
pub struct ChannelKeyPair {
    secret: StaticSecret,
    public: ChannelPublicKey,
}

impl fmt::Debug for ChannelKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChannelKeyPair")
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

impl ChannelKeyPair {
    pub fn public(&self) -> ChannelPublicKey {
        self.public
    }
}

pub fn keypair_gen<R: RngCore + CryptoRng>(rng: &mut R) -> ChannelKeyPair {
    let secret = StaticSecret::random_from_rng(rng);
    let public = ChannelPublicKey(PublicKey::from(&secret).to_bytes());
    ChannelKeyPair { secret, public }
}

/// `recipient key id (8) ‖ ephemeral public key (32) ‖ nonce (12) ‖ ciphertext+tag`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedMessage {
    pub recipient: KeyId,
    pub ephemeral: [u8; 32],
    pub nonce: [u8; 12],
    pub ciphertext: Vec<u8>,
}

impl SealedMessage {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(SEALED_HEADER + self.ciphertext.len());
        out.extend_from_slice(&self.recipient);
        out.extend_from_slice(&self.ephemeral);
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.ciphertext);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ChannelError> {
        if bytes.len() < SEALED_HEADER + 16 {
            return Err(ChannelError::Truncated);
        }
        Ok(SealedMessage {
            recipient: bytes[..8].try_into().unwrap(),
            ephemeral: bytes[8..40].try_into().unwrap(),
            nonce: bytes[40..52].try_into().unwrap(),
            ciphertext: bytes[52..].to_vec(),
        })
    }

    fn aad(&self) -> [u8; 40] {
        let mut aad = [0u8; 40];
        aad[..8].copy_from_slice(&self.recipient);
        aad[8..].copy_from_slice(&self.ephemeral);
        aad
    }
}

fn session_cipher(shared: &[u8; 32], ephemeral: &[u8; 32], recipient: &[u8; 32]) -> ChaCha20Poly1305 {
    let mut salt = [0u8; 64];
    salt[..32].copy_from_slice(ephemeral);
    salt[32..].copy_from_slice(recipient);
    let hk = Hkdf::<Sha256>::new(Some(&salt), shared);
    let mut key = [0u8; 32];
    hk.expand(KDF_INFO, &mut key).expect("32 bytes is a valid HKDF length");
    ChaCha20Poly1305::new(Key::from_slice(&key))
}

pub fn seal<R: RngCore + CryptoRng>(payload: &[u8], recipient: &ChannelPublicKey, rng: &mut R) -> SealedMessage {
    let eph = StaticSecret::random_from_rng(&mut *rng);
    let eph_pub = PublicKey::from(&eph).to_bytes();
    let shared = eph.diffie_hellman(&PublicKey::from(recipient.0));
    let mut nonce = [0u8; 12];
    rng.fill_bytes(&mut nonce);
    let mut msg = SealedMessage {
        recipient: recipient.key_id(),
        ephemeral: eph_pub,
        nonce,
        ciphertext: Vec::new(),
    };
    let cipher = session_cipher(shared.as_bytes(), &eph_pub, &recipient.0);
    msg.ciphertext = cipher
        .encrypt(
            Nonce::from_slice(&nonce),
            Payload {
                msg: payload,
                aad: &msg.aad(),
            },
        )
        .expect("in-memory encryption cannot fail");
    msg
}

pub fn open(msg: &SealedMessage, keys: &ChannelKeyPair) -> Result<Vec<u8>, ChannelError> {
    if msg.recipient != keys.public.key_id() {
        return Err(ChannelError::WrongKey);
    }
    let shared = keys.secret.diffie_hellman(&PublicKey::from(msg.ephemeral));
    if !shared.was_contributory() {
        return Err(ChannelError::AuthFailure);
    }
    let cipher = session_cipher(shared.as_bytes(), &msg.ephemeral, &keys.public.0);
    cipher
        .decrypt(
            Nonce::from_slice(&msg.nonce),
            Payload {
                msg: &msg.ciphertext,
                aad: &msg.aad(),
            },
        )
        .map_err(|_| ChannelError::AuthFailure)
}
