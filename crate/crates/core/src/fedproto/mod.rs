//! Secure federated rounds: key-client vote, masked encrypted updates,
//! blind aggregation, finalisation by the key-client, and model update.

mod runtime;

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::Zero;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::channel::{ChannelError, PartyId};
use crate::he::{
    bigint_to_f64, ct_add_vector, ct_broadcast_mul, encode_fixed, hdecrypt_vector, HeCiphertext,
    HeError, HePublicKey, HeSecretKey,
};
use crate::neuralnet::{AdamConfig, Example, ModelParams, NnError, Trainer};

pub use runtime::{
    channel_keys, party_name, run_party, run_protocol, PartyContext, PartyReport, ProtocolConfig, ProtocolRun,
    RoundRecord, RoundStatus, Transcript, TranscriptEntry,
};

/// Party id of the aggregator; client `k` (0-based) is party `k + 1`.
pub const AGGREGATOR_ID: PartyId = 0;

pub fn client_party(index: usize) -> PartyId {
    (index + 1) as PartyId
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtoError {
    #[error(transparent)]
    He(#[from] HeError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("expected {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("update for round {actual} offered to round {expected}")]
    RoundMismatch { expected: u32, actual: u32 },
    #[error("round {round}: missing updates from {missing:?}")]
    MissingUpdate { round: u32, missing: Vec<PartyId> },
    #[error("decrypted coordinate {coordinate} is not divisible by the mask")]
    NonDivisible { coordinate: usize },
    #[error("weight {value} exceeds the configured bound {bound}")]
    WeightBound { value: f64, bound: f64 },
    #[error("round {round} aborted: {reason}")]
    Abort { round: u32, reason: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("malformed message: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Client,
    KeyClient,
    Aggregator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AggregationMode {
    Full,
    Partly,
}

impl FromStr for AggregationMode {
    type Err = ProtoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(AggregationMode::Full),
            "partly" => Ok(AggregationMode::Partly),
            other => Err(ProtoError::Config(format!("unknown mode `{other}`"))),
        }
    }
}

impl fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggregationMode::Full => "full",
            AggregationMode::Partly => "partly",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundConfig {
    pub round: u32,
    pub n_clients: usize,
    pub mode: AggregationMode,
    pub shared_seed: u64,
}

impl RoundConfig {
    pub fn key_client(&self) -> usize {
        vote_key_client(self.round, self.n_clients, self.shared_seed)
    }

    pub fn role_of(&self, party: PartyId) -> Role {
        if party == AGGREGATOR_ID {
            Role::Aggregator
        } else if party == client_party(self.key_client()) {
            Role::KeyClient
        } else {
            Role::Client
        }
    }
}

/// Key-client index for `round`: the first 8 bytes of
/// `SHA-256(seed_le ‖ round_le)` as a little-endian integer, mod `n`.
pub fn vote_key_client(round: u32, n: usize, shared_seed: u64) -> usize {
    assert!(n >= 1, "at least one client is required");
    let mut h = Sha256::new();
    h.update(shared_seed.to_le_bytes());
    h.update(round.to_le_bytes());
    let d = h.finalize();
    let v = u64::from_le_bytes(d[..8].try_into().unwrap());
    (v % n as u64) as usize
}

/// Shared coordinates in canonical order: everything in `Full`, the encoder
/// prefix in `Partly`.
pub fn select_shared_params(p: &ModelParams, mode: AggregationMode) -> Vec<f64> {
    let mut flat = p.flatten();
    flat.truncate(shared_len(p, mode));
    flat
}

pub fn shared_len(p: &ModelParams, mode: AggregationMode) -> usize {
    match mode {
        AggregationMode::Full => p.param_count(),
        AggregationMode::Partly => p.dims.encoder_len(),
    }
}

/// Overwrites the shared coordinates with `w`, leaving the rest untouched.
pub fn apply_update(p: &mut ModelParams, w: &[f64], mode: AggregationMode) -> Result<(), ProtoError> {
    let len = shared_len(p, mode);
    if w.len() != len {
        return Err(ProtoError::LengthMismatch {
            expected: len,
            actual: w.len(),
        });
    }
    let mut flat = p.flatten();
    flat[..len].copy_from_slice(w);
    p.set_flat(&flat)?;
    Ok(())
}

/// Fixed-point encodes `w` and multiplies each coordinate into `z̄`,
/// yielding ciphertexts of `z·round(w_j·2^f)`.
pub fn client_encrypt_update(
    pk: &HePublicKey,
    w: &[f64],
    z_bar: &HeCiphertext,
    f: u8,
) -> Result<HeCiphertext, ProtoError> {
    let ks = w
        .iter()
        .map(|&v| encode_fixed(v, f))
        .collect::<Result<Vec<i64>, _>>()?;
    Ok(ct_broadcast_mul(pk, z_bar, &ks)?.with_scale(f))
}

/// One client's encrypted contribution to a round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalUpdate {
    pub round: u32,
    pub sender: PartyId,
    pub ciphertext: HeCiphertext,
}

/// `w̄ = Σ w̄ⁱ` over exactly `n` updates of `round`, one per sender.
pub fn aggregate(
    pk: &HePublicKey,
    updates: &[LocalUpdate],
    round: u32,
    n: usize,
) -> Result<HeCiphertext, ProtoError> {
    if let Some(u) = updates.iter().find(|u| u.round != round) {
        return Err(ProtoError::RoundMismatch {
            expected: round,
            actual: u.round,
        });
    }
    let missing: Vec<PartyId> = (0..n)
        .map(client_party)
        .filter(|id| !updates.iter().any(|u| u.sender == *id))
        .collect();
    if !missing.is_empty() || updates.len() != n {
        return Err(ProtoError::MissingUpdate { round, missing });
    }
    let mut acc = updates[0].ciphertext.clone();
    for u in &updates[1..] {
        if u.ciphertext.len() != acc.len() {
            return Err(ProtoError::LengthMismatch {
                expected: acc.len(),
                actual: u.ciphertext.len(),
            });
        }
        acc = ct_add_vector(pk, &acc, &u.ciphertext)?;
    }
    Ok(acc)
}

/// `w = HDecrypt(w̄) / (z·N·2^f)` with an exact integer division by `z`.
pub fn keyclient_finalize(
    w_bar: &HeCiphertext,
    sk: &HeSecretKey,
    z: u64,
    n: usize,
    f: u8,
) -> Result<Vec<f64>, ProtoError> {
    if z == 0 || n == 0 {
        return Err(ProtoError::Config("mask and client count must be nonzero".into()));
    }
    let z = BigInt::from(z);
    let denom = n as f64 * 2f64.powi(f as i32);
    hdecrypt_vector(sk, w_bar)?
        .iter()
        .enumerate()
        .map(|(j, v)| {
            let (q, r) = v.div_rem(&z);
            if !r.is_zero() {
                return Err(ProtoError::NonDivisible { coordinate: j });
            }
            Ok(bigint_to_f64(&q) / denom)
        })
        .collect()
}

/// Plain coordinatewise mean, the reference the masked pipeline must match.
pub fn fedavg(updates: &[Vec<f64>]) -> Result<Vec<f64>, ProtoError> {
    let first = updates
        .first()
        .ok_or_else(|| ProtoError::Config("no updates to average".into()))?;
    let mut sum = vec![0.0; first.len()];
    for u in updates {
        if u.len() != sum.len() {
            return Err(ProtoError::LengthMismatch {
                expected: sum.len(),
                actual: u.len(),
            });
        }
        for (s, v) in sum.iter_mut().zip(u) {
            *s += v;
        }
    }
    let n = updates.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

/// A participant's model as seen by the protocol.
pub trait LocalModel: Send {
    fn shared_params(&self, mode: AggregationMode) -> Vec<f64>;

    fn apply_shared(&mut self, w: &[f64], mode: AggregationMode) -> Result<(), ProtoError>;

    fn train_local(&mut self, round: u32, epochs: usize) -> Result<(), ProtoError>;

    /// Called after every round, whether or not an update was applied.
    fn round_finished(&mut self, _round: u32, _applied: bool) {}
}

/// The autoencoder-classifier trained with Adam on local examples.
#[derive(Debug, Clone)]
pub struct NnLocalModel {
    pub trainer: Trainer,
    pub data: Vec<Example>,
}

impl NnLocalModel {
    pub fn new(params: ModelParams, adam: AdamConfig, data: Vec<Example>) -> Self {
        NnLocalModel {
            trainer: Trainer::new(params, adam),
            data,
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.trainer.params
    }
}

impl LocalModel for NnLocalModel {
    fn shared_params(&self, mode: AggregationMode) -> Vec<f64> {
        select_shared_params(&self.trainer.params, mode)
    }

    fn apply_shared(&mut self, w: &[f64], mode: AggregationMode) -> Result<(), ProtoError> {
        apply_update(&mut self.trainer.params, w, mode)
    }

    fn train_local(&mut self, _round: u32, epochs: usize) -> Result<(), ProtoError> {
        for _ in 0..epochs {
            self.trainer.epoch(&self.data)?;
        }
        Ok(())
    }
}

pub(crate) fn f64s_to_bytes(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub(crate) fn f64s_from_bytes(b: &[u8]) -> Result<Vec<f64>, ProtoError> {
    if b.len() % 8 != 0 {
        return Err(ProtoError::Malformed("vector length is not a multiple of 8".into()));
    }
    Ok(b.chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
