//! Party state machines driving the round protocol over any transport.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;
use std::thread;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use rand::rngs::OsRng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{
    aggregate, client_encrypt_update, client_party, f64s_from_bytes, f64s_to_bytes, keyclient_finalize,
    vote_key_client, AggregationMode, LocalModel, LocalUpdate, ProtoError, AGGREGATOR_ID,
};
use crate::channel::{
    inproc_network, keypair_gen, open, seal, ChannelError, ChannelKeyPair, ChannelPublicKey, Frame, KeyId,
    MessageType, PartyId, SealedMessage, Transport,
};
use crate::he::{
    check_capacity, he_keygen, henc, HeCiphertext, HeKeyPair, HePublicKey, DEFAULT_FRACTION_BITS,
    DEFAULT_SECURITY_BITS,
};

/// Upper bound (exclusive) of the mask `z`.
const Z_LIMIT: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub n_clients: usize,
    pub rounds: u32,
    pub mode: AggregationMode,
    pub shared_seed: u64,
    pub fraction_bits: u8,
    pub security_bits: u64,
    pub local_epochs: usize,
    /// `false` runs the same message flow with plaintext averaging.
    pub secure: bool,
    pub phase_timeout: Duration,
    /// Largest accepted `|w|`; sizes the capacity check.
    pub weight_bound: f64,
    /// Seeds every party's randomness; `None` draws from the OS.
    pub rng_seed: Option<u64>,
    /// Keep each applied global update in the round records.
    pub record_shared: bool,
    /// Keep the opened payloads the aggregator receives.
    pub capture_payloads: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            n_clients: 3,
            rounds: 10,
            mode: AggregationMode::Full,
            shared_seed: 0,
            fraction_bits: DEFAULT_FRACTION_BITS,
            security_bits: DEFAULT_SECURITY_BITS,
            local_epochs: 1,
            secure: true,
            phase_timeout: Duration::from_secs(60),
            weight_bound: 1e6,
            rng_seed: None,
            record_shared: false,
            capture_payloads: false,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), ProtoError> {
        let bad = |m: &str| Err(ProtoError::Config(m.to_string()));
        if self.n_clients == 0 {
            return bad("at least one client is required");
        }
        if self.n_clients >= PartyId::MAX as usize {
            return bad("too many clients");
        }
        if self.fraction_bits == 0 || self.fraction_bits > 52 {
            return bad("fraction bits must be in 1..=52");
        }
        if !(self.weight_bound.is_finite() && self.weight_bound > 0.0) {
            return bad("weight bound must be positive");
        }
        if self.weight_bound * 2f64.powi(self.fraction_bits as i32) >= 9.2e18 {
            return bad("weight bound does not fit 64-bit fixed point");
        }
        if self.secure && self.security_bits < crate::he::MIN_SECURITY_BITS {
            return bad("security parameter below 1024 bits");
        }
        Ok(())
    }

    fn round_rng_seed(&self, party: PartyId) -> ChaCha20Rng {
        let mut rng = match self.rng_seed {
            Some(s) => ChaCha20Rng::seed_from_u64(s),
            None => ChaCha20Rng::from_rng(OsRng).expect("system entropy"),
        };
        rng.set_stream(party as u64 + 1);
        rng
    }
}

pub fn party_name(id: PartyId) -> String {
    if id == AGGREGATOR_ID {
        "aggregator".to_string()
    } else {
        format!("client-{id}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub round: u32,
    pub sender: PartyId,
    pub receiver: PartyId,
    pub msg_type: MessageType,
    pub bytes: usize,
}

impl fmt::Display for TranscriptEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "r={} {}→{} {} bytes={}",
            self.round,
            party_name(self.sender),
            party_name(self.receiver),
            self.msg_type,
            self.bytes
        )
    }
}

/// Every frame a party sent or received, in order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
    /// `(round, type, opened payload)` of received messages, when enabled.
    pub captured: Vec<(u32, MessageType, Vec<u8>)>,
}

impl Transcript {
    pub fn lines(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.to_string()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RoundStatus {
    Completed,
    Aborted(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: u32,
    pub key_client: usize,
    pub status: RoundStatus,
    /// Applied global update, when recording is enabled.
    pub shared: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartyReport {
    pub id: PartyId,
    pub transcript: Transcript,
    pub rounds: Vec<RoundRecord>,
}

impl PartyReport {
    pub fn key_client_sequence(&self) -> Vec<usize> {
        self.rounds.iter().map(|r| r.key_client).collect()
    }

    pub fn aborted_rounds(&self) -> Vec<u32> {
        self.rounds
            .iter()
            .filter(|r| r.status != RoundStatus::Completed)
            .map(|r| r.round)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolRun {
    pub aggregator: PartyReport,
    pub clients: Vec<PartyReport>,
}

impl ProtocolRun {
    pub fn aborted_rounds(&self) -> Vec<u32> {
        let mut all: Vec<u32> = std::iter::once(&self.aggregator)
            .chain(&self.clients)
            .flat_map(|p| p.aborted_rounds())
            .collect();
        all.sort_unstable();
        all.dedup();
        all
    }
}

/// Everything one party needs to take part.
pub struct PartyContext<T: Transport> {
    pub id: PartyId,
    pub config: ProtocolConfig,
    pub transport: T,
    pub keys: ChannelKeyPair,
    /// Expected channel key ids, checked against each peer's HELLO.
    pub pins: HashMap<PartyId, KeyId>,
}

enum Fail {
    Timeout(&'static str),
    Aborted(String),
    Error(ProtoError),
}

impl From<ProtoError> for Fail {
    fn from(e: ProtoError) -> Self {
        Fail::Error(e)
    }
}

impl From<ChannelError> for Fail {
    fn from(e: ChannelError) -> Self {
        Fail::Error(e.into())
    }
}

impl From<crate::he::HeError> for Fail {
    fn from(e: crate::he::HeError) -> Self {
        Fail::Error(e.into())
    }
}

struct Party<'m, T: Transport> {
    id: PartyId,
    cfg: ProtocolConfig,
    transport: T,
    keys: ChannelKeyPair,
    peers: HashMap<PartyId, ChannelPublicKey>,
    rng: ChaCha20Rng,
    buffer: VecDeque<Frame>,
    transcript: Transcript,
    round: u32,
    model: Option<&'m mut dyn LocalModel>,
}

/// Runs one party to completion: HELLO exchange, then every round.
pub fn run_party<T: Transport>(
    ctx: PartyContext<T>,
    model: Option<&mut dyn LocalModel>,
) -> Result<PartyReport, ProtoError> {
    ctx.config.validate()?;
    if (ctx.id == AGGREGATOR_ID) != model.is_none() {
        return Err(ProtoError::Config("clients need a model, the aggregator must not have one".into()));
    }
    if ctx.id as usize > ctx.config.n_clients {
        return Err(ProtoError::Config(format!("party id {} out of range", ctx.id)));
    }
    let rng = ctx.config.round_rng_seed(ctx.id);
    let mut party = Party {
        id: ctx.id,
        cfg: ctx.config,
        transport: ctx.transport,
        keys: ctx.keys,
        peers: HashMap::new(),
        rng,
        buffer: VecDeque::new(),
        transcript: Transcript::default(),
        round: 0,
        model,
    };
    party.hello(&ctx.pins)?;
    let mut rounds = Vec::with_capacity(party.cfg.rounds as usize);
    for r in 1..=party.cfg.rounds {
        party.round = r;
        rounds.push(party.run_round());
    }
    Ok(PartyReport {
        id: party.id,
        transcript: party.transcript,
        rounds,
    })
}

impl<T: Transport> Party<'_, T> {
    fn all_parties(&self) -> impl Iterator<Item = PartyId> {
        0..=(self.cfg.n_clients as PartyId)
    }

    fn log(&mut self, sender: PartyId, receiver: PartyId, msg_type: MessageType, bytes: usize, round: u32) {
        self.transcript.entries.push(TranscriptEntry {
            round,
            sender,
            receiver,
            msg_type,
            bytes,
        });
    }

    fn send(&mut self, to: PartyId, ty: MessageType, payload: Vec<u8>) -> Result<(), Fail> {
        let frame = Frame::new(ty, self.round, self.id, payload);
        let n = self.transport.send(to, &frame)?;
        self.log(self.id, to, ty, n, self.round);
        Ok(())
    }

    fn send_sealed(&mut self, to: PartyId, ty: MessageType, payload: &[u8]) -> Result<(), Fail> {
        let pk = *self.peers.get(&to).ok_or(ChannelError::UnknownPeer(to))?;
        let sealed = seal(payload, &pk, &mut self.rng).to_bytes();
        self.send(to, ty, sealed)
    }

    fn open_payload(&self, frame: &Frame) -> Result<Vec<u8>, Fail> {
        let msg = SealedMessage::from_bytes(&frame.payload)?;
        Ok(open(&msg, &self.keys)?)
    }

    fn capture(&mut self, ty: MessageType, payload: &[u8]) {
        if self.cfg.capture_payloads {
            self.transcript.captured.push((self.round, ty, payload.to_vec()));
        }
    }

    fn receive(&mut self, timeout: Duration) -> Result<Frame, ChannelError> {
        let f = self.transport.recv(timeout)?;
        self.log(f.sender, self.id, f.msg_type, f.wire_len(), f.round);
        Ok(f)
    }

    /// Next frame of the current round accepted by `want`. Older rounds are
    /// dropped and later ones buffered.
    fn wait(&mut self, what: &'static str, want: impl Fn(&Frame) -> bool) -> Result<Frame, Fail> {
        let round = self.round;
        if let Some(pos) = self
            .buffer
            .iter()
            .position(|f| f.round == round && (f.msg_type == MessageType::Abort || want(f)))
        {
            let f = self.buffer.remove(pos).expect("position is valid");
            return self.accept(f);
        }
        let deadline = Instant::now() + self.cfg.phase_timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(Fail::Timeout(what));
            }
            let f = match self.receive(left) {
                Ok(f) => f,
                Err(ChannelError::Timeout) => return Err(Fail::Timeout(what)),
                Err(e) => return Err(e.into()),
            };
            if f.round < round {
                continue;
            }
            if f.round == round && (f.msg_type == MessageType::Abort || want(&f)) {
                return self.accept(f);
            }
            self.buffer.push_back(f);
        }
    }

    fn accept(&mut self, f: Frame) -> Result<Frame, Fail> {
        if f.msg_type == MessageType::Abort {
            return Err(Fail::Aborted(format!(
                "{} aborted: {}",
                party_name(f.sender),
                String::from_utf8_lossy(&f.payload)
            )));
        }
        Ok(f)
    }

    fn hello(&mut self, pins: &HashMap<PartyId, KeyId>) -> Result<(), ProtoError> {
        let me = self.id;
        let others: Vec<PartyId> = self.all_parties().filter(|&p| p != me).collect();
        let pk = self.keys.public().as_bytes().to_vec();
        for &o in &others {
            self.send(o, MessageType::Hello, pk.clone()).map_err(fail_to_error)?;
        }
        let mut seen = HashSet::new();
        while seen.len() < others.len() {
            let f = self
                .wait("HELLO", |f| f.msg_type == MessageType::Hello)
                .map_err(fail_to_error)?;
            let bytes: [u8; 32] = f
                .payload
                .as_slice()
                .try_into()
                .map_err(|_| ProtoError::Malformed("HELLO must carry a 32-byte key".into()))?;
            let key = ChannelPublicKey::from_bytes(bytes);
            if let Some(pin) = pins.get(&f.sender) {
                if *pin != key.key_id() {
                    return Err(ProtoError::Config(format!(
                        "{} presented an unexpected channel key",
                        party_name(f.sender)
                    )));
                }
            }
            self.capture(MessageType::Hello, &f.payload);
            self.peers.insert(f.sender, key);
            seen.insert(f.sender);
        }
        Ok(())
    }

    fn run_round(&mut self) -> RoundRecord {
        let kc = vote_key_client(self.round, self.cfg.n_clients, self.cfg.shared_seed);
        let kc_party = client_party(kc);
        let result = if self.id == AGGREGATOR_ID {
            self.aggregator_round(kc_party).map(|_| None)
        } else if self.id == kc_party {
            self.key_client_round().map(Some)
        } else {
            self.client_round(kc_party).map(Some)
        };
        let status = match &result {
            Ok(_) => RoundStatus::Completed,
            Err(Fail::Aborted(reason)) => RoundStatus::Aborted(reason.clone()),
            Err(Fail::Timeout(what)) => {
                let reason = format!("timeout waiting for {what}");
                self.broadcast_abort(&reason);
                RoundStatus::Aborted(reason)
            }
            Err(Fail::Error(e)) => {
                let reason = e.to_string();
                self.broadcast_abort(&reason);
                RoundStatus::Aborted(reason)
            }
        };
        let applied = matches!(result, Ok(Some(_)));
        if let Some(m) = self.model.as_deref_mut() {
            m.round_finished(self.round, applied);
        }
        RoundRecord {
            round: self.round,
            key_client: kc,
            status,
            shared: result.ok().flatten().filter(|_| self.cfg.record_shared),
        }
    }

    fn broadcast_abort(&mut self, reason: &str) {
        let me = self.id;
        let targets: Vec<PartyId> = self.all_parties().filter(|&p| p != me).collect();
        for p in targets {
            let _ = self.send(p, MessageType::Abort, reason.as_bytes().to_vec());
        }
    }

    fn model(&mut self) -> &mut dyn LocalModel {
        self.model.as_deref_mut().expect("clients always hold a model")
    }

    /// Local training, then the masked update to the aggregator.
    fn train_and_upload(&mut self, secret: Option<&(HePublicKey, HeCiphertext)>) -> Result<(), Fail> {
        let (round, epochs, mode) = (self.round, self.cfg.local_epochs, self.cfg.mode);
        self.model().train_local(round, epochs)?;
        let w = self.model().shared_params(mode);
        let bound = self.cfg.weight_bound;
        if let Some(&v) = w.iter().find(|v| !(v.abs() <= bound)) {
            return Err(ProtoError::WeightBound { value: v, bound }.into());
        }
        let payload = match secret {
            Some((pk, z_bar)) => client_encrypt_update(pk, &w, z_bar, self.cfg.fraction_bits)?.to_bytes(),
            None => f64s_to_bytes(&w),
        };
        self.send_sealed(AGGREGATOR_ID, MessageType::LocalUpdate, &payload)
    }

    fn key_client_round(&mut self) -> Result<Vec<f64>, Fail> {
        let me = self.id;
        let n = self.cfg.n_clients;
        let others: Vec<PartyId> = (0..n).map(client_party).filter(|&p| p != me).collect();

        // every other client sends its channel key
        let mut client_keys: BTreeMap<PartyId, ChannelPublicKey> = BTreeMap::new();
        while client_keys.len() < others.len() {
            let f = self.wait("PUBKEY", |f| {
                f.msg_type == MessageType::PubKey && others.contains(&f.sender)
            })?;
            let bytes: [u8; 32] = f
                .payload
                .as_slice()
                .try_into()
                .map_err(|_| ProtoError::Malformed("PUBKEY must carry a 32-byte key".into()))?;
            let key = ChannelPublicKey::from_bytes(bytes);
            if self.peers.get(&f.sender) != Some(&key) {
                return Err(ProtoError::Malformed(format!("{} changed its channel key", party_name(f.sender))).into());
            }
            client_keys.insert(f.sender, key);
        }

        // fresh HE keys and mask, z̄ to every client
        let f_bits = self.cfg.fraction_bits;
        let secret = if self.cfg.secure {
            let kp = he_keygen(self.cfg.security_bits, &mut self.rng)?;
            check_capacity(&kp.pk, f_bits, Z_LIMIT, n, self.cfg.weight_bound)?;
            let z: u64 = self.rng.gen_range(2..Z_LIMIT);
            let z_bar = henc(&kp.pk, &BigInt::from(z), f_bits, &mut self.rng)?;
            Some((kp, z, z_bar))
        } else {
            None
        };
        let enc_secret = match &secret {
            Some((kp, _, z_bar)) => [kp.pk.to_bytes(), z_bar.to_bytes()].concat(),
            None => Vec::new(),
        };
        for &o in &others {
            self.send_sealed(o, MessageType::EncSecret, &enc_secret)?;
        }
        let begin = secret.as_ref().map(|(kp, _, _)| kp.pk.to_bytes()).unwrap_or_default();
        self.send(AGGREGATOR_ID, MessageType::RoundBegin, begin)?;

        let public = secret.as_ref().map(|(kp, _, z_bar)| (kp.pk.clone(), z_bar.clone()));
        self.train_and_upload(public.as_ref())?;

        // receive w̄ and unmask
        let f = self.wait("GLOBAL_ENC", |f| {
            f.msg_type == MessageType::GlobalEnc && f.sender == AGGREGATOR_ID
        })?;
        let payload = self.open_payload(&f)?;
        let w = match &secret {
            Some((kp, z, _)) => finalize_secure(&payload, kp, *z, n, f_bits)?,
            None => f64s_from_bytes(&payload)?.into_iter().map(|s| s / n as f64).collect(),
        };

        // distribute and apply
        let bytes = f64s_to_bytes(&w);
        for &o in &others {
            self.send_sealed(o, MessageType::GlobalUpdate, &bytes)?;
        }
        let mode = self.cfg.mode;
        self.model().apply_shared(&w, mode)?;
        self.send(AGGREGATOR_ID, MessageType::RoundEnd, Vec::new())?;
        Ok(w)
    }

    fn client_round(&mut self, kc_party: PartyId) -> Result<Vec<f64>, Fail> {
        let pk = self.keys.public().as_bytes().to_vec();
        self.send(kc_party, MessageType::PubKey, pk)?;

        let f = self.wait("ENC_SECRET", |f| {
            f.msg_type == MessageType::EncSecret && f.sender == kc_party
        })?;
        let payload = self.open_payload(&f)?;
        let secret = if self.cfg.secure {
            let (he_pk, used) = HePublicKey::from_bytes(&payload)?;
            let z_bar = HeCiphertext::from_bytes(&payload[used..])?;
            if z_bar.fingerprint() != he_pk.fingerprint() || z_bar.len() != 1 {
                return Err(ProtoError::Malformed("z̄ does not match the round key".into()).into());
            }
            Some((he_pk, z_bar))
        } else {
            None
        };

        self.train_and_upload(secret.as_ref())?;

        let f = self.wait("GLOBAL_UPDATE", |f| {
            f.msg_type == MessageType::GlobalUpdate && f.sender == kc_party
        })?;
        let w = f64s_from_bytes(&self.open_payload(&f)?)?;
        let mode = self.cfg.mode;
        self.model().apply_shared(&w, mode)?;
        Ok(w)
    }

    fn aggregator_round(&mut self, kc_party: PartyId) -> Result<(), Fail> {
        let n = self.cfg.n_clients;
        let f = self.wait("ROUND_BEGIN", |f| {
            f.msg_type == MessageType::RoundBegin && f.sender == kc_party
        })?;
        self.capture(MessageType::RoundBegin, &f.payload);
        let he_pk = if self.cfg.secure {
            Some(HePublicKey::from_bytes(&f.payload)?.0)
        } else {
            None
        };

        // collect exactly one update per client
        let mut received: BTreeMap<PartyId, Vec<u8>> = BTreeMap::new();
        while received.len() < n {
            let have: Vec<PartyId> = received.keys().copied().collect();
            let f = self.wait("LOCAL_UPDATE", |f| {
                f.msg_type == MessageType::LocalUpdate
                    && f.sender != AGGREGATOR_ID
                    && (f.sender as usize) <= n
                    && !have.contains(&f.sender)
            })?;
            let payload = self.open_payload(&f)?;
            self.capture(MessageType::LocalUpdate, &payload);
            received.insert(f.sender, payload);
        }

        let sum = match &he_pk {
            Some(pk) => {
                let updates = received
                    .iter()
                    .map(|(&sender, bytes)| {
                        let ct = HeCiphertext::from_bytes(bytes)?;
                        if ct.fingerprint() != pk.fingerprint() {
                            return Err(ProtoError::He(crate::he::HeError::KeyMismatch));
                        }
                        Ok(LocalUpdate {
                            round: self.round,
                            sender,
                            ciphertext: ct,
                        })
                    })
                    .collect::<Result<Vec<_>, ProtoError>>()?;
                aggregate(pk, &updates, self.round, n)?.to_bytes()
            }
            None => {
                let mut acc: Option<Vec<f64>> = None;
                for bytes in received.values() {
                    let v = f64s_from_bytes(bytes)?;
                    acc = Some(match acc {
                        None => v,
                        Some(mut a) => {
                            if a.len() != v.len() {
                                return Err(ProtoError::LengthMismatch {
                                    expected: a.len(),
                                    actual: v.len(),
                                }
                                .into());
                            }
                            a.iter_mut().zip(&v).for_each(|(x, y)| *x += y);
                            a
                        }
                    });
                }
                f64s_to_bytes(&acc.unwrap_or_default())
            }
        };
        self.send_sealed(kc_party, MessageType::GlobalEnc, &sum)?;

        let f = self.wait("ROUND_END", |f| {
            f.msg_type == MessageType::RoundEnd && f.sender == kc_party
        })?;
        self.capture(MessageType::RoundEnd, &f.payload);
        Ok(())
    }
}

fn finalize_secure(payload: &[u8], kp: &HeKeyPair, z: u64, n: usize, f: u8) -> Result<Vec<f64>, Fail> {
    let w_bar = HeCiphertext::from_bytes(payload)?;
    if w_bar.scale() != f {
        return Err(ProtoError::He(crate::he::HeError::ScaleMismatch {
            left: f,
            right: w_bar.scale(),
        })
        .into());
    }
    Ok(keyclient_finalize(&w_bar, &kp.sk, z, n, f)?)
}

fn fail_to_error(f: Fail) -> ProtoError {
    match f {
        Fail::Timeout(_) => ProtoError::Channel(ChannelError::Timeout),
        Fail::Aborted(reason) => ProtoError::Abort { round: 0, reason },
        Fail::Error(e) => e,
    }
}

/// Channel key pairs of parties `0..=n_clients`, drawn from `rng_seed` so
/// that separate processes derive the same keys, or from the OS.
pub fn channel_keys(cfg: &ProtocolConfig) -> Vec<ChannelKeyPair> {
    let mut rng = cfg.round_rng_seed(PartyId::MAX);
    (0..=cfg.n_clients).map(|_| keypair_gen(&mut rng)).collect()
}

/// Runs the aggregator and one thread per client over in-process queues.
pub fn run_protocol<M: LocalModel>(cfg: &ProtocolConfig, models: &mut [M]) -> Result<ProtocolRun, ProtoError> {
    cfg.validate()?;
    if models.len() != cfg.n_clients {
        return Err(ProtoError::Config(format!(
            "{} models for {} clients",
            models.len(),
            cfg.n_clients
        )));
    }
    let ids: Vec<PartyId> = (0..=cfg.n_clients as PartyId).collect();
    let keys = channel_keys(cfg);
    let pins: HashMap<PartyId, KeyId> = ids.iter().map(|&i| (i, keys[i as usize].public().key_id())).collect();
    let mut endpoints = inproc_network(&ids).into_iter();
    let agg_ep = endpoints.next().expect("aggregator endpoint");

    thread::scope(|s| {
        let agg_ctx = PartyContext {
            id: AGGREGATOR_ID,
            config: cfg.clone(),
            transport: agg_ep,
            keys: keys[0].clone(),
            pins: pins.clone(),
        };
        let agg = s.spawn(move || run_party(agg_ctx, None));
        let clients: Vec<_> = models
            .iter_mut()
            .zip(endpoints)
            .enumerate()
            .map(|(k, (model, ep))| {
                let id = client_party(k);
                let ctx = PartyContext {
                    id,
                    config: cfg.clone(),
                    transport: ep,
                    keys: keys[id as usize].clone(),
                    pins: pins.clone(),
                };
                s.spawn(move || run_party(ctx, Some(model as &mut dyn LocalModel)))
            })
            .collect();
        let join = |h: thread::ScopedJoinHandle<'_, Result<PartyReport, ProtoError>>| {
            h.join()
                .unwrap_or_else(|_| Err(ProtoError::Config("party thread panicked".into())))
        };
        let clients: Vec<Result<PartyReport, ProtoError>> = clients.into_iter().map(join).collect();
        let aggregator = join(agg)?;
        Ok(ProtocolRun {
            aggregator,
            clients: clients.into_iter().collect::<Result<_, _>>()?,
        })
    })
}
