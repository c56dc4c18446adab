//! Additively homomorphic encryption over fixed-point reals.
//!
//! Paillier with `g = n + 1`, so the plaintext space is `Z_n` and signed
//! values live in centered residues `(-n/2, n/2)`. Decryption uses the CRT
//! split over `p²` and `q²`. Ciphertexts are vectors; a scalar ciphertext is
//! a vector of length one.

mod prime;

use std::fmt;

use num_bigint::{BigInt, BigUint, RandBigInt, Sign};
use num_integer::Integer;
use num_traits::{FromPrimitive, One, Signed, ToPrimitive, Zero};
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use prime::{is_probable_prime, random_prime};

/// Smallest accepted modulus size in bits.
pub const MIN_SECURITY_BITS: u64 = 1024;
pub const DEFAULT_SECURITY_BITS: u64 = 2048;
pub const DEFAULT_FRACTION_BITS: u8 = 32;

const CT_MAGIC: &[u8; 4] = b"hev1";
const PK_MAGIC: &[u8; 4] = b"hpk1";
const TABLE_WINDOW: u32 = 4;
const TABLE_BITS: u64 = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HeError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("value does not fit the plaintext space")]
    Overflow,
    #[error("ciphertext was produced under a different key")]
    WrongKey,
    #[error("ciphertexts are under different keys")]
    KeyMismatch,
    #[error("scale mismatch: {left} vs {right} fraction bits")]
    ScaleMismatch { left: u8, right: u8 },
    #[error("expected {expected} coordinates, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("capacity check failed: {0}")]
    Capacity(String),
    #[error("malformed encoding: {0}")]
    Wire(String),
}

pub type KeyFingerprint = [u8; 8];

fn fingerprint_of(n: &BigUint) -> KeyFingerprint {
    let digest = Sha256::digest(n.to_bytes_be());
    let mut fp = [0u8; 8];
    fp.copy_from_slice(&digest[..8]);
    fp
}

#[derive(Clone, PartialEq, Eq)]
pub struct HePublicKey {
    n: BigUint,
    n_squared: BigUint,
    half_n: BigUint,
    fingerprint: KeyFingerprint,
}

impl fmt::Debug for HePublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HePublicKey({} bits, {})", self.n.bits(), hex(&self.fingerprint))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl HePublicKey {
    fn from_modulus(n: BigUint) -> Self {
        HePublicKey {
            n_squared: &n * &n,
            half_n: &n >> 1u32,
            fingerprint: fingerprint_of(&n),
            n,
        }
    }

    /// Plaintext modulus `M`.
    pub fn modulus(&self) -> &BigUint {
        &self.n
    }

    pub fn bits(&self) -> u64 {
        self.n.bits()
    }

    pub fn fingerprint(&self) -> KeyFingerprint {
        self.fingerprint
    }

    /// `"hpk1"`, 4-byte big-endian length, modulus bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.n.to_bytes_be();
        let mut out = Vec::with_capacity(8 + n.len());
        out.extend_from_slice(PK_MAGIC);
        out.extend_from_slice(&(n.len() as u32).to_be_bytes());
        out.extend_from_slice(&n);
        out
    }

    /// Parses a key and returns it with the number of bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize), HeError> {
        if bytes.len() < 8 || &bytes[..4] != PK_MAGIC {
            return Err(HeError::Wire("bad public key header".into()));
        }
        let len = u32::from_be_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let end = 8usize
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| HeError::Wire("truncated public key".into()))?;
        let n = BigUint::from_bytes_be(&bytes[8..end]);
        if n.bits() < 16 || n.is_even() {
            return Err(HeError::Wire("implausible modulus".into()));
        }
        Ok((HePublicKey::from_modulus(n), end))
    }

    fn mul(&self, a: &BigUint, b: &BigUint) -> BigUint {
        (a * b) % &self.n_squared
    }

    fn plaintext_residue(&self, m: &BigInt) -> Result<BigUint, HeError> {
        // n is odd, so |m| ≤ ⌊n/2⌋ is exactly |m| < n/2
        if m.magnitude() > &self.half_n {
            return Err(HeError::Overflow);
        }
        let r = m.mod_floor(&BigInt::from_biguint(Sign::Plus, self.n.clone()));
        Ok(r.to_biguint().expect("non-negative residue"))
    }

    fn encrypt_one<R: RngCore + CryptoRng>(&self, m: &BigInt, rng: &mut R) -> Result<BigUint, HeError> {
        let m = self.plaintext_residue(m)?;
        let r = loop {
            let r = rng.gen_biguint_below(&self.n);
            if !r.is_zero() && r.gcd(&self.n).is_one() {
                break r;
            }
        };
        let gm = (BigUint::one() + &m * &self.n) % &self.n_squared;
        Ok(self.mul(&gm, &r.modpow(&self.n, &self.n_squared)))
    }

    fn check(&self, ct: &HeCiphertext) -> Result<(), HeError> {
        if ct.fingerprint != self.fingerprint {
            return Err(HeError::KeyMismatch);
        }
        Ok(())
    }

    /// `ct^k mod n²`, inverting first for negative `k`.
    fn pow_signed(&self, ct: &BigUint, k: &BigInt) -> Result<BigUint, HeError> {
        if k.magnitude() > &self.half_n {
            return Err(HeError::Overflow);
        }
        let base = if k.is_negative() {
            self.invert(ct)?
        } else {
            ct.clone()
        };
        Ok(base.modpow(k.magnitude(), &self.n_squared))
    }

    fn invert(&self, ct: &BigUint) -> Result<BigUint, HeError> {
        ct.modinv(&self.n_squared)
            .ok_or_else(|| HeError::Wire("ciphertext is not a unit".into()))
    }
}

#[derive(Clone)]
pub struct HeSecretKey {
    public: HePublicKey,
    p: BigUint,
    q: BigUint,
    p_squared: BigUint,
    q_squared: BigUint,
    p_minus_1: BigUint,
    q_minus_1: BigUint,
    hp: BigUint,
    hq: BigUint,
    p_inv_q: BigUint,
}

impl fmt::Debug for HeSecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HeSecretKey({})", hex(&self.public.fingerprint))
    }
}

impl HeSecretKey {
    fn from_primes(p: BigUint, q: BigUint) -> Result<Self, HeError> {
        let n = &p * &q;
        let public = HePublicKey::from_modulus(n);
        let p_squared = &p * &p;
        let q_squared = &q * &q;
        let p_minus_1 = &p - 1u32;
        let q_minus_1 = &q - 1u32;
        let g = &public.n + 1u32;
        let h = |prime: &BigUint, sq: &BigUint, pm1: &BigUint| {
            let l = (g.modpow(pm1, sq) - 1u32) / prime;
            l.modinv(prime)
        };
        let bad = || HeError::InvalidParameter("degenerate primes".into());
        let hp = h(&p, &p_squared, &p_minus_1).ok_or_else(bad)?;
        let hq = h(&q, &q_squared, &q_minus_1).ok_or_else(bad)?;
        let p_inv_q = p.modinv(&q).ok_or_else(bad)?;
        Ok(HeSecretKey {
            public,
            p,
            q,
            p_squared,
            q_squared,
            p_minus_1,
            q_minus_1,
            hp,
            hq,
            p_inv_q,
        })
    }

    pub fn public(&self) -> &HePublicKey {
        &self.public
    }

    fn decrypt_one(&self, c: &BigUint) -> BigInt {
        let half = |prime: &BigUint, sq: &BigUint, pm1: &BigUint, h: &BigUint| {
            let x = (c % sq).modpow(pm1, sq);
            ((x - 1u32) / prime * h) % prime
        };
        let mp = half(&self.p, &self.p_squared, &self.p_minus_1, &self.hp);
        let mq = half(&self.q, &self.q_squared, &self.q_minus_1, &self.hq);
        // m = mp + p·((mq − mp)·p⁻¹ mod q)
        let diff = (&mq + &self.q - (&mp % &self.q)) % &self.q;
        let m = &mp + &self.p * ((diff * &self.p_inv_q) % &self.q);
        let n = &self.public.n;
        if m > self.public.half_n {
            BigInt::from_biguint(Sign::Plus, m) - BigInt::from_biguint(Sign::Plus, n.clone())
        } else {
            BigInt::from_biguint(Sign::Plus, m)
        }
    }
}

#[derive(Debug, Clone)]
pub struct HeKeyPair {
    pub pk: HePublicKey,
    pub sk: HeSecretKey,
}

impl HeKeyPair {
    /// Plaintext modulus capacity `M`.
    pub fn capacity(&self) -> &BigUint {
        self.pk.modulus()
    }
}

/// Fresh key pair with a modulus of exactly `security_bits` bits.
pub fn he_keygen<R: RngCore + CryptoRng>(security_bits: u64, rng: &mut R) -> Result<HeKeyPair, HeError> {
    if security_bits < MIN_SECURITY_BITS || security_bits % 2 != 0 {
        return Err(HeError::InvalidParameter(format!(
            "security parameter must be even and at least {MIN_SECURITY_BITS}, got {security_bits}"
        )));
    }
    keygen_bits(security_bits, rng)
}

/// Key generation without the minimum-size policy, for fast fixtures.
pub fn keygen_bits<R: RngCore + CryptoRng>(bits: u64, rng: &mut R) -> Result<HeKeyPair, HeError> {
    if bits < 64 || bits % 2 != 0 {
        return Err(HeError::InvalidParameter(format!("bad modulus size {bits}")));
    }
    loop {
        let p = random_prime(bits / 2, rng);
        let q = random_prime(bits / 2, rng);
        if p == q {
            continue;
        }
        let sk = HeSecretKey::from_primes(p, q)?;
        return Ok(HeKeyPair {
            pk: sk.public.clone(),
            sk,
        });
    }
}

/// Ciphertext vector with its scale and key fingerprint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeCiphertext {
    fingerprint: KeyFingerprint,
    scale: u8,
    coords: Vec<BigUint>,
}

impl HeCiphertext {
    pub fn fingerprint(&self) -> KeyFingerprint {
        self.fingerprint
    }

    /// Fraction bits of the encoded plaintexts.
    pub fn scale(&self) -> u8 {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Relabels the fixed-point scale without touching the ciphertexts.
    pub fn with_scale(mut self, scale: u8) -> Self {
        self.scale = scale;
        self
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(17 + self.coords.len() * 260);
        out.extend_from_slice(CT_MAGIC);
        out.extend_from_slice(&self.fingerprint);
        out.push(self.scale);
        out.extend_from_slice(&(self.coords.len() as u32).to_be_bytes());
        for c in &self.coords {
            let b = c.to_bytes_be();
            out.extend_from_slice(&(b.len() as u32).to_be_bytes());
            out.extend_from_slice(&b);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HeError> {
        let wire = |m: &str| HeError::Wire(m.to_string());
        if bytes.len() < 17 || &bytes[..4] != CT_MAGIC {
            return Err(wire("bad ciphertext header"));
        }
        let mut fingerprint = [0u8; 8];
        fingerprint.copy_from_slice(&bytes[4..12]);
        let scale = bytes[12];
        let count = u32::from_be_bytes(bytes[13..17].try_into().unwrap()) as usize;
        let mut pos = 17;
        let mut coords = Vec::with_capacity(count.min(bytes.len() / 4));
        for _ in 0..count {
            let head = bytes.get(pos..pos + 4).ok_or_else(|| wire("truncated coordinate"))?;
            let len = u32::from_be_bytes(head.try_into().unwrap()) as usize;
            pos += 4;
            let body = bytes
                .get(pos..pos.saturating_add(len))
                .ok_or_else(|| wire("truncated coordinate"))?;
            coords.push(BigUint::from_bytes_be(body));
            pos += len;
        }
        if pos != bytes.len() {
            return Err(wire("trailing bytes"));
        }
        Ok(HeCiphertext {
            fingerprint,
            scale,
            coords,
        })
    }
}

fn pow2(f: u8) -> f64 {
    2f64.powi(f as i32)
}

/// `round(r·2^f)` with ties to even.
pub fn encode_fixed(r: f64, f: u8) -> Result<i64, HeError> {
    let scaled = (r * pow2(f)).round_ties_even();
    // i64::MAX as f64 rounds up to 2^63, so the bound is exclusive
    if !scaled.is_finite() || scaled >= 9.223_372_036_854_775_808e18 || scaled < -9.223_372_036_854_775_808e18 {
        return Err(HeError::Overflow);
    }
    Ok(scaled as i64)
}

pub fn decode_fixed(i: i64, f: u8) -> f64 {
    i as f64 / pow2(f)
}

/// Checks `z_max · n_max · w_max · 2^f < M/2`.
pub fn check_capacity(pk: &HePublicKey, f: u8, z_max: u64, n_max: usize, w_max: f64) -> Result<(), HeError> {
    if !(w_max.is_finite() && w_max >= 0.0) {
        return Err(HeError::Capacity(format!("bad weight bound {w_max}")));
    }
    let w_enc = BigUint::from_f64((w_max * pow2(f)).ceil())
        .ok_or_else(|| HeError::Capacity(format!("bad weight bound {w_max}")))?
        + 1u32;
    let worst = BigUint::from(z_max) * BigUint::from(n_max) * w_enc;
    if worst >= pk.half_n {
        return Err(HeError::Capacity(format!(
            "worst case needs {} bits, modulus has {}",
            worst.bits() + 1,
            pk.bits()
        )));
    }
    Ok(())
}

pub fn henc<R: RngCore + CryptoRng>(
    pk: &HePublicKey,
    m: &BigInt,
    f: u8,
    rng: &mut R,
) -> Result<HeCiphertext, HeError> {
    henc_vector(pk, std::slice::from_ref(m), f, rng)
}

pub fn henc_vector<R: RngCore + CryptoRng>(
    pk: &HePublicKey,
    ms: &[BigInt],
    f: u8,
    rng: &mut R,
) -> Result<HeCiphertext, HeError> {
    let coords = ms
        .iter()
        .map(|m| pk.encrypt_one(m, rng))
        .collect::<Result<_, _>>()?;
    Ok(HeCiphertext {
        fingerprint: pk.fingerprint,
        scale: f,
        coords,
    })
}

/// Decrypts a scalar ciphertext to its centered residue.
pub fn hdecrypt(sk: &HeSecretKey, ct: &HeCiphertext) -> Result<BigInt, HeError> {
    if ct.len() != 1 {
        return Err(HeError::LengthMismatch {
            expected: 1,
            actual: ct.len(),
        });
    }
    Ok(hdecrypt_vector(sk, ct)?.remove(0))
}

pub fn hdecrypt_vector(sk: &HeSecretKey, ct: &HeCiphertext) -> Result<Vec<BigInt>, HeError> {
    if ct.fingerprint != sk.public.fingerprint {
        return Err(HeError::WrongKey);
    }
    Ok(ct.coords.iter().map(|c| sk.decrypt_one(c)).collect())
}

fn check_pair(pk: &HePublicKey, a: &HeCiphertext, b: &HeCiphertext) -> Result<(), HeError> {
    pk.check(a)?;
    pk.check(b)?;
    if a.scale != b.scale {
        return Err(HeError::ScaleMismatch {
            left: a.scale,
            right: b.scale,
        });
    }
    if a.len() != b.len() {
        return Err(HeError::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

/// Coordinatewise `Enc(a) ⊞ Enc(b) = Enc(a + b)`.
pub fn ct_add_vector(pk: &HePublicKey, a: &HeCiphertext, b: &HeCiphertext) -> Result<HeCiphertext, HeError> {
    check_pair(pk, a, b)?;
    Ok(HeCiphertext {
        fingerprint: a.fingerprint,
        scale: a.scale,
        coords: a.coords.iter().zip(&b.coords).map(|(x, y)| pk.mul(x, y)).collect(),
    })
}

pub fn ct_add(pk: &HePublicKey, a: &HeCiphertext, b: &HeCiphertext) -> Result<HeCiphertext, HeError> {
    ct_add_vector(pk, a, b)
}

/// Every coordinate multiplied by the plaintext `k`.
pub fn ct_scalar_mul_vector(pk: &HePublicKey, ct: &HeCiphertext, k: &BigInt) -> Result<HeCiphertext, HeError> {
    pk.check(ct)?;
    let coords = ct
        .coords
        .iter()
        .map(|c| pk.pow_signed(c, k))
        .collect::<Result<_, _>>()?;
    Ok(HeCiphertext {
        fingerprint: ct.fingerprint,
        scale: ct.scale,
        coords,
    })
}

pub fn ct_scalar_mul(pk: &HePublicKey, ct: &HeCiphertext, k: &BigInt) -> Result<HeCiphertext, HeError> {
    ct_scalar_mul_vector(pk, ct, k)
}

/// Precomputed powers of one ciphertext for many small signed exponents.
///
/// Holds `c^(j·16^w)` and the same for `c⁻¹`, so each exponent below 2^64
/// costs at most 16 modular multiplications.
pub struct PowTable {
    pos: Vec<Vec<BigUint>>,
    neg: Vec<Vec<BigUint>>,
}

impl PowTable {
    pub fn new(pk: &HePublicKey, ct: &HeCiphertext) -> Result<Self, HeError> {
        pk.check(ct)?;
        if ct.len() != 1 {
            return Err(HeError::LengthMismatch {
                expected: 1,
                actual: ct.len(),
            });
        }
        let c = &ct.coords[0];
        let inv = pk.invert(c)?;
        Ok(PowTable {
            pos: Self::build(pk, c),
            neg: Self::build(pk, &inv),
        })
    }

    fn build(pk: &HePublicKey, base: &BigUint) -> Vec<Vec<BigUint>> {
        let windows = (TABLE_BITS as u32).div_ceil(TABLE_WINDOW);
        let size = 1usize << TABLE_WINDOW;
        let mut out = Vec::with_capacity(windows as usize);
        let mut b = base.clone();
        for _ in 0..windows {
            let mut row = Vec::with_capacity(size);
            row.push(BigUint::one());
            for j in 1..size {
                let next = pk.mul(&row[j - 1], &b);
                row.push(next);
            }
            b = pk.mul(&row[size - 1], &b);
            out.push(row);
        }
        out
    }

    fn pow(&self, pk: &HePublicKey, k: i64) -> BigUint {
        let table = if k < 0 { &self.neg } else { &self.pos };
        let mut e = k.unsigned_abs();
        let mask = (1u64 << TABLE_WINDOW) - 1;
        let mut acc: Option<BigUint> = None;
        for row in table {
            if e == 0 {
                break;
            }
            let digit = (e & mask) as usize;
            e >>= TABLE_WINDOW;
            if digit != 0 {
                acc = Some(match acc {
                    Some(a) => pk.mul(&a, &row[digit]),
                    None => row[digit].clone(),
                });
            }
        }
        acc.unwrap_or_else(BigUint::one)
    }
}

/// Multiplies the scalar ciphertext `ct` by each plaintext in `ks`,
/// producing one coordinate per entry.
pub fn ct_broadcast_mul(pk: &HePublicKey, ct: &HeCiphertext, ks: &[i64]) -> Result<HeCiphertext, HeError> {
    let table = PowTable::new(pk, ct)?;
    Ok(HeCiphertext {
        fingerprint: ct.fingerprint,
        scale: ct.scale,
        coords: ks.iter().map(|&k| table.pow(pk, k)).collect(),
    })
}

/// Converts a decrypted value to `f64`, saturating to infinity if huge.
pub fn bigint_to_f64(v: &BigInt) -> f64 {
    v.to_f64().unwrap_or(if v.is_negative() { f64::NEG_INFINITY } else { f64::INFINITY })
}
