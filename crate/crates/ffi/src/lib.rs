//! C ABI over the fedscdg core: graph extraction, homomorphic encryption,
//! frame encoding and the accuracy metric.
//!
//! Every fallible function returns an [`FgsStatus`]; on failure a message is
//! kept per thread and can be copied out with [`fgs_last_error`]. Objects are
//! opaque handles created by `*_new`-style functions and released with the
//! matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fedscdg::channel::{frame_encode, MessageType};
use fedscdg::explorer::{explore, parse_model, Budget, Strategy};
use fedscdg::harness::accuracy;
use fedscdg::he::{ct_add, ct_scalar_mul, decode_fixed, encode_fixed, hdecrypt, he_keygen, henc, HeCiphertext, HeKeyPair};
use fedscdg::scdg::{build_scdg, parse_traces, Scdg};
use num_bigint::BigInt;
use num_traits::ToPrimitive;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FgsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Crypto = 4,
    BufferTooSmall = 5,
    Overflow = 6,
    Panic = 7,
}

/// Extracted system call dependency graph.
pub struct FgsScdg(Scdg);

/// Homomorphic key pair.
pub struct FgsHeKeyPair(HeKeyPair);

/// Homomorphic ciphertext of one or more coordinates.
pub struct FgsCiphertext(HeCiphertext);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: FgsStatus, msg: impl Into<String>) -> FgsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
    status
}

/// Runs `f`, converting a panic into [`FgsStatus::Panic`].
fn guard(f: impl FnOnce() -> FgsStatus) -> FgsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(FgsStatus::Panic, "internal panic"),
    }
}

unsafe fn c_str<'a>(p: *const c_char) -> Result<&'a str, FgsStatus> {
    if p.is_null() {
        return Err(fail(FgsStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(FgsStatus::InvalidArgument, "string is not UTF-8"))
}

/// Copies `bytes` into `buf`, always reporting the full size in `written`.
unsafe fn copy_out(bytes: &[u8], buf: *mut u8, cap: usize, written: *mut usize) -> FgsStatus {
    if written.is_null() {
        return fail(FgsStatus::NullPointer, "null length pointer");
    }
    *written = bytes.len();
    if bytes.len() > cap {
        return fail(FgsStatus::BufferTooSmall, format!("need {} bytes", bytes.len()));
    }
    if !bytes.is_empty() {
        if buf.is_null() {
            return fail(FgsStatus::NullPointer, "null output buffer");
        }
        ptr::copy_nonoverlapping(bytes.as_ptr(), buf, bytes.len());
    }
    FgsStatus::Ok
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> FgsStatus {
    if out.is_null() {
        return fail(FgsStatus::NullPointer, "null output handle");
    }
    *out = Box::into_raw(Box::new(value));
    FgsStatus::Ok
}

macro_rules! try_ffi {
    ($e:expr, $status:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return fail($status, e.to_string()),
        }
    };
}

macro_rules! deref {
    ($p:expr) => {
        match $p.as_ref() {
            Some(v) => v,
            None => return fail(FgsStatus::NullPointer, "null handle"),
        }
    };
}

/// Copies the last error message of this thread, NUL-terminated, into
/// `buf`. Returns the message length without the terminator.
///
/// # Safety
/// `buf` must point to `cap` writable bytes or be null with `cap == 0`.
#[no_mangle]
pub unsafe extern "C" fn fgs_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Builds a graph from trace text (`call ...` lines, traces separated by
/// `end`).
///
/// # Safety
/// `traces` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fgs_scdg_from_traces(traces: *const c_char, out: *mut *mut FgsScdg) -> FgsStatus {
    guard(|| {
        let text = match c_str(traces) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let traces = try_ffi!(parse_traces(text), FgsStatus::Parse);
        emit(out, FgsScdg(build_scdg(&traces)))
    })
}

/// Explores a program model with strategy 0 = BFS, 1 = CBFS, 2 = CDFS and
/// builds the graph of the recorded traces.
///
/// # Safety
/// `model` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fgs_extract(
    model: *const c_char,
    strategy: u32,
    max_states: usize,
    max_trace_length: usize,
    max_traces: usize,
    out: *mut *mut FgsScdg,
) -> FgsStatus {
    guard(|| {
        let text = match c_str(model) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let strategy = match strategy {
            0 => Strategy::Bfs,
            1 => Strategy::Cbfs,
            2 => Strategy::Cdfs,
            s => return fail(FgsStatus::InvalidArgument, format!("unknown strategy {s}")),
        };
        let budget = try_ffi!(
            Budget::new(max_states, max_trace_length, max_traces),
            FgsStatus::InvalidArgument
        );
        let model = try_ffi!(parse_model(text), FgsStatus::Parse);
        let traces = try_ffi!(explore(&model, strategy, budget), FgsStatus::InvalidArgument);
        emit(out, FgsScdg(build_scdg(&traces)))
    })
}

/// # Safety
/// `g` must be a handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn fgs_scdg_node_count(g: *const FgsScdg) -> usize {
    g.as_ref().map_or(0, |g| g.0.node_count())
}

/// # Safety
/// `g` must be a handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn fgs_scdg_edge_count(g: *const FgsScdg) -> usize {
    g.as_ref().map_or(0, |g| g.0.edge_count())
}

/// Writes the text form (not NUL-terminated). `written` receives the full
/// size even when the buffer is too small.
///
/// # Safety
/// `g` must be a valid handle, `buf` must hold `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn fgs_scdg_serialize(
    g: *const FgsScdg,
    buf: *mut u8,
    cap: usize,
    written: *mut usize,
) -> FgsStatus {
    guard(|| {
        let g = deref!(g);
        copy_out(g.0.serialize().as_bytes(), buf, cap, written)
    })
}

/// # Safety
/// `g` must be a handle from this library, freed at most once, or null.
#[no_mangle]
pub unsafe extern "C" fn fgs_scdg_free(g: *mut FgsScdg) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Generates a key pair with a `security_bits`-bit modulus from `seed`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fgs_he_keygen(security_bits: u64, seed: u64, out: *mut *mut FgsHeKeyPair) -> FgsStatus {
    guard(|| {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let kp = try_ffi!(he_keygen(security_bits, &mut rng), FgsStatus::InvalidArgument);
        emit(out, FgsHeKeyPair(kp))
    })
}

/// # Safety
/// `kp` must be a handle from this library, freed at most once, or null.
#[no_mangle]
pub unsafe extern "C" fn fgs_he_keypair_free(kp: *mut FgsHeKeyPair) {
    if !kp.is_null() {
        drop(Box::from_raw(kp));
    }
}

/// Encrypts the integer `m`.
///
/// # Safety
/// `kp` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fgs_he_encrypt(
    kp: *const FgsHeKeyPair,
    m: i64,
    seed: u64,
    out: *mut *mut FgsCiphertext,
) -> FgsStatus {
    guard(|| {
        let kp = deref!(kp);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let ct = try_ffi!(henc(&kp.0.pk, &BigInt::from(m), 0, &mut rng), FgsStatus::Crypto);
        emit(out, FgsCiphertext(ct))
    })
}

/// Decrypts to a signed integer; [`FgsStatus::Overflow`] if it does not fit.
///
/// # Safety
/// `kp` and `ct` must be valid handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fgs_he_decrypt(kp: *const FgsHeKeyPair, ct: *const FgsCiphertext, out: *mut i64) -> FgsStatus {
    guard(|| {
        let kp = deref!(kp);
        let ct = deref!(ct);
        if out.is_null() {
            return fail(FgsStatus::NullPointer, "null output");
        }
        let m = try_ffi!(hdecrypt(&kp.0.sk, &ct.0), FgsStatus::Crypto);
        match m.to_i64() {
            Some(v) => {
                *out = v;
                FgsStatus::Ok
            }
            None => fail(FgsStatus::Overflow, "plaintext does not fit in 64 bits"),
        }
    })
}

/// `Enc(a + b)` from `Enc(a)` and `Enc(b)`.
///
/// # Safety
/// All handles must be valid and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fgs_he_add(
    kp: *const FgsHeKeyPair,
    a: *const FgsCiphertext,
    b: *const FgsCiphertext,
    out: *mut *mut FgsCiphertext,
) -> FgsStatus {
    guard(|| {
        let (kp, a, b) = (deref!(kp), deref!(a), deref!(b));
        let ct = try_ffi!(ct_add(&kp.0.pk, &a.0, &b.0), FgsStatus::Crypto);
        emit(out, FgsCiphertext(ct))
    })
}

/// `Enc(k * a)` from `Enc(a)`.
///
/// # Safety
/// All handles must be valid and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fgs_he_scalar_mul(
    kp: *const FgsHeKeyPair,
    a: *const FgsCiphertext,
    k: i64,
    out: *mut *mut FgsCiphertext,
) -> FgsStatus {
    guard(|| {
        let (kp, a) = (deref!(kp), deref!(a));
        let ct = try_ffi!(ct_scalar_mul(&kp.0.pk, &a.0, &BigInt::from(k)), FgsStatus::Crypto);
        emit(out, FgsCiphertext(ct))
    })
}

/// # Safety
/// `ct` must be a handle from this library, freed at most once, or null.
#[no_mangle]
pub unsafe extern "C" fn fgs_ciphertext_free(ct: *mut FgsCiphertext) {
    if !ct.is_null() {
        drop(Box::from_raw(ct));
    }
}

/// `round(r * 2^f)` with ties to even.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fgs_fixed_encode(r: f64, f: u8, out: *mut i64) -> FgsStatus {
    if out.is_null() {
        return fail(FgsStatus::NullPointer, "null output");
    }
    *out = try_ffi!(encode_fixed(r, f), FgsStatus::Overflow);
    FgsStatus::Ok
}

#[no_mangle]
pub extern "C" fn fgs_fixed_decode(i: i64, f: u8) -> f64 {
    decode_fixed(i, f)
}

/// Encodes one frame; `msg_type` is the wire code (1..=9).
///
/// # Safety
/// `payload` must hold `payload_len` bytes (or be null when it is 0) and
/// `buf` must hold `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn fgs_frame_encode(
    msg_type: u8,
    round: u32,
    sender: u16,
    payload: *const u8,
    payload_len: usize,
    buf: *mut u8,
    cap: usize,
    written: *mut usize,
) -> FgsStatus {
    guard(|| {
        let ty = try_ffi!(MessageType::from_code(msg_type), FgsStatus::InvalidArgument);
        let payload = if payload_len == 0 {
            &[][..]
        } else if payload.is_null() {
            return fail(FgsStatus::NullPointer, "null payload");
        } else {
            std::slice::from_raw_parts(payload, payload_len)
        };
        let bytes = try_ffi!(frame_encode(ty, round, sender, payload), FgsStatus::InvalidArgument);
        copy_out(&bytes, buf, cap, written)
    })
}

/// Fraction of equal labels.
///
/// # Safety
/// `y` and `y_hat` must each hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn fgs_accuracy(y: *const usize, y_hat: *const usize, n: usize, out: *mut f64) -> FgsStatus {
    if y.is_null() || y_hat.is_null() || out.is_null() {
        return fail(FgsStatus::NullPointer, "null argument");
    }
    let y = std::slice::from_raw_parts(y, n);
    let y_hat = std::slice::from_raw_parts(y_hat, n);
    *out = try_ffi!(accuracy(y, y_hat), FgsStatus::InvalidArgument);
    FgsStatus::Ok
}
