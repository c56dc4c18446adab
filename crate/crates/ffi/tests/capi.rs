use std::ffi::CString;
use std::ptr;

use fedscdg_ffi::*;

const TRACES: &str = "call 0 open 0x401000 ret=s:fd args=c:/etc/passwd\n\
                      call 1 read 0x401010 ret= args=s:fd\n\
                      call 2 close 0x401020 ret= args=s:fd\n";

const MODEL: &str = "state 0 emit open 0x10 ret=fresh args=lit:x\n\
                     state 1 emit read 0x20 ret=fresh args=from:0.ret\n\
                     state 2 emit write 0x30 ret=fresh args=from:0.ret\n\
                     succ 0 1 2\n";

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    let n = unsafe { fgs_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn test_scdg_from_traces_counts_and_serializes() {
    let text = CString::new(TRACES).unwrap();
    let mut g = ptr::null_mut();
    unsafe {
        assert_eq!(fgs_scdg_from_traces(text.as_ptr(), &mut g), FgsStatus::Ok);
        assert_eq!(fgs_scdg_node_count(g), 3);
        assert_eq!(fgs_scdg_edge_count(g), 3);

        let mut need = 0;
        assert_eq!(fgs_scdg_serialize(g, ptr::null_mut(), 0, &mut need), FgsStatus::BufferTooSmall);
        let mut buf = vec![0u8; need];
        let mut written = 0;
        assert_eq!(fgs_scdg_serialize(g, buf.as_mut_ptr(), buf.len(), &mut written), FgsStatus::Ok);
        assert_eq!(written, need);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("scdg v1\nnodes 3\n"));
        fgs_scdg_free(g);
    }
}

#[test]
fn test_parse_error_sets_message() {
    let text = CString::new("call 0 open").unwrap();
    let mut g = ptr::null_mut();
    let status = unsafe { fgs_scdg_from_traces(text.as_ptr(), &mut g) };
    assert_eq!(status, FgsStatus::Parse);
    assert!(g.is_null());
    assert!(last_error().contains("line 1"));
}

#[test]
fn test_null_arguments_are_rejected() {
    let mut g = ptr::null_mut();
    unsafe {
        assert_eq!(fgs_scdg_from_traces(ptr::null(), &mut g), FgsStatus::NullPointer);
        assert_eq!(fgs_scdg_node_count(ptr::null()), 0);
        fgs_scdg_free(ptr::null_mut());
        fgs_ciphertext_free(ptr::null_mut());
        fgs_he_keypair_free(ptr::null_mut());
        let mut out = 0;
        assert_eq!(fgs_scdg_serialize(ptr::null(), ptr::null_mut(), 0, &mut out), FgsStatus::NullPointer);
    }
}

#[test]
fn test_extract_strategies() {
    let model = CString::new(MODEL).unwrap();
    for strategy in 0..3 {
        let mut g = ptr::null_mut();
        unsafe {
            assert_eq!(fgs_extract(model.as_ptr(), strategy, 64, 8, 8, &mut g), FgsStatus::Ok);
            assert_eq!(fgs_scdg_node_count(g), 3);
            fgs_scdg_free(g);
        }
    }
    let mut g = ptr::null_mut();
    unsafe {
        assert_eq!(fgs_extract(model.as_ptr(), 7, 64, 8, 8, &mut g), FgsStatus::InvalidArgument);
        assert_eq!(fgs_extract(model.as_ptr(), 0, 0, 8, 8, &mut g), FgsStatus::InvalidArgument);
    }
}

#[test]
fn test_he_roundtrip_and_homomorphism() {
    let mut kp = ptr::null_mut();
    unsafe {
        assert_eq!(fgs_he_keygen(512, 1, &mut kp), FgsStatus::InvalidArgument);
        assert_eq!(fgs_he_keygen(1024, 1, &mut kp), FgsStatus::Ok);

        let (mut a, mut b, mut sum, mut scaled) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(fgs_he_encrypt(kp, -1234, 10, &mut a), FgsStatus::Ok);
        assert_eq!(fgs_he_encrypt(kp, 5000, 11, &mut b), FgsStatus::Ok);
        assert_eq!(fgs_he_add(kp, a, b, &mut sum), FgsStatus::Ok);
        assert_eq!(fgs_he_scalar_mul(kp, a, -3, &mut scaled), FgsStatus::Ok);

        let mut m = 0;
        assert_eq!(fgs_he_decrypt(kp, a, &mut m), FgsStatus::Ok);
        assert_eq!(m, -1234);
        assert_eq!(fgs_he_decrypt(kp, sum, &mut m), FgsStatus::Ok);
        assert_eq!(m, 3766);
        assert_eq!(fgs_he_decrypt(kp, scaled, &mut m), FgsStatus::Ok);
        assert_eq!(m, 3702);

        let mut big = ptr::null_mut();
        assert_eq!(fgs_he_scalar_mul(kp, b, i64::MAX, &mut big), FgsStatus::Ok);
        assert_eq!(fgs_he_decrypt(kp, big, &mut m), FgsStatus::Overflow);

        for ct in [a, b, sum, scaled, big] {
            fgs_ciphertext_free(ct);
        }
        fgs_he_keypair_free(kp);
    }
}

#[test]
fn test_fixed_point_roundtrip() {
    let mut i = 0;
    unsafe {
        assert_eq!(fgs_fixed_encode(1.5, 32, &mut i), FgsStatus::Ok);
        assert_eq!(i, 3 << 31);
        assert_eq!(fgs_fixed_encode(f64::NAN, 32, &mut i), FgsStatus::Overflow);
        assert_eq!(fgs_fixed_encode(1e300, 32, &mut i), FgsStatus::Overflow);
    }
    assert_eq!(fgs_fixed_decode(3 << 31, 32), 1.5);
}

#[test]
fn test_frame_encode_layout() {
    let payload = [0xAAu8, 0xBB];
    let mut buf = [0u8; 32];
    let mut n = 0;
    let status = unsafe { fgs_frame_encode(4, 7, 2, payload.as_ptr(), 2, buf.as_mut_ptr(), buf.len(), &mut n) };
    assert_eq!(status, FgsStatus::Ok);
    assert_eq!(&buf[..n], &[0, 0, 0, 9, 4, 0, 0, 0, 7, 0, 2, 0xAA, 0xBB]);
    let status = unsafe { fgs_frame_encode(0, 7, 2, ptr::null(), 0, buf.as_mut_ptr(), buf.len(), &mut n) };
    assert_eq!(status, FgsStatus::InvalidArgument);
}

#[test]
fn test_accuracy() {
    let y = [1usize, 2, 3, 4];
    let y_hat = [1usize, 2, 0, 4];
    let mut acc = 0.0;
    unsafe {
        assert_eq!(fgs_accuracy(y.as_ptr(), y_hat.as_ptr(), 4, &mut acc), FgsStatus::Ok);
        assert_eq!(acc, 0.75);
        assert_eq!(fgs_accuracy(y.as_ptr(), y_hat.as_ptr(), 0, &mut acc), FgsStatus::InvalidArgument);
    }
}

#[test]
fn test_header_declares_every_function() {
    let header = include_str!("../include/fedscdg.h");
    for name in [
        "fgs_last_error",
        "fgs_scdg_from_traces",
        "fgs_extract",
        "fgs_scdg_serialize",
        "fgs_he_keygen",
        "fgs_he_encrypt",
        "fgs_he_decrypt",
        "fgs_he_add",
        "fgs_he_scalar_mul",
        "fgs_fixed_encode",
        "fgs_fixed_decode",
        "fgs_frame_encode",
        "fgs_accuracy",
        "FGS_STATUS_BUFFER_TOO_SMALL",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
