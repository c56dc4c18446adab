mod common;

use common::*;
use fedscdg::explorer::{explore, Budget, Strategy};
use fedscdg::fedproto::{fedavg, vote_key_client};
use fedscdg::he::{
    ct_add, ct_add_vector, ct_scalar_mul, decode_fixed, encode_fixed, hdecrypt, hdecrypt_vector, henc, henc_vector,
    keygen_bits, HeKeyPair,
};
use fedscdg::neuralnet::ModelDims;
use fedscdg::scdg::{build_scdg, deserialize_scdg, ExecutionTrace};
use num_bigint::BigInt;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::sync::OnceLock;

fn keys() -> &'static HeKeyPair {
    static KEYS: OnceLock<HeKeyPair> = OnceLock::new();
    KEYS.get_or_init(|| keygen_bits(256, &mut ChaCha20Rng::seed_from_u64(7)).unwrap())
}

fn generous() -> Budget {
    Budget::new(100_000, 64, 10_000).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn prop_scdg_matches_brute_force(seed in any::<u64>(), n_traces in 1usize..4) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let traces: Vec<ExecutionTrace> = (0..n_traces).map(|_| random_trace(&mut rng, 20)).collect();
        let g = build_scdg(&traces);
        prop_assert_eq!(&g, &brute_force_scdg(&traces));
        prop_assert_eq!(deserialize_scdg(&g.serialize()).unwrap(), g);
    }

    #[test]
    fn prop_scdg_independent_of_trace_order(seed in any::<u64>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut traces: Vec<ExecutionTrace> = (0..3).map(|_| random_trace(&mut rng, 12)).collect();
        let g = build_scdg(&traces);
        traces.reverse();
        prop_assert_eq!(build_scdg(&traces), g);
    }

    #[test]
    fn prop_bfs_matches_path_enumeration(seed in any::<u64>()) {
        let model = random_dag(&mut ChaCha20Rng::seed_from_u64(seed), 8);
        let got: Vec<Canonical> = explore(&model, Strategy::Bfs, generous())
            .unwrap()
            .iter()
            .map(|t| canonical(t.events()))
            .collect();
        let expected = bfs_order(&model);
        prop_assert_eq!(&got, &expected);

        let k = (expected.len() + 1) / 2;
        let limited = explore(&model, Strategy::Bfs, Budget::new(100_000, 64, k).unwrap()).unwrap();
        let limited: Vec<Canonical> = limited.iter().map(|t| canonical(t.events())).collect();
        prop_assert_eq!(&limited[..], &expected[..k]);
    }

    #[test]
    fn prop_cbfs_one_shortest_path_per_terminal(seed in any::<u64>()) {
        let model = random_dag(&mut ChaCha20Rng::seed_from_u64(seed), 8);
        let traces = explore(&model, Strategy::Cbfs, generous()).unwrap();
        prop_assert_eq!(check_cbfs(&model, &traces), Ok(()));
    }

    #[test]
    fn prop_cdfs_longest_first(seed in any::<u64>(), k in 1usize..6) {
        let model = random_dag(&mut ChaCha20Rng::seed_from_u64(seed), 8);
        let all = explore(&model, Strategy::Cdfs, generous()).unwrap();
        let got: Vec<Canonical> = all.iter().map(|t| canonical(t.events())).collect();
        prop_assert_eq!(&got, &cdfs_order(&model));

        let limited = explore(&model, Strategy::Cdfs, Budget::new(100_000, 64, k).unwrap()).unwrap();
        let first = limited[0].len();
        prop_assert!(limited.iter().all(|t| t.len() <= first));
    }

    #[test]
    fn prop_fixed_point_round_trip(r in -1e6f64..1e6, f in 1u8..=32) {
        let i = encode_fixed(r, f).unwrap();
        prop_assert!((decode_fixed(i, f) - r).abs() <= 2f64.powi(-(f as i32) - 1) * (1.0 + 1e-9));
    }

    #[test]
    fn prop_vote_in_range(round in 1u32..1000, n in 1usize..10, seed in any::<u64>()) {
        prop_assert!(vote_key_client(round, n, seed) < n);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prop_he_add_and_scalar(a in any::<i64>(), b in any::<i64>(), k in any::<i32>(), seed in any::<u64>()) {
        let kp = keys();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (a, b, k) = (BigInt::from(a), BigInt::from(b), BigInt::from(k));
        let ea = henc(&kp.pk, &a, 0, &mut rng).unwrap();
        let eb = henc(&kp.pk, &b, 0, &mut rng).unwrap();
        prop_assert_eq!(hdecrypt(&kp.sk, &ct_add(&kp.pk, &ea, &eb).unwrap()).unwrap(), &a + &b);
        prop_assert_eq!(hdecrypt(&kp.sk, &ct_scalar_mul(&kp.pk, &ea, &k).unwrap()).unwrap(), &a * &k);
    }

    #[test]
    fn prop_he_vector_sum(xs in prop::collection::vec(any::<i32>(), 1..16), seed in any::<u64>()) {
        let kp = keys();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let ms: Vec<BigInt> = xs.iter().map(|&x| BigInt::from(x)).collect();
        let ct = henc_vector(&kp.pk, &ms, 0, &mut rng).unwrap();
        let doubled = ct_add_vector(&kp.pk, &ct, &ct).unwrap();
        let expected: Vec<BigInt> = ms.iter().map(|m| m * 2).collect();
        prop_assert_eq!(hdecrypt_vector(&kp.sk, &doubled).unwrap(), expected);
    }
}

#[test]
fn test_masked_average_matches_mean() {
    let mut rng = ChaCha20Rng::seed_from_u64(21);
    for _ in 0..5 {
        let (_, _, worst) = masked_average_trial(keys(), &mut rng, 32);
        assert!(worst <= 0.5, "deviation {worst} units");
    }
}

#[test]
fn test_fedavg_matches_hand_computed_mean() {
    let got = fedavg(&[vec![1.0, -2.0], vec![3.0, 4.0], vec![-1.0, 1.0]]).unwrap();
    assert_eq!(got, vec![1.0, 1.0]);
}

#[test]
fn test_gradient_matches_finite_differences() {
    let worst = gradient_check(ModelDims::new(6, 8, 3), 5, 1e-5, 1e-6);
    assert!(worst < 1e-4, "relative error {worst}");
}
