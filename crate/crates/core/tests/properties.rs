use proptest::prelude::*;

use puf_moe::dataset::{decode_crpb, encode_crpb, transform_challenge, Challenge, CrpMeta, CrpSet, Origin, CRPB_HEADER_LEN};
use puf_moe::nn::{softmax, sparse_softmax};

fn logits() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0f64..30.0, 1..16)
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, x)| if *x > v[best] { i } else { best })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn sparse_softmax_properties(z in logits(), tau in prop_oneof![Just(1e-4), 0.0f64..0.2]) {
        let k = z.len() as f64;
        let g = sparse_softmax(&z, tau);
        prop_assert!(g.iter().all(|&v| v >= 0.0));
        prop_assert!(g.iter().all(|&v| v == 0.0 || v >= tau));
        let sum: f64 = g.iter().sum();
        prop_assert!(sum <= 1.0 + 1e-12 && sum >= 1.0 - k * tau - 1e-12, "sum {sum}");
        prop_assert_eq!(argmax(&g), argmax(&softmax(&z)));
        prop_assert!(g[argmax(&z)] > 0.0);
    }

    #[test]
    fn sparse_softmax_without_threshold_is_softmax(z in logits()) {
        prop_assert_eq!(sparse_softmax(&z, 0.0), softmax(&z));
    }

    #[test]
    fn transform_matches_suffix_products(c in prop::collection::vec(0u8..2, 1..80)) {
        let x = transform_challenge(&Challenge::new(c.clone()).unwrap()).0;
        for i in 0..c.len() {
            let p: f64 = c[i..].iter().map(|&b| 1.0 - 2.0 * f64::from(b)).product();
            prop_assert_eq!(x[i], p);
        }
    }

    #[test]
    fn flipping_last_bit_negates_every_feature(mut c in prop::collection::vec(0u8..2, 1..80)) {
        let x = transform_challenge(&Challenge::new(c.clone()).unwrap()).0;
        let last = c.len() - 1;
        c[last] ^= 1;
        let y = transform_challenge(&Challenge::new(c).unwrap()).0;
        prop_assert!(x.iter().zip(&y).all(|(a, b)| *a == -*b));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn crpb_round_trip_is_bit_exact(n in 1usize..70, tasks in 1usize..12, rows in 0usize..40, seed in any::<u64>()) {
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) & 1) as u8
        };
        let mut set = CrpSet::new(n, tasks, CrpMeta::with_origin(Origin::Simulated)).unwrap();
        for _ in 0..rows {
            let c: Vec<u8> = (0..n).map(|_| next()).collect();
            let r: Vec<u8> = (0..tasks).map(|_| next()).collect();
            set.push(&c, &r).unwrap();
        }
        let bytes = encode_crpb(&set);
        prop_assert_eq!(bytes.len(), CRPB_HEADER_LEN + rows * (n.div_ceil(8) + tasks.div_ceil(8)));
        let back = decode_crpb(&bytes).unwrap();
        prop_assert_eq!(back.len(), rows);
        for i in 0..rows {
            prop_assert_eq!(back.challenge_bytes(i), set.challenge_bytes(i));
            prop_assert_eq!(back.responses(i), set.responses(i));
        }
        prop_assert_eq!(encode_crpb(&back), bytes);
    }
}
