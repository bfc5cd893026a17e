mod common;

use common::{conv_report, naive_conv};
use cryptostock::tensor::{conv_output_len, Tape, Tensor};
use proptest::prelude::*;

#[test]
fn thousand_random_configs_match_direct_sum() {
    let r = conv_report(1000, 42);
    assert_eq!(r.configs, 1000);
    assert_eq!(r.length_failures, 0);
    assert!(r.max_abs < 1e-5, "max abs error {}", r.max_abs);
}

proptest! {
    #[test]
    fn output_length_follows_floor_formula(l in 1usize..200, k in 1usize..12, s in 1usize..5, o in 0usize..5) {
        let got = conv_output_len(l, k, s, o);
        if k > l + 2 * o {
            prop_assert_eq!(got, None);
        } else {
            prop_assert_eq!(got, Some((l + 2 * o - k) / s + 1));
        }
    }

    #[test]
    fn single_channel_matches_oracle(x in prop::collection::vec(-1.0f32..1.0, 3..30), w in prop::collection::vec(-1.0f32..1.0, 1..4), s in 1usize..3) {
        let (l, k) = (x.len(), w.len());
        let mut tape = Tape::<f32>::new();
        let xv = tape.constant(Tensor::new(&[1, 1, l], x.clone()).unwrap());
        let wv = tape.constant(Tensor::new(&[1, 1, k], w.clone()).unwrap());
        let bv = tape.constant(Tensor::new(&[1], vec![0.0]).unwrap());
        let y = tape.conv1d(xv, wv, bv, s, 0).unwrap();
        let oracle = naive_conv(&x, 1, 1, l, &w, 1, k, &[0.0], s, 0);
        prop_assert_eq!(tape.value(y).len(), oracle.len());
        for (a, e) in tape.value(y).data().iter().zip(&oracle) {
            prop_assert!((a - e).abs() < 1e-5);
        }
    }
}
