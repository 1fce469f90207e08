mod common;

use atlab_core::model::softmax_rows;
use atlab_core::objectives::{cross_entropy, kl_divergence, te_regularizer};
use proptest::prelude::*;

fn prob_rows(rows: usize, c: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-8.0f64..8.0, rows * c).prop_map(move |z| softmax_rows(&z, c))
}

proptest! {
    #[test]
    fn losses_are_non_negative(p in prob_rows(3, 4), q in prob_rows(3, 4), s in 0.0f64..0.9) {
        prop_assert!(kl_divergence(&p, &q, 3).unwrap() >= -1e-15);
        prop_assert!(te_regularizer(&p, &q, 3).unwrap() >= 0.0);
        prop_assert!(cross_entropy(&p, &[0, 1, 3], s).unwrap() >= 0.0);
    }
}
