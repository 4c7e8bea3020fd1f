use acc_tensor::{Tape, Tensor};
use proptest::prelude::*;

fn matrix() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..6, 2usize..8).prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(-50.0f64..50.0, r * c)))
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one((r, c, data) in matrix()) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(&[r, c], data).unwrap());
        let y = tape.softmax(x);
        for i in 0..r {
            let row = tape.value(y).row(i);
            prop_assert!(row.iter().all(|v| *v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_standardizes((r, c, data) in matrix()) {
        let spread = |row: &[f64]| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - row.iter().cloned().fold(f64::INFINITY, f64::min);
        let t = Tensor::new(&[r, c], data).unwrap();
        prop_assume!((0..r).all(|i| spread(t.row(i)) > 1e-3));
        let mut tape = Tape::new();
        let x = tape.constant(t);
        let g = tape.constant(Tensor::ones(&[c]));
        let b = tape.constant(Tensor::zeros(&[c]));
        // eps = 0 isolates the normalization itself
        let y = tape.layer_norm(x, g, b, 0.0).unwrap();
        for i in 0..r {
            let row = tape.value(y).row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn eval_dropout_is_identity((r, c, data) in matrix(), key in any::<u64>()) {
        let mut tape = Tape::inference();
        let x = tape.constant(Tensor::new(&[r, c], data).unwrap());
        let y = tape.dropout(x, 0.0, key).unwrap();
        prop_assert_eq!(tape.value(x), tape.value(y));
    }
}
