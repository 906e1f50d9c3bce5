use adn_core::autodiff::{Tape, Tensor};
use proptest::prelude::*;

fn matrix() -> impl Strategy<Value = (usize, usize, Vec<f32>)> {
    (1usize..5, 2usize..8).prop_flat_map(|(r, c)| {
        proptest::collection::vec(-30.0f32..30.0, r * c).prop_map(move |d| (r, c, d))
    })
}

proptest! {
    #[test]
    fn log_softmax_rows_have_zero_logsumexp((r, c, d) in matrix()) {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(&[r, c], d).unwrap());
        let y = tape.log_softmax(x, 1).unwrap();
        for row in tape.value(y).data().chunks(c) {
            let lse = row.iter().map(|&v| (v as f64).exp()).sum::<f64>().ln();
            prop_assert!(lse.abs() < 1e-5, "logsumexp {lse}");
        }
    }

    #[test]
    fn kl_is_non_negative_and_zero_on_itself(
        (r, c, d) in matrix(),
        shift in proptest::collection::vec(-5.0f32..5.0, 64),
        temp in 0.5f32..4.0,
    ) {
        let t = Tensor::new(&[r, c], d.clone()).unwrap();
        let s = Tensor::new(&[r, c], d.iter().zip(shift.iter().cycle()).map(|(a, b)| a + b).collect()).unwrap();
        let mut tape = Tape::new();
        let (tv, sv) = (tape.input(t.clone()), tape.input(s));
        let kl = tape.kl_divergence(tv, sv, temp).unwrap();
        prop_assert!(tape.value(kl).data()[0] >= -1e-6);
        let same = tape.input(t);
        let zero = tape.kl_divergence(tv, same, temp).unwrap();
        prop_assert!(tape.value(zero).data()[0].abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_is_non_negative((r, c, d) in matrix(), label in 0usize..8) {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(&[r, c], d).unwrap());
        let labels = vec![label % c; r];
        let ce = tape.cross_entropy(x, &labels).unwrap();
        prop_assert!(tape.value(ce).data()[0] >= 0.0);
    }
}
