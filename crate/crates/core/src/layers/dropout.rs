use rand::Rng;

use super::Phase;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tape, Tensor, Var};

/// Inverted dropout. Survivors are scaled by `1/(1-rate)` so evaluation is the
/// identity. Each element is dropped independently with probability `rate`.
pub fn dropout<T: Float>(
    tape: &mut Tape<'_, T>,
    x: Var,
    rate: f64,
    phase: Phase,
    rng: &mut impl Rng,
) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    if phase == Phase::Eval || rate == 0.0 {
        return Ok(x);
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let shape = tape.shape(x).to_vec();
    let mask = Tensor::from_fn(&shape, |_| if rng.gen::<f64>() < rate { T::zero() } else { keep });
    let m = tape.constant(mask);
    tape.mul(x, m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn survivor_statistics() {
        let mut rng = crate::rng::stream(11, "dropout-test", 0);
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[100_000], 1.0));
        let y = dropout(&mut tape, x, 0.5, Phase::Train, &mut rng).unwrap();
        let v = tape.value(y).data();
        let survivors = v.iter().filter(|&&e| e != 0.0).count() as f64 / v.len() as f64;
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!((survivors - 0.5).abs() <= 0.01, "survivor fraction {survivors}");
        assert!((mean - 1.0).abs() <= 0.02, "mean {mean}");
        assert!(v.iter().all(|&e| e == 0.0 || e == 2.0));
    }

    #[test]
    fn eval_and_zero_rate_are_identity() {
        let mut rng = crate::rng::stream(0, "dropout-test", 1);
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn(&[10], |i| i as f64));
        assert_eq!(dropout(&mut tape, x, 0.7, Phase::Eval, &mut rng).unwrap(), x);
        assert_eq!(dropout(&mut tape, x, 0.0, Phase::Train, &mut rng).unwrap(), x);
    }

    #[test]
    fn rate_of_one_is_rejected() {
        let mut rng = crate::rng::stream(0, "dropout-test", 2);
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[3]));
        for bad in [1.0, 1.5, -0.1] {
            assert!(matches!(
                dropout(&mut tape, x, bad, Phase::Train, &mut rng),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn same_seed_same_mask() {
        let run = || {
            let mut rng = crate::rng::stream(3, "dropout-test", 9);
            let mut tape = Tape::<f32>::new();
            let x = tape.constant(Tensor::full(&[64], 1.0));
            let y = dropout(&mut tape, x, 0.3, Phase::Train, &mut rng).unwrap();
            tape.value(y).clone()
        };
        assert_eq!(run(), run());
    }
}
